#pragma once

#include <cstddef>
#include <cstdlib>
#include <new>

namespace pffnet {

// Process-wide accounting of bytes held by tensors and convolution workspaces.
// Used to check the inference memory estimator against what actually gets allocated.
class MemoryTracker {
public:
    static void on_alloc(std::size_t bytes) noexcept;
    static void on_free(std::size_t bytes) noexcept;

    static std::size_t current() noexcept;
    static std::size_t peak() noexcept;
    // Sets peak to the current live byte count.
    static void reset_peak() noexcept;
};

template <typename T>
struct TrackedAllocator {
    using value_type = T;

    TrackedAllocator() noexcept = default;
    template <typename U>
    TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        auto* p = static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{64}));
        MemoryTracker::on_alloc(n * sizeof(T));
        return p;
    }

    void deallocate(T* p, std::size_t n) noexcept {
        MemoryTracker::on_free(n * sizeof(T));
        ::operator delete(p, std::align_val_t{64});
    }

    template <typename U>
    bool operator==(const TrackedAllocator<U>&) const noexcept { return true; }
};

}  // namespace pffnet
