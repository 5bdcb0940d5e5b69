#include "pffnet/memory.hpp"

#include <atomic>

namespace pffnet {
namespace {

std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};

}  // namespace

void MemoryTracker::on_alloc(std::size_t bytes) noexcept {
    const std::size_t now = g_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    std::size_t prev = g_peak.load(std::memory_order_relaxed);
    while (now > prev && !g_peak.compare_exchange_weak(prev, now, std::memory_order_relaxed)) {
    }
}

void MemoryTracker::on_free(std::size_t bytes) noexcept {
    g_current.fetch_sub(bytes, std::memory_order_relaxed);
}

std::size_t MemoryTracker::current() noexcept { return g_current.load(std::memory_order_relaxed); }

std::size_t MemoryTracker::peak() noexcept { return g_peak.load(std::memory_order_relaxed); }

void MemoryTracker::reset_peak() noexcept {
    g_peak.store(g_current.load(std::memory_order_relaxed), std::memory_order_relaxed);
}

}  // namespace pffnet
