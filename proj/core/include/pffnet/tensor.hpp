#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pffnet/error.hpp"
#include "pffnet/memory.hpp"

namespace pffnet {

// Dimensions of a 4-D tensor in (batch, channel, height, width) order.
struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    constexpr std::size_t numel() const noexcept { return n * c * h * w; }
    constexpr std::size_t plane() const noexcept { return h * w; }
    constexpr std::size_t image_size() const noexcept { return c * h * w; }

    friend constexpr bool operator==(const Shape&, const Shape&) = default;

    std::string str() const {
        return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
               std::to_string(w) + ")";
    }
};

// Dense row-major (n, c, h, w) array. Precision is fixed by T (float or double).
template <typename T>
class Tensor {
public:
    using value_type = T;
    using Storage = std::vector<T, TrackedAllocator<T>>;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}

    Tensor(Shape shape, std::span<const T> values) : shape_(shape), data_(values.begin(), values.end()) {
        if (values.size() != shape.numel()) {
            throw ShapeError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                             shape.str());
        }
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return {data_.data(), data_.size()}; }
    std::span<const T> data() const noexcept { return {data_.data(), data_.size()}; }
    T* ptr() noexcept { return data_.data(); }
    const T* ptr() const noexcept { return data_.data(); }

    std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
        return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept { return data_[offset(n, c, y, x)]; }
    T at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
        return data_[offset(n, c, y, x)];
    }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    T operator[](std::size_t i) const noexcept { return data_[i]; }

    // Pointer to the first element of batch item n.
    T* item(std::size_t n) noexcept { return data_.data() + n * shape_.image_size(); }
    const T* item(std::size_t n) const noexcept { return data_.data() + n * shape_.image_size(); }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    // Releases storage; the tensor becomes empty with a zero shape.
    void release() {
        Storage().swap(data_);
        shape_ = Shape{};
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        std::transform(data_.begin(), data_.end(), out.data().begin(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && std::equal(a.data_.begin(), a.data_.end(), b.data_.begin());
    }

private:
    Shape shape_{};
    Storage data_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace pffnet
