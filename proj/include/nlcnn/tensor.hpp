#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nlcnn/error.hpp"

namespace nlcnn {

struct Shape4 {
    std::size_t n = 1;
    std::size_t h = 1;
    std::size_t w = 1;
    std::size_t c = 1;

    std::size_t size() const noexcept { return n * h * w * c; }
    std::size_t pixels() const noexcept { return h * w; }
    std::size_t sample_size() const noexcept { return h * w * c; }

    friend bool operator==(const Shape4&, const Shape4&) = default;
};

inline std::string to_string(const Shape4& s) {
    return "(" + std::to_string(s.n) + ", " + std::to_string(s.h) + ", " + std::to_string(s.w) + ", " +
           std::to_string(s.c) + ")";
}

// Dense rank-4 array in row-major (n, h, w, c) order.
template <typename T>
class Tensor4 {
public:
    using value_type = T;

    Tensor4() = default;

    explicit Tensor4(Shape4 shape, T fill = T(0)) : shape_(shape) {
        if (shape.n == 0 || shape.h == 0 || shape.w == 0 || shape.c == 0)
            throw InvalidInput("tensor dims must be >= 1, got " + to_string(shape));
        data_.assign(shape.size(), fill);
    }

    Tensor4(std::size_t n, std::size_t h, std::size_t w, std::size_t c, T fill = T(0))
        : Tensor4(Shape4{n, h, w, c}, fill) {}

    Tensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (shape.n == 0 || shape.h == 0 || shape.w == 0 || shape.c == 0)
            throw InvalidInput("tensor dims must be >= 1, got " + to_string(shape));
        if (data_.size() != shape.size())
            throw InvalidInput("tensor data length " + std::to_string(data_.size()) + " does not match " +
                               to_string(shape));
    }

    const Shape4& shape() const noexcept { return shape_; }
    std::size_t n() const noexcept { return shape_.n; }
    std::size_t h() const noexcept { return shape_.h; }
    std::size_t w() const noexcept { return shape_.w; }
    std::size_t c() const noexcept { return shape_.c; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t index(std::size_t b, std::size_t i, std::size_t j, std::size_t ch) const noexcept {
        return ((b * shape_.h + i) * shape_.w + j) * shape_.c + ch;
    }

    T& operator()(std::size_t b, std::size_t i, std::size_t j, std::size_t ch) noexcept {
        return data_[index(b, i, j, ch)];
    }
    const T& operator()(std::size_t b, std::size_t i, std::size_t j, std::size_t ch) const noexcept {
        return data_[index(b, i, j, ch)];
    }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    std::span<T> sample(std::size_t b) noexcept {
        return std::span<T>(data_).subspan(b * shape_.sample_size(), shape_.sample_size());
    }
    std::span<const T> sample(std::size_t b) const noexcept {
        return std::span<const T>(data_).subspan(b * shape_.sample_size(), shape_.sample_size());
    }

    // Same data, new dims; the element count must not change.
    Tensor4 reshaped(Shape4 shape) const& { return Tensor4(shape, data_); }
    Tensor4 reshaped(Shape4 shape) && { return Tensor4(shape, std::move(data_)); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    Tensor4<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor4<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor4&, const Tensor4&) = default;

private:
    Shape4 shape_{0, 0, 0, 0};
    std::vector<T> data_;
};

}  // namespace nlcnn
