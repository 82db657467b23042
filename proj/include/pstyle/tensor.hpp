#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pstyle/errors.hpp"

namespace pstyle {

/// Dense channel-major grid (C x H x W), row-major within each plane.
template <typename T>
class Tensor3 {
public:
    using value_type = T;

    Tensor3() = default;
    Tensor3(int channels, int height, int width, T fill = T{})
        : c_(channels), h_(height), w_(width) {
        if (channels < 0 || height < 0 || width < 0) {
            throw DimensionError("negative tensor dimension");
        }
        data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
    }
    Tensor3(int channels, int height, int width, std::vector<T> values)
        : c_(channels), h_(height), w_(width), data_(std::move(values)) {
        if (data_.size() != static_cast<std::size_t>(channels) * height * width) {
            throw ShapeError("tensor storage does not match " + shape_string());
        }
    }

    int channels() const { return c_; }
    int height() const { return h_; }
    int width() const { return w_; }
    std::size_t plane_size() const { return static_cast<std::size_t>(h_) * w_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    std::span<T> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
    std::span<const T> plane(int c) const {
        return {data_.data() + c * plane_size(), plane_size()};
    }

    T& at(int c, int y, int x) { return data_[(c * plane_size()) + y * w_ + x]; }
    const T& at(int c, int y, int x) const { return data_[(c * plane_size()) + y * w_ + x]; }

    bool same_shape(const Tensor3& o) const {
        return c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }

    template <typename U>
    Tensor3<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor3<U>(c_, h_, w_, std::move(out));
    }

    std::string shape_string() const {
        return std::to_string(c_) + "x" + std::to_string(h_) + "x" + std::to_string(w_);
    }

    friend bool operator==(const Tensor3& a, const Tensor3& b) {
        return a.same_shape(b) && a.data_ == b.data_;
    }

private:
    int c_ = 0;
    int h_ = 0;
    int w_ = 0;
    std::vector<T> data_;
};

}  // namespace pstyle
