#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "colony/error.hpp"

namespace colony {

// Dense row-major tensor. float is the training precision, double the
// gradient-checking precision.
template <typename T>
class tensor {
public:
    tensor() = default;

    explicit tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        for (int d : shape_)
            if (d <= 0) throw config_error("tensor dimensions must be positive");
        data_.assign(numel_of(shape_), T(0));
    }

    tensor(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (numel_of(shape_) != data_.size())
            throw config_error("tensor data size does not match shape");
    }

    static tensor zeros(std::vector<int> shape) { return tensor(std::move(shape)); }

    static tensor full(std::vector<int> shape, T v) {
        tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    const std::vector<int>& shape() const noexcept { return shape_; }
    std::size_t numel() const noexcept { return data_.size(); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    int ndim() const noexcept { return static_cast<int>(shape_.size()); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::vector<T>& values() noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // NCHW accessor
    T& at4(int n, int c, int h, int w) {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at4(int n, int c, int h, int w) const {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    T& at2(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
    const T& at2(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    tensor reshaped(std::vector<int> shape) const {
        if (numel_of(shape) != data_.size())
            throw config_error("reshape changes element count");
        return tensor(std::move(shape), data_);
    }

    bool same_shape(const tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    // population mean / std over all elements
    double mean() const {
        if (data_.empty()) return 0.0;
        double s = 0.0;
        for (const T& v : data_) s += static_cast<double>(v);
        return s / double(data_.size());
    }

    double stddev() const {
        if (data_.empty()) return 0.0;
        const double m = mean();
        double s = 0.0;
        for (const T& v : data_) {
            const double d = static_cast<double>(v) - m;
            s += d * d;
        }
        return std::sqrt(s / double(data_.size()));
    }

    template <typename U>
    tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return tensor<U>(shape_, std::move(out));
    }

    static std::size_t numel_of(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        return shape.empty() ? 0 : n;
    }

    static std::string shape_str(const std::vector<int>& shape) {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }

private:
    std::vector<int> shape_;
    std::vector<T> data_;
};

} // namespace colony
