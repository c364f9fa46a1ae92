#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bagau::nn {

/// NCHW extent of a dense 4-D tensor.
struct Shape4 {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    [[nodiscard]] std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    [[nodiscard]] std::string str() const;

    friend bool operator==(const Shape4&, const Shape4&) = default;
};

template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape4 shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
    Tensor(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.numel()) {
            throw std::invalid_argument("tensor data size does not match shape " + shape_.str());
        }
    }

    [[nodiscard]] const Shape4& shape() const { return shape_; }
    [[nodiscard]] std::size_t numel() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    [[nodiscard]] T* data() { return data_.data(); }
    [[nodiscard]] const T* data() const { return data_.data(); }
    [[nodiscard]] std::span<T> span() { return data_; }
    [[nodiscard]] std::span<const T> span() const { return data_; }
    [[nodiscard]] std::vector<T>& vec() { return data_; }
    [[nodiscard]] const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
    const T& at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }

    /// Pointer to the (n, c) plane.
    T* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
    const T* plane(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    [[nodiscard]] Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

private:
    [[nodiscard]] std::size_t offset(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    Shape4 shape_{};
    std::vector<T> data_;
};

/// Copies samples [first, first + count) of a batch.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& t, int first, int count);

/// Concatenates tensors along the batch axis.
template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> parts);

}  // namespace bagau::nn
