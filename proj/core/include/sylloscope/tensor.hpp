#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace syl {

/// Dense row-major float32 tensor. All model math in this project is 32-bit.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::initializer_list<int64_t> shape) : Tensor(std::vector<int64_t>(shape)) {}

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<float> flat() { return {data_.data(), data_.size()}; }
    std::span<const float> flat() const { return {data_.data(), data_.size()}; }

    float& operator()(int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator()(int64_t i) const { return data_[static_cast<size_t>(i)]; }
    float& operator()(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    float operator()(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    float& operator()(int64_t i, int64_t j, int64_t k) {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    float operator()(int64_t i, int64_t j, int64_t k) const {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }

    /// Pointer to row i of a rank-2 tensor (or plane i of rank-3).
    float* row(int64_t i) { return data_.data() + i * row_stride(); }
    const float* row(int64_t i) const { return data_.data() + i * row_stride(); }
    int64_t row_stride() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    /// Reinterpret with a new shape of identical element count.
    void reshape(std::vector<int64_t> shape);

private:
    std::vector<int64_t> shape_;
    std::vector<float> data_;
};

}  // namespace syl
