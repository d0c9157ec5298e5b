#include "sylloscope/tensor.hpp"

#include <cmath>
#include <numeric>

#include "sylloscope/errors.hpp"

namespace syl {

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    int64_t total = 1;
    for (int64_t d : shape_) {
        if (d < 0) throw_data("tensor dimension must be non-negative");
        total *= d;
    }
    data_.assign(static_cast<size_t>(total), 0.0f);
}

int64_t Tensor::row_stride() const {
    int64_t stride = 1;
    for (size_t i = 1; i < shape_.size(); ++i) stride *= shape_[i];
    return stride;
}

bool Tensor::all_finite() const {
    for (float v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::reshape(std::vector<int64_t> shape) {
    int64_t total = 1;
    for (int64_t d : shape) total *= d;
    if (total != size()) throw_data("reshape changes element count");
    shape_ = std::move(shape);
}

}  // namespace syl
