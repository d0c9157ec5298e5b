#pragma once

#include <vector>

#include "sylloscope/patch.hpp"
#include "sylloscope/tensor.hpp"

namespace syl {

/// Position-wise batch means of per-head attention outputs, built over a
/// template-aligned batch. Replacing a head's output with its stored mean
/// knocks the head out while preserving the layer's bias bookkeeping.
struct MeanTable {
    int n_layers = 0;
    int n_heads = 0;
    int n_positions = 0;
    int d_model = 0;
    Tensor data;  // [L, H, N, D]

    const float* at(int layer, int head, int position) const {
        return data.data() +
               (((static_cast<int64_t>(layer) * n_heads + head) * n_positions) + position) * d_model;
    }
    float* at(int layer, int head, int position) {
        return data.data() +
               (((static_cast<int64_t>(layer) * n_heads + head) * n_positions) + position) * d_model;
    }
};

struct AblationSpec {
    const MeanTable* means = nullptr;
    std::vector<HeadRef> heads;

    void validate(const ModelConfig& config, int n_tokens) const;
};

}  // namespace syl
