#pragma once

#include <cstdint>
#include <vector>

#include "sylloscope/tensor.hpp"

namespace syl {

/// Which activations a forward pass records. Full caches of a 24-layer model
/// are ~100 MB per sample (head outputs dominate), so sweep drivers request
/// slim caches.
struct CacheOptions {
    bool resid = true;     // resid_pre / resid_mid / resid_post, [L][N,D]
    bool patterns = true;  // [L][H][N,N]
    bool values = true;    // [L][H][N,d]
    bool head_out = true;  // [L][H][N,D]
    bool mlp_out = true;   // [L][N,D]
    bool logits = true;    // [N,V]

    static CacheOptions full() { return {}; }
    static CacheOptions resid_only() { return {true, false, false, false, false, false}; }
    static CacheOptions none() { return {false, false, false, false, false, false}; }
};

/// Per-run activation record. Indexing: resid_*[layer] is [N,D];
/// pattern[layer][head] is [N,N] (rows = query position, causally masked,
/// rows sum to 1); value[layer][head] is [N,d]; head_out[layer][head] is
/// [N,D] and excludes the attention output bias, which is attributed once
/// per layer so that resid_mid = resid_pre + sum_h head_out + b_o.
struct ActivationCache {
    int n_tokens = 0;
    CacheOptions options;

    std::vector<Tensor> resid_pre, resid_mid, resid_post;   // [L] x [N,D]
    std::vector<std::vector<Tensor>> pattern;               // [L][H] x [N,N]
    std::vector<std::vector<Tensor>> value;                 // [L][H] x [N,d]
    std::vector<std::vector<Tensor>> head_out;              // [L][H] x [N,D]
    std::vector<Tensor> mlp_out;                            // [L] x [N,D]
    Tensor logits;                                          // [N,V]

    float logit(int position, int token) const { return logits(position, token); }
};

}  // namespace syl
