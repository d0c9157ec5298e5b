#pragma once

#include "sylloscope/bundle.hpp"
#include "sylloscope/tensor.hpp"

namespace syl::blocks {

/// Low-level kernels shared by the hooked forward and the batched sweep
/// runner. All buffers are dense row-major float32; `rows` counts token rows.

void layer_norm(const float* x, int64_t rows, int d, const float* gamma, const float* beta,
                float eps, float* out);

/// out = x @ w + b, shapes [rows,in] @ [in,out_dim].
void linear(const float* x, int64_t rows, int in_dim, int out_dim, const float* w,
            const float* b, float* out);

/// GPT-2 gelu (tanh approximation), in place.
void gelu(float* x, int64_t n);

/// Causal softmax over one head's score matrix [n,n], row-wise, in place.
void causal_softmax(float* scores, int n);

/// Attention internals for one sequence at one layer, computed from the
/// layer-normed residual rows `xn` [n,D]. Outputs are per head h:
///   pattern  [H][n,n]   post-softmax causal weights
///   value    [H][n,d]
///   head_out [H][n,D]   (pattern @ value) @ w_o rows for head h, bias excluded
/// Any output pointer may be null to skip it; head_out requires values and
/// patterns internally but only stores what is requested.
struct AttnScratch {
    Tensor q, k, v;     // [n, D]
    Tensor ctx;         // [n, d]
    Tensor scores;      // [n, n]
};

void attention_details(const LayerWeights& lw, const ModelConfig& cfg, const float* xn, int n,
                       AttnScratch& scratch, Tensor* patterns, Tensor* values, Tensor* head_outs);

/// logit for `token` at one layer-normed row. The tied unembedding column
/// equals the token embedding row, which is contiguous.
float logit_at(const ModelBundle& bundle, const float* lnf_row, int token);

}  // namespace syl::blocks
