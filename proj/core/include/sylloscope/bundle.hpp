#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sylloscope/config.hpp"
#include "sylloscope/tensor.hpp"
#include "sylloscope/tokenizer.hpp"

namespace syl {

/// One transformer block's weights. Row-vector convention throughout:
/// activations are row vectors, weights multiply on the right, so every
/// matrix is stored input-dim x output-dim. Per-head query/key/value slices
/// are column blocks of w_q/w_k/w_v; per-head output slices are row blocks
/// of w_o.
struct LayerWeights {
    Tensor ln1_gamma, ln1_beta;  // [D]
    Tensor w_q, w_k, w_v;        // [D, D]
    Tensor b_q, b_k, b_v;        // [D]
    Tensor w_o;                  // [D, D]
    Tensor b_o;                  // [D]
    Tensor ln2_gamma, ln2_beta;  // [D]
    Tensor w_in;                 // [D, d_mlp]
    Tensor b_in;                 // [d_mlp]
    Tensor w_out;                // [d_mlp, D]
    Tensor b_out;                // [D]
};

struct ModelBundle {
    ModelConfig config;
    Tensor token_embedding;     // [V, D]
    Tensor position_embedding;  // [max_positions, D]
    std::vector<LayerWeights> layers;
    Tensor lnf_gamma, lnf_beta;  // [D]
    Tensor unembedding;          // [D, V], materialized transpose of token_embedding
    Tokenizer tokenizer;
    std::string weights_fingerprint;  // FNV-1a over raw tensor bytes, fixed order
};

struct TokenizerPaths {
    std::filesystem::path vocab_json;
    std::filesystem::path merges_txt;
};

/// Loads a GPT-2-family checkpoint (standard tensor names, conv-layout
/// in x out fused qkv/MLP matrices) plus byte-level BPE tokenizer tables.
/// Splits fused qkv into per-head form, materializes the tied unembedding,
/// and validates shapes and finiteness. If a config.json sits next to the
/// checkpoint its n_head / layer_norm_epsilon are honored; otherwise heads
/// are inferred from the GPT-2 family rule d_head = 64.
ModelBundle load_bundle(const std::filesystem::path& checkpoint_path,
                        const TokenizerPaths& tokenizer_paths);

/// Convenience: directory containing model.safetensors, vocab.json, merges.txt.
ModelBundle load_bundle_dir(const std::filesystem::path& model_dir);

}  // namespace syl
