#pragma once

namespace syl {

enum class Activation { gelu };

struct ModelConfig {
    int n_layers = 0;
    int n_heads = 0;
    int d_model = 0;
    int d_head = 0;
    int d_mlp = 0;
    int vocab_size = 0;
    int max_positions = 0;
    float ln_epsilon = 1e-5f;
    Activation activation = Activation::gelu;

    void validate() const;
};

}  // namespace syl
