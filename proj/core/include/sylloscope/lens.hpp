#pragma once

#include <span>
#include <string>
#include <vector>

#include "sylloscope/bundle.hpp"
#include "sylloscope/patch.hpp"
#include "sylloscope/tensor.hpp"

namespace syl {

/// Input-agnostic OV-circuit lens for one head: W_E W_V^h W_O^h W_U
/// restricted to a vocab subset. Rows index the source (attended) token,
/// columns the output token. Layer norm and biases are excluded.
struct LensMatrix {
    HeadRef head;
    std::vector<int> token_ids;
    std::vector<std::string> labels;  // raw piece text per subset token
    Tensor matrix;                    // [k, k]
};

LensMatrix ov_lens(const ModelBundle& bundle, HeadRef head, std::span<const int> vocab_subset);

/// The 26 space-prefixed uppercase letter tokens, the dataset alphabet.
std::vector<int> default_letter_subset(const Tokenizer& tokenizer);

/// mean(diagonal) - mean(off-diagonal); negative values mean the head pushes
/// down the logit of the token it attends to.
float diagonal_score(const LensMatrix& lens);

}  // namespace syl
