#include "sylloscope/lens.hpp"

#include <Eigen/Dense>

#include "sylloscope/errors.hpp"

namespace syl {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using Stride = Eigen::OuterStride<>;
using BlockMap = Eigen::Map<const RowMat, 0, Stride>;

LensMatrix ov_lens(const ModelBundle& bundle, HeadRef head, std::span<const int> vocab_subset) {
    const ModelConfig& cfg = bundle.config;
    if (head.layer < 0 || head.layer >= cfg.n_layers || head.head < 0 ||
        head.head >= cfg.n_heads) {
        throw_data("invalid head index for lens: " + std::to_string(head.layer) + "." +
                   std::to_string(head.head));
    }
    if (vocab_subset.empty()) throw_data("lens vocab subset is empty");
    for (int id : vocab_subset) {
        if (id < 0 || id >= cfg.vocab_size) throw_data("lens subset token id out of vocab");
    }

    const int D = cfg.d_model;
    const int dh = cfg.d_head;
    const int k = static_cast<int>(vocab_subset.size());
    const LayerWeights& lw = bundle.layers[static_cast<size_t>(head.layer)];

    // gather embedding rows for the subset
    Tensor emb({k, D});
    for (int i = 0; i < k; ++i) {
        std::copy_n(bundle.token_embedding.row(vocab_subset[static_cast<size_t>(i)]), D,
                    emb.row(i));
    }

    // W_E W_V^h W_O^h, then project back onto the subset embeddings (the tied
    // unembedding columns are the embedding rows)
    Tensor mid({k, dh}), proj({k, D});
    BlockMap Wv(lw.w_v.data() + head.head * dh, D, dh, Stride(D));
    MapMat(mid.data(), k, dh).noalias() = CMapMat(emb.data(), k, D) * Wv;
    CMapMat Wo(lw.w_o.data() + static_cast<int64_t>(head.head) * dh * D, dh, D);
    MapMat(proj.data(), k, D).noalias() = CMapMat(mid.data(), k, dh) * Wo;

    LensMatrix lens;
    lens.head = head;
    lens.token_ids.assign(vocab_subset.begin(), vocab_subset.end());
    for (int id : vocab_subset) lens.labels.push_back(bundle.tokenizer.piece(id));
    lens.matrix = Tensor({k, k});
    MapMat(lens.matrix.data(), k, k).noalias() =
        CMapMat(proj.data(), k, D) * CMapMat(emb.data(), k, D).transpose();
    return lens;
}

std::vector<int> default_letter_subset(const Tokenizer& tokenizer) {
    std::vector<int> ids;
    ids.reserve(26);
    for (char c = 'A'; c <= 'Z'; ++c) {
        auto id = tokenizer.single_token(std::string(" ") + c);
        if (!id) throw_data(std::string("letter token ' ") + c + "' is not single-token");
        ids.push_back(*id);
    }
    return ids;
}

float diagonal_score(const LensMatrix& lens) {
    if (lens.matrix.rank() != 2 || lens.matrix.dim(0) != lens.matrix.dim(1)) {
        throw_data("diagonal score requires a square lens matrix");
    }
    const int k = static_cast<int>(lens.matrix.dim(0));
    double diag = 0.0, off = 0.0;
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            if (i == j) {
                diag += lens.matrix(i, j);
            } else {
                off += lens.matrix(i, j);
            }
        }
    }
    double diag_mean = diag / k;
    double off_mean = k > 1 ? off / (static_cast<double>(k) * k - k) : 0.0;
    return static_cast<float>(diag_mean - off_mean);
}

}  // namespace syl
