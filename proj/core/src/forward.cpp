#include "sylloscope/forward.hpp"

#include <algorithm>
#include <cstring>

#include <Eigen/Dense>

#include "sylloscope/blocks.hpp"
#include "sylloscope/errors.hpp"

namespace syl {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using Stride = Eigen::OuterStride<>;

std::vector<int> resolve_positions(const PatchTarget& t, int n) {
    if (t.positions.empty()) {
        std::vector<int> all(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
        return all;
    }
    return t.positions;
}

void copy_rows(Tensor& dst, const Tensor& src, const std::vector<int>& rows) {
    if (!dst.same_shape(src)) throw_data("donor/target shape mismatch at patch site");
    int64_t stride = dst.row_stride();
    for (int r : rows) {
        std::memcpy(dst.row(r), src.row(r), sizeof(float) * static_cast<size_t>(stride));
    }
}

}  // namespace

void PatchSpec::validate(const ModelConfig& config, int n_tokens) const {
    for (const auto& t : targets) {
        if (t.layer < 0 || t.layer >= config.n_layers) throw_data("patch target layer out of range");
        bool head_scoped = t.site == Site::head_out || t.site == Site::head_value ||
                           t.site == Site::head_pattern;
        if (head_scoped && (t.head < 0 || t.head >= config.n_heads)) {
            throw_data("patch target head out of range");
        }
        for (int p : t.positions) {
            if (p < 0 || p >= n_tokens) throw_data("patch target position out of range");
        }
    }
}

void AblationSpec::validate(const ModelConfig& config, int n_tokens) const {
    if (heads.empty()) return;
    if (means == nullptr) throw_data("ablation requested without a mean-activation table");
    if (means->n_layers != config.n_layers || means->n_heads != config.n_heads ||
        means->d_model != config.d_model) {
        throw_data("mean table dimensions do not match model config");
    }
    if (means->n_positions != n_tokens) {
        throw_data("mean table was built for a different sequence length");
    }
    for (const auto& h : heads) {
        if (h.layer < 0 || h.layer >= config.n_layers || h.head < 0 || h.head >= config.n_heads) {
            throw_data("ablated head out of range");
        }
    }
}

const char* site_name(Site site) {
    switch (site) {
        case Site::resid_pre: return "resid_pre";
        case Site::head_out: return "head_out";
        case Site::head_value: return "head_value";
        case Site::head_pattern: return "head_pattern";
        case Site::mlp_out: return "mlp_out";
    }
    return "?";
}

const char* direction_name(Direction direction) {
    return direction == Direction::denoise ? "denoise" : "noise";
}

ActivationCache forward(const ModelBundle& bundle, std::span<const int> tokens,
                        const PatchSpec* patch, const ActivationCache* donor,
                        const AblationSpec* ablation, CacheOptions options) {
    const ModelConfig& cfg = bundle.config;
    const int n = static_cast<int>(tokens.size());
    const int D = cfg.d_model;
    const int H = cfg.n_heads;
    const int d = cfg.d_head;

    if (n == 0) throw_data("cannot run forward on an empty token sequence");
    if (n > cfg.max_positions) {
        throw_data("sequence too long: " + std::to_string(n) + " > " +
                    std::to_string(cfg.max_positions));
    }
    for (int t : tokens) {
        if (t < 0 || t >= cfg.vocab_size) throw_data("token id out of vocab: " + std::to_string(t));
    }
    if (patch != nullptr && !patch->targets.empty()) {
        patch->validate(cfg, n);
        if (donor == nullptr) throw_data("patching requires a donor cache");
        if (donor->n_tokens != n) throw_data("donor/target shape mismatch: sequence lengths differ");
        for (const auto& t : patch->targets) {
            bool ok = true;
            switch (t.site) {
                case Site::resid_pre: ok = donor->options.resid; break;
                case Site::head_out: ok = donor->options.head_out; break;
                case Site::head_value: ok = donor->options.values; break;
                case Site::head_pattern: ok = donor->options.patterns; break;
                case Site::mlp_out: ok = donor->options.mlp_out; break;
            }
            if (!ok) {
                throw_data(std::string("donor cache does not cover patched site ") +
                           site_name(t.site));
            }
        }
    }
    if (ablation != nullptr) ablation->validate(cfg, n);

    ActivationCache cache;
    cache.n_tokens = n;
    cache.options = options;

    // the working residual and per-layer attention buffers are always live;
    // the cache only retains what the options ask for
    Tensor resid({n, D});
    for (int i = 0; i < n; ++i) {
        const float* te = bundle.token_embedding.row(tokens[static_cast<size_t>(i)]);
        const float* pe = bundle.position_embedding.row(i);
        float* r = resid.row(i);
        for (int j = 0; j < D; ++j) r[j] = te[j] + pe[j];
    }

    if (options.resid) {
        cache.resid_pre.assign(static_cast<size_t>(cfg.n_layers), Tensor());
        cache.resid_mid.assign(static_cast<size_t>(cfg.n_layers), Tensor());
        cache.resid_post.assign(static_cast<size_t>(cfg.n_layers), Tensor());
    }
    if (options.patterns) cache.pattern.assign(static_cast<size_t>(cfg.n_layers), {});
    if (options.values) cache.value.assign(static_cast<size_t>(cfg.n_layers), {});
    if (options.head_out) cache.head_out.assign(static_cast<size_t>(cfg.n_layers), {});
    if (options.mlp_out) cache.mlp_out.assign(static_cast<size_t>(cfg.n_layers), Tensor());

    blocks::AttnScratch scratch;
    std::vector<Tensor> patterns(static_cast<size_t>(H)), values(static_cast<size_t>(H)),
        head_outs(static_cast<size_t>(H));
    for (int h = 0; h < H; ++h) {
        patterns[static_cast<size_t>(h)] = Tensor({n, n});
        values[static_cast<size_t>(h)] = Tensor({n, d});
        head_outs[static_cast<size_t>(h)] = Tensor({n, D});
    }
    Tensor xn({n, D});
    Tensor mlp_hidden({n, cfg.d_mlp});
    Tensor mlp_out({n, D});

    auto targets_at = [&](Site site, int layer, int head) {
        std::vector<const PatchTarget*> out;
        if (patch == nullptr) return out;
        for (const auto& t : patch->targets) {
            if (t.site == site && t.layer == layer && (head < 0 || t.head == head)) {
                out.push_back(&t);
            }
        }
        return out;
    };

    for (int l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& lw = bundle.layers[static_cast<size_t>(l)];

        for (const PatchTarget* t : targets_at(Site::resid_pre, l, -1)) {
            copy_rows(resid, donor->resid_pre[static_cast<size_t>(l)], resolve_positions(*t, n));
        }
        if (options.resid) cache.resid_pre[static_cast<size_t>(l)] = resid;

        // attention sublayer
        blocks::layer_norm(resid.data(), n, D, lw.ln1_gamma.data(), lw.ln1_beta.data(),
                           cfg.ln_epsilon, xn.data());
        blocks::attention_details(lw, cfg, xn.data(), n, scratch, patterns.data(), values.data(),
                                  nullptr);

        for (int h = 0; h < H; ++h) {
            for (const PatchTarget* t : targets_at(Site::head_pattern, l, h)) {
                copy_rows(patterns[static_cast<size_t>(h)],
                          donor->pattern[static_cast<size_t>(l)][static_cast<size_t>(h)],
                          resolve_positions(*t, n));
            }
            for (const PatchTarget* t : targets_at(Site::head_value, l, h)) {
                copy_rows(values[static_cast<size_t>(h)],
                          donor->value[static_cast<size_t>(l)][static_cast<size_t>(h)],
                          resolve_positions(*t, n));
            }

            // head output from the (possibly patched) pattern and value
            Tensor& ho = head_outs[static_cast<size_t>(h)];
            MapMat S(patterns[static_cast<size_t>(h)].data(), n, n);
            MapMat V(values[static_cast<size_t>(h)].data(), n, d);
            MapMat C(scratch.ctx.data(), n, d);
            C.noalias() = S * V;
            CMapMat Wo(lw.w_o.data() + static_cast<int64_t>(h) * d * D, d, D);
            MapMat(ho.data(), n, D).noalias() = C * Wo;

            for (const PatchTarget* t : targets_at(Site::head_out, l, h)) {
                copy_rows(ho, donor->head_out[static_cast<size_t>(l)][static_cast<size_t>(h)],
                          resolve_positions(*t, n));
            }
            if (ablation != nullptr) {
                for (const auto& ab : ablation->heads) {
                    if (ab.layer == l && ab.head == h) {
                        for (int i = 0; i < n; ++i) {
                            std::memcpy(ho.row(i), ablation->means->at(l, h, i),
                                        sizeof(float) * static_cast<size_t>(D));
                        }
                        break;
                    }
                }
            }
        }

        MapMat R(resid.data(), n, D);
        for (int h = 0; h < H; ++h) {
            R.noalias() += CMapMat(head_outs[static_cast<size_t>(h)].data(), n, D);
        }
        R.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(lw.b_o.data(), D);

        if (options.patterns) cache.pattern[static_cast<size_t>(l)] = patterns;
        if (options.values) cache.value[static_cast<size_t>(l)] = values;
        if (options.head_out) cache.head_out[static_cast<size_t>(l)] = head_outs;
        if (options.resid) cache.resid_mid[static_cast<size_t>(l)] = resid;

        // MLP sublayer
        blocks::layer_norm(resid.data(), n, D, lw.ln2_gamma.data(), lw.ln2_beta.data(),
                           cfg.ln_epsilon, xn.data());
        blocks::linear(xn.data(), n, D, cfg.d_mlp, lw.w_in.data(), lw.b_in.data(),
                       mlp_hidden.data());
        blocks::gelu(mlp_hidden.data(), mlp_hidden.size());
        blocks::linear(mlp_hidden.data(), n, cfg.d_mlp, D, lw.w_out.data(), lw.b_out.data(),
                       mlp_out.data());

        for (const PatchTarget* t : targets_at(Site::mlp_out, l, -1)) {
            copy_rows(mlp_out, donor->mlp_out[static_cast<size_t>(l)], resolve_positions(*t, n));
        }
        if (options.mlp_out) cache.mlp_out[static_cast<size_t>(l)] = mlp_out;

        R.noalias() += CMapMat(mlp_out.data(), n, D);
        if (options.resid) cache.resid_post[static_cast<size_t>(l)] = resid;
    }

    if (options.logits) {
        blocks::layer_norm(resid.data(), n, D, bundle.lnf_gamma.data(), bundle.lnf_beta.data(),
                           cfg.ln_epsilon, xn.data());
        cache.logits = Tensor({n, cfg.vocab_size});
        // logits = lnf(resid) @ W_U; W_U is the materialized wte transpose
        CMapMat X(xn.data(), n, D);
        CMapMat WU(bundle.unembedding.data(), D, cfg.vocab_size);
        MapMat(cache.logits.data(), n, cfg.vocab_size).noalias() = X * WU;
    }
    return cache;
}

}  // namespace syl
