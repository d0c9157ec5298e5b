#include "sylloscope/pathpatch.hpp"

#include <cstring>

#include <Eigen/Dense>

#include "sylloscope/blocks.hpp"
#include "sylloscope/errors.hpp"
#include "sylloscope/runner.hpp"
#include "sylloscope/threadpool.hpp"

namespace syl {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using Stride = Eigen::OuterStride<>;
using BlockMap = Eigen::Map<const RowMat, 0, Stride>;

/// One head's output rows computed from the layer-normed residual.
void single_head_out(const LayerWeights& lw, const ModelConfig& cfg, const float* xn, int n,
                     int head, float* out) {
    const int D = cfg.d_model;
    const int dh = cfg.d_head;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    Tensor q({n, dh}), k({n, dh}), v({n, dh}), scores({n, n}), ctx({n, dh});
    CMapMat XN(xn, n, D);
    BlockMap Wq(lw.w_q.data() + head * dh, D, dh, Stride(D));
    BlockMap Wk(lw.w_k.data() + head * dh, D, dh, Stride(D));
    BlockMap Wv(lw.w_v.data() + head * dh, D, dh, Stride(D));
    MapMat Q(q.data(), n, dh), K(k.data(), n, dh), V(v.data(), n, dh);
    Q.noalias() = XN * Wq;
    K.noalias() = XN * Wk;
    V.noalias() = XN * Wv;
    Q.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(lw.b_q.data() + head * dh, dh);
    K.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(lw.b_k.data() + head * dh, dh);
    V.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(lw.b_v.data() + head * dh, dh);

    MapMat S(scores.data(), n, n);
    S.noalias() = (Q * K.transpose()) * scale;
    blocks::causal_softmax(scores.data(), n);
    MapMat C(ctx.data(), n, dh);
    C.noalias() = S * V;
    CMapMat Wo(lw.w_o.data() + static_cast<int64_t>(head) * dh * D, dh, D);
    MapMat(out, n, D).noalias() = C * Wo;
}

struct LightRun {
    Tensor attn_total;             // [L, n, D], per-layer head sum + output bias
    Tensor resid_mid_at_receiver;  // [n, D]
    Tensor receiver_out;           // [n, D]
    std::vector<Tensor> sender_out;
    float delta = 0.0f;
};

LightRun light_pass(const ModelBundle& bundle, const std::vector<int>& tokens,
                    std::span<const HeadRef> senders, HeadRef receiver, ScoreTokens score,
                    bool keep_clean_state) {
    const ModelConfig& cfg = bundle.config;
    const int D = cfg.d_model;
    const int H = cfg.n_heads;
    const int n = static_cast<int>(tokens.size());

    LightRun run;
    run.attn_total = Tensor({cfg.n_layers, n, D});
    run.sender_out.resize(senders.size());

    Tensor resid({n, D});
    for (int i = 0; i < n; ++i) {
        const float* te = bundle.token_embedding.row(tokens[static_cast<size_t>(i)]);
        const float* pe = bundle.position_embedding.row(i);
        float* r = resid.row(i);
        for (int j = 0; j < D; ++j) r[j] = te[j] + pe[j];
    }

    blocks::AttnScratch scratch;
    Tensor xn({n, D});
    Tensor hidden({n, cfg.d_mlp});
    Tensor mlp({n, D});
    std::vector<Tensor> head_outs(static_cast<size_t>(H), Tensor({n, D}));

    for (int l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& lw = bundle.layers[static_cast<size_t>(l)];
        blocks::layer_norm(resid.data(), n, D, lw.ln1_gamma.data(), lw.ln1_beta.data(),
                           cfg.ln_epsilon, xn.data());
        blocks::attention_details(lw, cfg, xn.data(), n, scratch, nullptr, nullptr,
                                  head_outs.data());

        float* total = run.attn_total.row(l);
        MapMat T(total, n, D);
        T.setZero();
        for (int h = 0; h < H; ++h) {
            T.noalias() += CMapMat(head_outs[static_cast<size_t>(h)].data(), n, D);
        }
        T.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(lw.b_o.data(), D);

        for (size_t si = 0; si < senders.size(); ++si) {
            if (senders[si].layer == l) run.sender_out[si] = head_outs[static_cast<size_t>(senders[si].head)];
        }
        if (keep_clean_state && receiver.layer == l) {
            run.receiver_out = head_outs[static_cast<size_t>(receiver.head)];
        }

        MapMat R(resid.data(), n, D);
        R.noalias() += T;
        if (keep_clean_state && receiver.layer == l) run.resid_mid_at_receiver = resid;

        blocks::layer_norm(resid.data(), n, D, lw.ln2_gamma.data(), lw.ln2_beta.data(),
                           cfg.ln_epsilon, xn.data());
        blocks::linear(xn.data(), n, D, cfg.d_mlp, lw.w_in.data(), lw.b_in.data(), hidden.data());
        blocks::gelu(hidden.data(), hidden.size());
        blocks::linear(hidden.data(), n, cfg.d_mlp, D, lw.w_out.data(), lw.b_out.data(),
                       mlp.data());
        R.noalias() += CMapMat(mlp.data(), n, D);
    }

    blocks::layer_norm(resid.row(n - 1), 1, D, bundle.lnf_gamma.data(), bundle.lnf_beta.data(),
                       cfg.ln_epsilon, xn.data());
    run.delta = blocks::logit_at(bundle, xn.data(), score.answer) -
                blocks::logit_at(bundle, xn.data(), score.distractor);
    return run;
}

}  // namespace

std::vector<PathPatchResult> path_patch_senders(const ModelBundle& bundle,
                                                const std::vector<PromptPair>& pairs,
                                                std::span<const HeadRef> senders,
                                                HeadRef receiver, const SweepOptions& options) {
    const ModelConfig& cfg = bundle.config;
    if (pairs.empty()) throw_data("path patching requires a non-empty pair batch");
    if (receiver.layer < 0 || receiver.layer >= cfg.n_layers || receiver.head < 0 ||
        receiver.head >= cfg.n_heads) {
        throw_data("receiver head out of range");
    }
    for (const auto& s : senders) {
        if (s.layer < 0 || s.layer >= cfg.n_layers || s.head < 0 || s.head >= cfg.n_heads) {
            throw_data("sender head out of range");
        }
        if (s.layer >= receiver.layer) {
            throw_data("invalid layer ordering: sender must sit strictly below the receiver");
        }
    }

    const int D = cfg.d_model;
    const int S = static_cast<int>(pairs.size());
    const int NS = static_cast<int>(senders.size());
    const int n = pairs.front().clean.n_tokens();
    const int last = pairs.front().clean.roles.last;
    for (const auto& pr : pairs) {
        if (pr.clean.n_tokens() != n || pr.corrupted.n_tokens() != n) {
            throw_data("path patch batch must share one template");
        }
    }

    BatchRunner runner(bundle, options.workers);
    std::vector<ScoreTokens> score(static_cast<size_t>(S));
    for (int j = 0; j < S; ++j) {
        score[static_cast<size_t>(j)] = {pairs[static_cast<size_t>(j)].clean.answer_token,
                                         pairs[static_cast<size_t>(j)].clean.distractor_token};
    }

    std::vector<float> delta_plus(static_cast<size_t>(S)), delta_minus(static_cast<size_t>(S));
    Tensor states({static_cast<int64_t>(NS) * S, n, D});

    parallel_for(S, runner.workers(), [&](int64_t j0, int64_t j1) {
        Tensor xn({n, D});
        Tensor hidden({n, cfg.d_mlp});
        Tensor mlp({n, D});
        Tensor resid({n, D});
        Tensor receiver_int({n, D});

        for (int64_t j = j0; j < j1; ++j) {
            const auto& pair = pairs[static_cast<size_t>(j)];
            LightRun clean = light_pass(bundle, pair.clean.tokens, senders, receiver,
                                        score[static_cast<size_t>(j)], true);
            LightRun corrupted = light_pass(bundle, pair.corrupted.tokens, senders, receiver,
                                            score[static_cast<size_t>(j)], false);
            delta_plus[static_cast<size_t>(j)] = clean.delta;
            delta_minus[static_cast<size_t>(j)] = corrupted.delta;

            for (int si = 0; si < NS; ++si) {
                // frozen pass: clean attention everywhere, sender swapped to
                // its corrupted output, MLPs recomputed
                for (int i = 0; i < n; ++i) {
                    const float* te =
                        bundle.token_embedding.row(pair.clean.tokens[static_cast<size_t>(i)]);
                    const float* pe = bundle.position_embedding.row(i);
                    float* r = resid.row(i);
                    for (int c = 0; c < D; ++c) r[c] = te[c] + pe[c];
                }
                for (int l = 0; l <= receiver.layer; ++l) {
                    const LayerWeights& lw = bundle.layers[static_cast<size_t>(l)];
                    if (l == receiver.layer) {
                        blocks::layer_norm(resid.data(), n, D, lw.ln1_gamma.data(),
                                           lw.ln1_beta.data(), cfg.ln_epsilon, xn.data());
                        single_head_out(lw, cfg, xn.data(), n, receiver.head,
                                        receiver_int.data());
                        break;
                    }
                    MapMat R(resid.data(), n, D);
                    R.noalias() += CMapMat(clean.attn_total.row(l), n, D);
                    if (senders[static_cast<size_t>(si)].layer == l) {
                        R.noalias() -=
                            CMapMat(clean.sender_out[static_cast<size_t>(si)].data(), n, D);
                        R.noalias() +=
                            CMapMat(corrupted.sender_out[static_cast<size_t>(si)].data(), n, D);
                    }
                    blocks::layer_norm(resid.data(), n, D, lw.ln2_gamma.data(), lw.ln2_beta.data(),
                                       cfg.ln_epsilon, xn.data());
                    blocks::linear(xn.data(), n, D, cfg.d_mlp, lw.w_in.data(), lw.b_in.data(),
                                   hidden.data());
                    blocks::gelu(hidden.data(), hidden.size());
                    blocks::linear(hidden.data(), n, cfg.d_mlp, D, lw.w_out.data(),
                                   lw.b_out.data(), mlp.data());
                    R.noalias() += CMapMat(mlp.data(), n, D);
                }

                // final run: clean everything except the receiver's output
                float* dst = states.row(static_cast<int64_t>(si) * S + j);
                MapMat out(dst, n, D);
                out = CMapMat(clean.resid_mid_at_receiver.data(), n, D);
                out.noalias() -= CMapMat(clean.receiver_out.data(), n, D);
                out.noalias() += CMapMat(receiver_int.data(), n, D);
            }
        }
    });

    std::vector<ScoreTokens> tiled(static_cast<size_t>(NS) * S);
    for (int si = 0; si < NS; ++si) {
        for (int j = 0; j < S; ++j) tiled[static_cast<size_t>(si) * S + j] = score[static_cast<size_t>(j)];
    }
    std::vector<float> patched =
        runner.restart(receiver.layer, RestartPhase::mlp, states, n, tiled, last);

    std::vector<PathPatchResult> out;
    for (int si = 0; si < NS; ++si) {
        PathPatchResult r;
        r.sender = senders[static_cast<size_t>(si)];
        r.receiver = receiver;
        std::vector<float> scores;
        for (int j = 0; j < S; ++j) {
            auto s = path_patching_score(delta_plus[static_cast<size_t>(j)],
                                         delta_minus[static_cast<size_t>(j)],
                                         patched[static_cast<size_t>(si) * S + j]);
            if (s) {
                scores.push_back(*s);
            } else {
                ++r.missing;
            }
        }
        if (!scores.empty()) r.stats = batch_stats(scores);
        out.push_back(std::move(r));
    }
    return out;
}

PathPatchResult path_patch(const ModelBundle& bundle, const std::vector<PromptPair>& pairs,
                           HeadRef sender, HeadRef receiver, const SweepOptions& options) {
    std::vector<HeadRef> senders = {sender};
    return path_patch_senders(bundle, pairs, senders, receiver, options).front();
}

}  // namespace syl
