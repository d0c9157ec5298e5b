#include "sylloscope/runner.hpp"

#include <cmath>
#include <cstring>
#include <functional>

#include <Eigen/Dense>

#include "sylloscope/blocks.hpp"
#include "sylloscope/errors.hpp"
#include "sylloscope/threadpool.hpp"

namespace syl {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using Stride = Eigen::OuterStride<>;
using BlockMap = Eigen::Map<const RowMat, 0, Stride>;

constexpr int kChunkJobs = 64;

struct Scratch {
    Tensor xn, q, k, v, scores, ctx, hidden, mlpLanes;

    void ensure(int rows, const ModelConfig& cfg, int n) {
        auto fit = [](Tensor& t, std::vector<int64_t> shape) {
            if (t.shape() != shape) t = Tensor(std::move(shape));
        };
        fit(xn, {rows, cfg.d_model});
        fit(q, {rows, cfg.d_model});
        fit(k, {rows, cfg.d_model});
        fit(v, {rows, cfg.d_model});
        fit(scores, {n, n});
        fit(ctx, {n, cfg.d_head});
        fit(hidden, {rows, cfg.d_mlp});
        fit(mlpLanes, {rows, cfg.d_model});
    }
};

struct AblationMask {
    std::vector<uint8_t> ablated;  // L*H
    int n_heads = 0;
    bool any = false;

    AblationMask(const AblationSpec* spec, const ModelConfig& cfg) : n_heads(cfg.n_heads) {
        ablated.assign(static_cast<size_t>(cfg.n_layers) * cfg.n_heads, 0);
        if (spec == nullptr) return;
        for (const auto& h : spec->heads) {
            ablated[static_cast<size_t>(h.layer) * n_heads + h.head] = 1;
            any = true;
        }
    }
    bool at(int layer, int head) const {
        return ablated[static_cast<size_t>(layer) * n_heads + head] != 0;
    }
    int kept_at(int layer) const {
        int kept = 0;
        for (int h = 0; h < n_heads; ++h) kept += at(layer, h) ? 0 : 1;
        return kept;
    }
};

// Optional per-layer observers used by the cache-building entry points.
struct Observers {
    // called with the resid_pre rows of the chunk before the attention sublayer
    std::function<void(int layer, const float* rows, int job_begin, int job_count)> on_resid_pre;
    // called per (job, layer, head) with that head's [n,D] output rows
    std::function<void(int layer, int head, int job, const float* head_rows)> on_head_out;
    // called per (job, layer, head) with the query row of the pattern
    std::function<void(int layer, int head, int job, const float* pattern_row)> on_pattern_row;
    int pattern_query = -1;
};

// Runs layers [start_layer, L) over the chunk residing in X ([jobs*n, D]).
void run_chunk_layers(const ModelBundle& bundle, int start_layer, RestartPhase phase, float* X,
                      int jobs, int n, int job_begin, const AblationMask& mask, Scratch& s,
                      const MeanTable* means, const Observers* obs) {
    const ModelConfig& cfg = bundle.config;
    const int D = cfg.d_model;
    const int H = cfg.n_heads;
    const int dh = cfg.d_head;
    const int64_t rows = static_cast<int64_t>(jobs) * n;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    s.ensure(static_cast<int>(rows), cfg, n);

    for (int l = start_layer; l < cfg.n_layers; ++l) {
        const LayerWeights& lw = bundle.layers[static_cast<size_t>(l)];
        const bool skip_attn = (l == start_layer && phase == RestartPhase::mlp);

        if (!skip_attn) {
            if (obs != nullptr && obs->on_resid_pre) {
                obs->on_resid_pre(l, X, job_begin, jobs);
            }
            blocks::layer_norm(X, rows, D, lw.ln1_gamma.data(), lw.ln1_beta.data(), cfg.ln_epsilon,
                               s.xn.data());

            const int kept = mask.any ? mask.kept_at(l) : H;
            const bool per_head_qkv = kept * 2 <= H;
            if (!per_head_qkv) {
                blocks::linear(s.xn.data(), rows, D, D, lw.w_q.data(), lw.b_q.data(), s.q.data());
                blocks::linear(s.xn.data(), rows, D, D, lw.w_k.data(), lw.b_k.data(), s.k.data());
                blocks::linear(s.xn.data(), rows, D, D, lw.w_v.data(), lw.b_v.data(), s.v.data());
            } else {
                CMapMat XN(s.xn.data(), rows, D);
                for (int h = 0; h < H; ++h) {
                    if (mask.at(l, h)) continue;
                    for (auto [dst, w, b] : {std::tuple{s.q.data(), &lw.w_q, &lw.b_q},
                                             std::tuple{s.k.data(), &lw.w_k, &lw.b_k},
                                             std::tuple{s.v.data(), &lw.w_v, &lw.b_v}}) {
                        BlockMap Wh(w->data() + h * dh, D, dh, Stride(D));
                        Eigen::Map<RowMat, 0, Stride> Dst(dst + h * dh, rows, dh, Stride(D));
                        Dst.noalias() = XN * Wh;
                        Dst.rowwise() +=
                            Eigen::Map<const Eigen::RowVectorXf>(b->data() + h * dh, dh);
                    }
                }
            }

            for (int j = 0; j < jobs; ++j) {
                const int64_t r0 = static_cast<int64_t>(j) * n;
                float* xj = X + r0 * D;
                for (int h = 0; h < H; ++h) {
                    if (mask.at(l, h)) {
                        // knocked out: add the stored batch-mean output rows
                        for (int i = 0; i < n; ++i) {
                            Eigen::Map<Eigen::RowVectorXf>(xj + static_cast<int64_t>(i) * D, D) +=
                                Eigen::Map<const Eigen::RowVectorXf>(means->at(l, h, i), D);
                        }
                        continue;
                    }
                    BlockMap Qh(s.q.data() + (r0 * D) + h * dh, n, dh, Stride(D));
                    BlockMap Kh(s.k.data() + (r0 * D) + h * dh, n, dh, Stride(D));
                    BlockMap Vh(s.v.data() + (r0 * D) + h * dh, n, dh, Stride(D));
                    MapMat S(s.scores.data(), n, n);
                    S.noalias() = (Qh * Kh.transpose()) * scale;
                    blocks::causal_softmax(s.scores.data(), n);
                    if (obs != nullptr && obs->on_pattern_row && obs->pattern_query >= 0) {
                        obs->on_pattern_row(l, h, job_begin + j,
                                            s.scores.data() +
                                                static_cast<int64_t>(obs->pattern_query) * n);
                    }
                    MapMat C(s.ctx.data(), n, dh);
                    C.noalias() = S * Vh;
                    CMapMat Wo(lw.w_o.data() + static_cast<int64_t>(h) * dh * D, dh, D);
                    if (obs != nullptr && obs->on_head_out) {
                        MapMat HO(s.mlpLanes.data(), n, D);  // reuse as head staging
                        HO.noalias() = C * Wo;
                        obs->on_head_out(l, h, job_begin + j, s.mlpLanes.data());
                        MapMat(xj, n, D).noalias() += HO;
                    } else {
                        MapMat(xj, n, D).noalias() += C * Wo;
                    }
                }
            }
            MapMat(X, rows, D).rowwise() +=
                Eigen::Map<const Eigen::RowVectorXf>(lw.b_o.data(), D);
        }

        // MLP sublayer
        blocks::layer_norm(X, rows, D, lw.ln2_gamma.data(), lw.ln2_beta.data(), cfg.ln_epsilon,
                           s.xn.data());
        blocks::linear(s.xn.data(), rows, D, cfg.d_mlp, lw.w_in.data(), lw.b_in.data(),
                       s.hidden.data());
        blocks::gelu(s.hidden.data(), s.hidden.size());
        blocks::linear(s.hidden.data(), rows, cfg.d_mlp, D, lw.w_out.data(), lw.b_out.data(),
                       s.mlpLanes.data());
        MapMat(X, rows, D).noalias() += CMapMat(s.mlpLanes.data(), rows, D);
    }
}

void score_chunk(const ModelBundle& bundle, const float* X, int jobs, int n, int last_pos,
                 std::span<const ScoreTokens> score, int job_begin, float* out) {
    const ModelConfig& cfg = bundle.config;
    const int D = cfg.d_model;
    std::vector<float> lnf(static_cast<size_t>(D));
    for (int j = 0; j < jobs; ++j) {
        const float* row = X + (static_cast<int64_t>(j) * n + last_pos) * D;
        blocks::layer_norm(row, 1, D, bundle.lnf_gamma.data(), bundle.lnf_beta.data(),
                           cfg.ln_epsilon, lnf.data());
        const ScoreTokens& st = score[static_cast<size_t>(job_begin + j)];
        out[job_begin + j] = blocks::logit_at(bundle, lnf.data(), st.answer) -
                             blocks::logit_at(bundle, lnf.data(), st.distractor);
    }
}

void embed_rows(const ModelBundle& bundle, const std::vector<int>& seq, float* rows) {
    const int D = bundle.config.d_model;
    for (size_t i = 0; i < seq.size(); ++i) {
        const float* te = bundle.token_embedding.row(seq[i]);
        const float* pe = bundle.position_embedding.row(static_cast<int64_t>(i));
        float* r = rows + i * static_cast<size_t>(D);
        for (int j = 0; j < D; ++j) r[j] = te[j] + pe[j];
    }
}

void validate_seqs(const ModelBundle& bundle, std::span<const std::vector<int>> seqs, int n,
                   int last_pos) {
    if (seqs.empty()) throw_data("empty batch: no sequences to run");
    if (n <= 0 || n > bundle.config.max_positions) throw_data("sequence too long or empty");
    if (last_pos < 0 || last_pos >= n) throw_data("last position out of range");
    for (const auto& s : seqs) {
        if (static_cast<int>(s.size()) != n) throw_data("batch sequences must share one length");
        for (int t : s) {
            if (t < 0 || t >= bundle.config.vocab_size) throw_data("token id out of vocab");
        }
    }
}

}  // namespace

BatchRunner::BatchRunner(const ModelBundle& bundle, int workers)
    : bundle_(bundle), workers_(workers > 0 ? workers : default_workers()) {}

std::vector<float> BatchRunner::restart(int start_layer, RestartPhase phase, const Tensor& states,
                                        int n, std::span<const ScoreTokens> score, int last_pos,
                                        const AblationSpec* ablation) const {
    const ModelConfig& cfg = bundle_.config;
    const int D = cfg.d_model;
    const int jobs = static_cast<int>(states.dim(0));
    if (states.rank() != 3 || states.dim(1) != n || states.dim(2) != D) {
        throw_data("restart states must be [jobs, n, d_model]");
    }
    if (static_cast<int>(score.size()) != jobs) throw_data("score tokens must match job count");
    if (ablation != nullptr) ablation->validate(cfg, n);
    AblationMask mask(ablation, cfg);
    const MeanTable* means = ablation != nullptr ? ablation->means : nullptr;

    std::vector<float> out(static_cast<size_t>(jobs), 0.0f);
    const int chunks = (jobs + kChunkJobs - 1) / kChunkJobs;
    parallel_for(chunks, workers_, [&](int64_t c0, int64_t c1) {
        Scratch s;
        Tensor X({static_cast<int64_t>(kChunkJobs) * n, D});
        for (int64_t c = c0; c < c1; ++c) {
            int jb = static_cast<int>(c) * kChunkJobs;
            int jc = std::min(kChunkJobs, jobs - jb);
            std::memcpy(X.data(), states.data() + static_cast<int64_t>(jb) * n * D,
                        sizeof(float) * static_cast<size_t>(jc) * n * D);
            run_chunk_layers(bundle_, start_layer, phase, X.data(), jc, n, jb, mask, s, means,
                             nullptr);
            score_chunk(bundle_, X.data(), jc, n, last_pos, score, jb, out.data());
        }
    });
    return out;
}

std::vector<float> BatchRunner::deltas(std::span<const std::vector<int>> seqs,
                                       std::span<const ScoreTokens> score, int last_pos,
                                       const AblationSpec* ablation) const {
    const int n = seqs.empty() ? 0 : static_cast<int>(seqs[0].size());
    validate_seqs(bundle_, seqs, n, last_pos);
    if (score.size() != seqs.size()) throw_data("score tokens must match batch size");
    if (ablation != nullptr) ablation->validate(bundle_.config, n);
    AblationMask mask(ablation, bundle_.config);
    const MeanTable* means = ablation != nullptr ? ablation->means : nullptr;
    const int jobs = static_cast<int>(seqs.size());
    const int D = bundle_.config.d_model;

    std::vector<float> out(static_cast<size_t>(jobs), 0.0f);
    const int chunks = (jobs + kChunkJobs - 1) / kChunkJobs;
    parallel_for(chunks, workers_, [&](int64_t c0, int64_t c1) {
        Scratch s;
        Tensor X({static_cast<int64_t>(kChunkJobs) * n, D});
        for (int64_t c = c0; c < c1; ++c) {
            int jb = static_cast<int>(c) * kChunkJobs;
            int jc = std::min(kChunkJobs, jobs - jb);
            for (int j = 0; j < jc; ++j) {
                embed_rows(bundle_, seqs[static_cast<size_t>(jb + j)],
                           X.data() + static_cast<int64_t>(j) * n * D);
            }
            run_chunk_layers(bundle_, 0, RestartPhase::attn, X.data(), jc, n, jb, mask, s, means,
                             nullptr);
            score_chunk(bundle_, X.data(), jc, n, last_pos, score, jb, out.data());
        }
    });
    return out;
}

std::vector<BatchRunner::SlimRun> BatchRunner::slim_runs(std::span<const std::vector<int>> seqs,
                                                         std::span<const ScoreTokens> score,
                                                         int last_pos) const {
    const int n = seqs.empty() ? 0 : static_cast<int>(seqs[0].size());
    validate_seqs(bundle_, seqs, n, last_pos);
    if (score.size() != seqs.size()) throw_data("score tokens must match batch size");
    const int jobs = static_cast<int>(seqs.size());
    const ModelConfig& cfg = bundle_.config;
    const int D = cfg.d_model;

    std::vector<SlimRun> out(static_cast<size_t>(jobs));
    for (auto& r : out) r.resid_pre = Tensor({cfg.n_layers, n, D});
    std::vector<float> ds(static_cast<size_t>(jobs), 0.0f);

    AblationMask mask(nullptr, cfg);
    const int chunks = (jobs + kChunkJobs - 1) / kChunkJobs;
    parallel_for(chunks, workers_, [&](int64_t c0, int64_t c1) {
        Scratch s;
        Tensor X({static_cast<int64_t>(kChunkJobs) * n, D});
        Observers obs;
        obs.on_resid_pre = [&](int layer, const float* rows, int job_begin, int job_count) {
            for (int j = 0; j < job_count; ++j) {
                std::memcpy(out[static_cast<size_t>(job_begin + j)].resid_pre.row(layer),
                            rows + static_cast<int64_t>(j) * n * D,
                            sizeof(float) * static_cast<size_t>(n) * D);
            }
        };
        for (int64_t c = c0; c < c1; ++c) {
            int jb = static_cast<int>(c) * kChunkJobs;
            int jc = std::min(kChunkJobs, jobs - jb);
            for (int j = 0; j < jc; ++j) {
                embed_rows(bundle_, seqs[static_cast<size_t>(jb + j)],
                           X.data() + static_cast<int64_t>(j) * n * D);
            }
            run_chunk_layers(bundle_, 0, RestartPhase::attn, X.data(), jc, n, jb, mask, s, nullptr,
                             &obs);
            score_chunk(bundle_, X.data(), jc, n, last_pos, score, jb, ds.data());
        }
    });
    for (int j = 0; j < jobs; ++j) out[static_cast<size_t>(j)].delta = ds[static_cast<size_t>(j)];
    return out;
}

MeanTable BatchRunner::head_means(std::span<const std::vector<int>> seqs, int n) const {
    validate_seqs(bundle_, seqs, n, 0);
    const ModelConfig& cfg = bundle_.config;
    const int D = cfg.d_model;
    const int jobs = static_cast<int>(seqs.size());

    // double accumulation keeps the mean stable under batch reorderings
    const int64_t cells = static_cast<int64_t>(cfg.n_layers) * cfg.n_heads * n * D;
    std::vector<std::vector<double>> partial(
        static_cast<size_t>(workers_), std::vector<double>(static_cast<size_t>(cells), 0.0));

    AblationMask mask(nullptr, cfg);
    const int chunks = (jobs + kChunkJobs - 1) / kChunkJobs;
    const int chunk_per_worker = (chunks + workers_ - 1) / workers_;
    parallel_for(chunks, workers_, [&](int64_t c0, int64_t c1) {
        size_t worker = static_cast<size_t>(c0 / std::max(1, chunk_per_worker));
        worker = std::min(worker, partial.size() - 1);
        std::vector<double>& acc = partial[worker];
        Scratch s;
        Tensor X({static_cast<int64_t>(kChunkJobs) * n, D});
        Observers obs;
        obs.on_head_out = [&](int layer, int head, int /*job*/, const float* head_rows) {
            double* dst =
                acc.data() +
                ((static_cast<int64_t>(layer) * cfg.n_heads + head) * n) * static_cast<int64_t>(D);
            for (int64_t i = 0; i < static_cast<int64_t>(n) * D; ++i) dst[i] += head_rows[i];
        };
        for (int64_t c = c0; c < c1; ++c) {
            int jb = static_cast<int>(c) * kChunkJobs;
            int jc = std::min(kChunkJobs, jobs - jb);
            for (int j = 0; j < jc; ++j) {
                embed_rows(bundle_, seqs[static_cast<size_t>(jb + j)],
                           X.data() + static_cast<int64_t>(j) * n * D);
            }
            run_chunk_layers(bundle_, 0, RestartPhase::attn, X.data(), jc, n, jb, mask, s, nullptr,
                             &obs);
        }
    });

    MeanTable table;
    table.n_layers = cfg.n_layers;
    table.n_heads = cfg.n_heads;
    table.n_positions = n;
    table.d_model = D;
    table.data = Tensor({cfg.n_layers, cfg.n_heads, n, D});
    float* out = table.data.data();
    const double inv = 1.0 / jobs;
    for (int64_t i = 0; i < cells; ++i) {
        double sum = 0.0;
        for (const auto& acc : partial) sum += acc[static_cast<size_t>(i)];
        out[i] = static_cast<float>(sum * inv);
    }
    return table;
}

std::vector<Tensor> BatchRunner::pattern_rows(std::span<const std::vector<int>> seqs,
                                              int query_pos) const {
    const int n = seqs.empty() ? 0 : static_cast<int>(seqs[0].size());
    validate_seqs(bundle_, seqs, n, query_pos);
    const ModelConfig& cfg = bundle_.config;
    const int D = cfg.d_model;
    const int jobs = static_cast<int>(seqs.size());

    std::vector<Tensor> out(static_cast<size_t>(jobs));
    for (auto& t : out) t = Tensor({cfg.n_layers, cfg.n_heads, n});

    AblationMask mask(nullptr, cfg);
    const int chunks = (jobs + kChunkJobs - 1) / kChunkJobs;
    parallel_for(chunks, workers_, [&](int64_t c0, int64_t c1) {
        Scratch s;
        Tensor X({static_cast<int64_t>(kChunkJobs) * n, D});
        Observers obs;
        obs.pattern_query = query_pos;
        obs.on_pattern_row = [&](int layer, int head, int job, const float* row) {
            std::memcpy(&out[static_cast<size_t>(job)](layer, head, 0), row,
                        sizeof(float) * static_cast<size_t>(n));
        };
        for (int64_t c = c0; c < c1; ++c) {
            int jb = static_cast<int>(c) * kChunkJobs;
            int jc = std::min(kChunkJobs, jobs - jb);
            for (int j = 0; j < jc; ++j) {
                embed_rows(bundle_, seqs[static_cast<size_t>(jb + j)],
                           X.data() + static_cast<int64_t>(j) * n * D);
            }
            run_chunk_layers(bundle_, 0, RestartPhase::attn, X.data(), jc, n, jb, mask, s, nullptr,
                             &obs);
        }
    });
    return out;
}

}  // namespace syl
