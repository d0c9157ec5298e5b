#include "sylloscope/sweeps.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include <Eigen/Dense>

#include "sylloscope/blocks.hpp"
#include "sylloscope/errors.hpp"
#include "sylloscope/metrics.hpp"
#include "sylloscope/runner.hpp"
#include "sylloscope/threadpool.hpp"

namespace syl {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

struct PairBatch {
    int n = 0;
    int last_pos = 0;
    int samples = 0;
    std::vector<std::vector<int>> base_seqs;   // the scored input
    std::vector<std::vector<int>> donor_seqs;  // where patched activations come from
    std::vector<ScoreTokens> score;
    std::vector<float> delta_plus, delta_minus;
    std::vector<BatchRunner::SlimRun> base_runs, donor_runs;
    RolePositions roles;  // template-aligned across the batch
};

void require_aligned(const std::vector<PromptPair>& pairs) {
    if (pairs.empty()) throw_data("sweep requires a non-empty pair batch");
    const auto& first = pairs.front().clean;
    for (const auto& pr : pairs) {
        if (pr.clean.tokens.size() != pr.corrupted.tokens.size()) {
            throw_data("pair has misaligned clean/corrupted lengths");
        }
        if (pr.clean.n_tokens() != first.n_tokens() || pr.clean.roles.m1 != first.roles.m1 ||
            pr.clean.roles.m2 != first.roles.m2 || pr.clean.roles.p != first.roles.p ||
            pr.clean.roles.s != first.roles.s) {
            throw_data("sweep batch must share one template (same length and role positions)");
        }
    }
}

PairBatch prepare(const BatchRunner& runner, const std::vector<PromptPair>& pairs,
                  Direction direction) {
    require_aligned(pairs);
    PairBatch b;
    b.samples = static_cast<int>(pairs.size());
    b.n = pairs.front().clean.n_tokens();
    b.last_pos = pairs.front().clean.roles.last;
    b.roles = pairs.front().clean.roles;
    for (const auto& pr : pairs) {
        const auto& scored = direction == Direction::denoise ? pr.corrupted : pr.clean;
        const auto& donor = direction == Direction::denoise ? pr.clean : pr.corrupted;
        b.base_seqs.push_back(scored.tokens);
        b.donor_seqs.push_back(donor.tokens);
        b.score.push_back({pr.clean.answer_token, pr.clean.distractor_token});
    }
    b.base_runs = runner.slim_runs(b.base_seqs, b.score, b.last_pos);
    b.donor_runs = runner.slim_runs(b.donor_seqs, b.score, b.last_pos);
    for (int j = 0; j < b.samples; ++j) {
        float base_delta = b.base_runs[static_cast<size_t>(j)].delta;
        float donor_delta = b.donor_runs[static_cast<size_t>(j)].delta;
        if (direction == Direction::denoise) {
            b.delta_minus.push_back(base_delta);
            b.delta_plus.push_back(donor_delta);
        } else {
            b.delta_plus.push_back(base_delta);
            b.delta_minus.push_back(donor_delta);
        }
    }
    return b;
}

struct CellAgg {
    double sum = 0.0, sumsq = 0.0;
    int n = 0;
    void add(float v) {
        sum += v;
        sumsq += static_cast<double>(v) * v;
        ++n;
    }
    float mean() const { return n == 0 ? kNaN : static_cast<float>(sum / n); }
    float stdev() const {
        if (n == 0) return kNaN;
        double m = sum / n;
        double var = std::max(0.0, sumsq / n - m * m);
        return static_cast<float>(std::sqrt(var));
    }
};

void fill_cells(SweepResult& r, const std::vector<CellAgg>& cells) {
    r.mean.resize(cells.size());
    r.stdev.resize(cells.size());
    r.count.resize(cells.size());
    for (size_t i = 0; i < cells.size(); ++i) {
        r.mean[i] = cells[i].mean();
        r.stdev[i] = cells[i].stdev();
        r.count[i] = cells[i].n;
    }
}

std::vector<std::string> position_labels(const PromptPair& pair) {
    const auto& inst = pair.clean;
    std::vector<std::string> labels(static_cast<size_t>(inst.n_tokens()));
    for (int i = 0; i < inst.n_tokens(); ++i) labels[static_cast<size_t>(i)] = "-";
    for (size_t k = 0; k < inst.roles.s.size(); ++k) {
        labels[static_cast<size_t>(inst.roles.s[k])] = "[s]";
    }
    labels[static_cast<size_t>(inst.roles.m1)] = "[m1]";
    labels[static_cast<size_t>(inst.roles.m2)] = "[m2]";
    labels[static_cast<size_t>(inst.roles.p)] = "[p]";
    labels[static_cast<size_t>(inst.roles.last)] = "[last]";
    return labels;
}

std::vector<std::string> head_labels(int n_heads) {
    std::vector<std::string> labels;
    labels.reserve(static_cast<size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) labels.push_back("h" + std::to_string(h));
    return labels;
}

}  // namespace

std::vector<std::pair<HeadRef, float>> SweepResult::ranked_heads() const {
    std::vector<std::pair<HeadRef, float>> out;
    if (axis != SweepAxis::layer_head) throw_data("ranked_heads requires a layer x head sweep");
    for (int l = 0; l < rows; ++l) {
        for (int h = 0; h < cols; ++h) {
            float m = mean_at(l, h);
            if (!std::isnan(m)) out.push_back({HeadRef{l, h}, m});
        }
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return out;
}

SweepResult residual_sweep(const ModelBundle& bundle, const std::vector<PromptPair>& pairs,
                           Direction direction, const SweepOptions& options) {
    BatchRunner runner(bundle, options.workers);
    PairBatch b = prepare(runner, pairs, direction);
    const ModelConfig& cfg = bundle.config;
    const int D = cfg.d_model;
    const int S = b.samples;
    const int N = b.n;

    SweepResult res;
    res.axis = SweepAxis::layer_position;
    res.direction = direction;
    res.intervention = pairs.front().intervention;
    res.rows = cfg.n_layers;
    res.cols = N;
    res.n = S;
    res.col_labels = position_labels(pairs.front());
    std::vector<CellAgg> cells(static_cast<size_t>(res.rows) * res.cols);

    std::vector<ScoreTokens> tiled(static_cast<size_t>(N) * S);
    for (int pos = 0; pos < N; ++pos) {
        for (int j = 0; j < S; ++j) tiled[static_cast<size_t>(pos) * S + j] = b.score[static_cast<size_t>(j)];
    }

    Tensor states({static_cast<int64_t>(N) * S, N, D});
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int pos = 0; pos < N; ++pos) {
            for (int j = 0; j < S; ++j) {
                float* dst = states.row(static_cast<int64_t>(pos) * S + j);
                std::memcpy(dst, b.base_runs[static_cast<size_t>(j)].resid_pre.row(l),
                            sizeof(float) * static_cast<size_t>(N) * D);
                std::memcpy(dst + static_cast<int64_t>(pos) * D,
                            b.donor_runs[static_cast<size_t>(j)].resid_pre.row(l) +
                                static_cast<int64_t>(pos) * D,
                            sizeof(float) * static_cast<size_t>(D));
            }
        }
        std::vector<float> deltas = runner.restart(l, RestartPhase::attn, states, N, tiled,
                                                   b.last_pos);
        for (int pos = 0; pos < N; ++pos) {
            for (int j = 0; j < S; ++j) {
                auto s = patching_score(b.delta_plus[static_cast<size_t>(j)],
                                        b.delta_minus[static_cast<size_t>(j)],
                                        deltas[static_cast<size_t>(pos) * S + j]);
                if (s) cells[static_cast<size_t>(l) * N + pos].add(*s);
            }
        }
    }
    fill_cells(res, cells);
    return res;
}

namespace {

/// Shared core of the head-scoped sweeps. `build_states` fills, for every
/// (variant, head, sample), the restart state rows at the given layer.
SweepResult head_sweep_core(const ModelBundle& bundle, const std::vector<PromptPair>& pairs,
                            Direction direction, const SweepOptions& options, bool patch_values,
                            const std::vector<std::vector<int>>& value_position_variants,
                            std::vector<SweepResult>* variant_results) {
    BatchRunner runner(bundle, options.workers);
    PairBatch b = prepare(runner, pairs, direction);
    const ModelConfig& cfg = bundle.config;
    const int D = cfg.d_model;
    const int H = cfg.n_heads;
    const int dh = cfg.d_head;
    const int S = b.samples;
    const int N = b.n;
    const int V = patch_values ? static_cast<int>(value_position_variants.size()) : 1;

    auto make_result = [&]() {
        SweepResult r;
        r.axis = SweepAxis::layer_head;
        r.direction = direction;
        r.intervention = pairs.front().intervention;
        r.rows = cfg.n_layers;
        r.cols = H;
        r.n = S;
        r.col_labels = head_labels(H);
        return r;
    };
    std::vector<std::vector<CellAgg>> cells(
        static_cast<size_t>(V), std::vector<CellAgg>(static_cast<size_t>(cfg.n_layers) * H));

    std::vector<ScoreTokens> tiled(static_cast<size_t>(V) * H * S);
    for (int i = 0; i < V * H; ++i) {
        for (int j = 0; j < S; ++j) tiled[static_cast<size_t>(i) * S + j] = b.score[static_cast<size_t>(j)];
    }

    Tensor states({static_cast<int64_t>(V) * H * S, N, D});
    const int workers = runner.workers();

    for (int l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& lw = bundle.layers[static_cast<size_t>(l)];

        // per sample: recompute attention internals at this layer for the
        // base and donor runs, then write patched resid_mid rows per head
        parallel_for(S, workers, [&](int64_t j0, int64_t j1) {
            blocks::AttnScratch scratch;
            Tensor xn({N, D});
            std::vector<Tensor> base_pat(static_cast<size_t>(H), Tensor({N, N}));
            std::vector<Tensor> base_val(static_cast<size_t>(H), Tensor({N, dh}));
            std::vector<Tensor> base_ho(static_cast<size_t>(H), Tensor({N, D}));
            std::vector<Tensor> donor_val(static_cast<size_t>(H), Tensor({N, dh}));
            std::vector<Tensor> donor_ho(static_cast<size_t>(H), Tensor({N, D}));
            Tensor resid_mid({N, D});
            Tensor dv({N, dh});

            for (int64_t j = j0; j < j1; ++j) {
                const float* base_pre = b.base_runs[static_cast<size_t>(j)].resid_pre.row(l);
                const float* donor_pre = b.donor_runs[static_cast<size_t>(j)].resid_pre.row(l);

                blocks::layer_norm(base_pre, N, D, lw.ln1_gamma.data(), lw.ln1_beta.data(),
                                   cfg.ln_epsilon, xn.data());
                blocks::attention_details(lw, cfg, xn.data(), N, scratch,
                                          patch_values ? base_pat.data() : nullptr,
                                          patch_values ? base_val.data() : nullptr,
                                          base_ho.data());

                blocks::layer_norm(donor_pre, N, D, lw.ln1_gamma.data(), lw.ln1_beta.data(),
                                   cfg.ln_epsilon, xn.data());
                blocks::attention_details(lw, cfg, xn.data(), N, scratch, nullptr,
                                          patch_values ? donor_val.data() : nullptr,
                                          patch_values ? nullptr : donor_ho.data());

                MapMat RM(resid_mid.data(), N, D);
                RM = CMapMat(base_pre, N, D);
                for (int h = 0; h < H; ++h) {
                    RM.noalias() += CMapMat(base_ho[static_cast<size_t>(h)].data(), N, D);
                }
                RM.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(lw.b_o.data(), D);

                for (int v = 0; v < V; ++v) {
                    for (int h = 0; h < H; ++h) {
                        float* dst = states.row((static_cast<int64_t>(v) * H + h) * S + j);
                        MapMat out(dst, N, D);
                        out = RM;
                        if (!patch_values) {
                            out.noalias() -= CMapMat(base_ho[static_cast<size_t>(h)].data(), N, D);
                            out.noalias() += CMapMat(donor_ho[static_cast<size_t>(h)].data(), N, D);
                        } else {
                            // head delta via the baseline pattern:
                            // (P_h @ dv) @ W_o^h with dv nonzero only at the
                            // variant's key positions
                            dv = Tensor({N, dh});
                            const auto& positions = value_position_variants[static_cast<size_t>(v)];
                            const Tensor& bv = base_val[static_cast<size_t>(h)];
                            const Tensor& nv = donor_val[static_cast<size_t>(h)];
                            if (positions.empty()) {
                                MapMat(dv.data(), N, dh) =
                                    CMapMat(nv.data(), N, dh) - CMapMat(bv.data(), N, dh);
                            } else {
                                for (int pos : positions) {
                                    for (int t = 0; t < dh; ++t) {
                                        dv(pos, t) = nv(pos, t) - bv(pos, t);
                                    }
                                }
                            }
                            MapMat P(base_pat[static_cast<size_t>(h)].data(), N, N);
                            Tensor ctx({N, dh});
                            MapMat C(ctx.data(), N, dh);
                            C.noalias() = P * MapMat(dv.data(), N, dh);
                            CMapMat Wo(lw.w_o.data() + static_cast<int64_t>(h) * dh * D, dh, D);
                            out.noalias() += C * Wo;
                        }
                    }
                }
            }
        });

        std::vector<float> deltas =
            runner.restart(l, RestartPhase::mlp, states, N, tiled, b.last_pos);
        for (int v = 0; v < V; ++v) {
            for (int h = 0; h < H; ++h) {
                for (int j = 0; j < S; ++j) {
                    auto s = patching_score(
                        b.delta_plus[static_cast<size_t>(j)], b.delta_minus[static_cast<size_t>(j)],
                        deltas[(static_cast<size_t>(v) * H + h) * S + j]);
                    if (s) cells[static_cast<size_t>(v)][static_cast<size_t>(l) * H + h].add(*s);
                }
            }
        }
    }

    if (variant_results != nullptr) {
        variant_results->clear();
        for (int v = 0; v < V; ++v) {
            SweepResult r = make_result();
            fill_cells(r, cells[static_cast<size_t>(v)]);
            variant_results->push_back(std::move(r));
        }
        return variant_results->front();
    }
    SweepResult r = make_result();
    fill_cells(r, cells[0]);
    return r;
}

}  // namespace

SweepResult head_output_sweep(const ModelBundle& bundle, const std::vector<PromptPair>& pairs,
                              Direction direction, const SweepOptions& options) {
    return head_sweep_core(bundle, pairs, direction, options, /*patch_values=*/false, {{}},
                           nullptr);
}

SweepResult head_value_sweep(const ModelBundle& bundle, const std::vector<PromptPair>& pairs,
                             Direction direction, const SweepOptions& options) {
    return head_sweep_core(bundle, pairs, direction, options, /*patch_values=*/true, {{}},
                           nullptr);
}

ValueSweepByRole head_value_sweep_by_role(const ModelBundle& bundle,
                                          const std::vector<PromptPair>& pairs,
                                          Direction direction, const SweepOptions& options) {
    require_aligned(pairs);
    const RolePositions& roles = pairs.front().clean.roles;
    std::vector<std::vector<int>> variants = {
        {},            // all positions
        {roles.p},     // S[p]
        {roles.m1},    // S[m1]
        {roles.m2},    // S[m2]
    };
    std::vector<SweepResult> results;
    head_sweep_core(bundle, pairs, direction, options, /*patch_values=*/true, variants, &results);
    ValueSweepByRole out;
    out.all = std::move(results[0]);
    out.p = std::move(results[1]);
    out.m1 = std::move(results[2]);
    out.m2 = std::move(results[3]);
    return out;
}

int AttentionProfile::group_index(const std::string& label) const {
    for (size_t g = 0; g < group_labels.size(); ++g) {
        if (group_labels[g] == label) return static_cast<int>(g);
    }
    throw_data("attention profile has no group labeled " + label);
}

AttentionProfile attention_profile(const ModelBundle& bundle,
                                   const std::vector<SyllogismInstance>& instances,
                                   Role query_role, const SweepOptions& options) {
    if (instances.empty()) throw_data("attention profile requires a non-empty batch");
    const auto& first = instances.front();
    for (const auto& inst : instances) {
        if (inst.n_tokens() != first.n_tokens() || inst.roles.p != first.roles.p ||
            inst.roles.m1 != first.roles.m1 || inst.roles.m2 != first.roles.m2 ||
            inst.roles.s != first.roles.s) {
            throw_data("attention profile batch must share one template");
        }
    }

    AttentionProfile prof;
    prof.query_role = query_role;
    prof.query_position = first.positions_of(query_role).front();
    prof.n_layers = bundle.config.n_layers;
    prof.n_heads = bundle.config.n_heads;

    // group positions: role positions stand alone, runs between them pool as "-"
    const int N = first.n_tokens();
    std::vector<std::string> pos_label(static_cast<size_t>(N), "-");
    for (int pos : first.roles.s) pos_label[static_cast<size_t>(pos)] = "[s]";
    pos_label[static_cast<size_t>(first.roles.m1)] = "[m1]";
    pos_label[static_cast<size_t>(first.roles.m2)] = "[m2]";
    pos_label[static_cast<size_t>(first.roles.p)] = "[p]";
    pos_label[static_cast<size_t>(first.roles.last)] = "[last]";
    int i = 0;
    while (i < N) {
        if (pos_label[static_cast<size_t>(i)] == "-") {
            std::vector<int> group;
            while (i < N && pos_label[static_cast<size_t>(i)] == "-") group.push_back(i++);
            prof.group_labels.push_back("-");
            prof.group_positions.push_back(std::move(group));
        } else {
            prof.group_labels.push_back(pos_label[static_cast<size_t>(i)]);
            prof.group_positions.push_back({i});
            ++i;
        }
    }

    BatchRunner runner(bundle, options.workers);
    std::vector<std::vector<int>> seqs;
    seqs.reserve(instances.size());
    for (const auto& inst : instances) seqs.push_back(inst.tokens);
    std::vector<Tensor> rows = runner.pattern_rows(seqs, prof.query_position);

    const int G = prof.n_groups();
    std::vector<CellAgg> cells(static_cast<size_t>(prof.n_layers) * prof.n_heads * G);
    for (const Tensor& sample : rows) {
        for (int l = 0; l < prof.n_layers; ++l) {
            for (int h = 0; h < prof.n_heads; ++h) {
                for (int g = 0; g < G; ++g) {
                    double pooled = 0.0;
                    for (int pos : prof.group_positions[static_cast<size_t>(g)]) {
                        pooled += sample(l, h, pos);
                    }
                    pooled /= static_cast<double>(prof.group_positions[static_cast<size_t>(g)].size());
                    cells[(static_cast<size_t>(l) * prof.n_heads + h) * G + g].add(
                        static_cast<float>(pooled));
                }
            }
        }
    }
    prof.mean.resize(cells.size());
    prof.stdev.resize(cells.size());
    for (size_t c = 0; c < cells.size(); ++c) {
        prof.mean[c] = cells[c].mean();
        prof.stdev[c] = cells[c].stdev();
    }
    return prof;
}

}  // namespace syl
