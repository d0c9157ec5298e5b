#include "sylloscope/circuits.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "sylloscope/errors.hpp"
#include "sylloscope/runner.hpp"

namespace syl {
namespace {

struct InstanceBatch {
    int n = 0;
    int last = 0;
    std::vector<std::vector<int>> seqs;
    std::vector<ScoreTokens> score;
};

InstanceBatch to_batch(const std::vector<SyllogismInstance>& instances) {
    if (instances.empty()) throw_data("ablation requires a non-empty instance batch");
    InstanceBatch b;
    b.n = instances.front().n_tokens();
    b.last = instances.front().roles.last;
    for (const auto& inst : instances) {
        if (inst.n_tokens() != b.n) throw_data("ablation batch has mixed sequence lengths");
        b.seqs.push_back(inst.tokens);
        b.score.push_back({inst.answer_token, inst.distractor_token});
    }
    return b;
}

BatchStats stats_of(const std::vector<float>& deltas) {
    return batch_stats(std::span<const float>(deltas.data(), deltas.size()));
}

AblationCurve run_curve(const ModelBundle& bundle, const CircuitSpec& circuit,
                        const std::vector<SyllogismInstance>& instances, const MeanTable& means,
                        AblationMode mode, const SweepOptions& options) {
    circuit.validate(bundle.config);
    InstanceBatch b = to_batch(instances);
    BatchRunner runner(bundle, options.workers);

    // baseline states cached once; every step restarts at its first ablated layer
    std::vector<BatchRunner::SlimRun> base = runner.slim_runs(b.seqs, b.score, b.last);
    std::vector<float> baseline(base.size());
    for (size_t j = 0; j < base.size(); ++j) baseline[j] = base[j].delta;

    AblationCurve curve;
    curve.mode = mode;
    BatchStats bs = stats_of(baseline);
    curve.baseline_mean = bs.mean;
    curve.baseline_std = bs.stddev;
    curve.n = bs.count;

    std::vector<HeadRef> order = circuit.heads;
    if (mode == AblationMode::necessity) {
        // downstream to upstream
        std::sort(order.begin(), order.end(), [](const HeadRef& a, const HeadRef& b2) {
            if (a.layer != b2.layer) return a.layer > b2.layer;
            return a.head < b2.head;
        });
    } else {
        // restore upstream to downstream
        std::sort(order.begin(), order.end(), [](const HeadRef& a, const HeadRef& b2) {
            if (a.layer != b2.layer) return a.layer < b2.layer;
            return a.head < b2.head;
        });
    }

    const int D = bundle.config.d_model;
    Tensor states({static_cast<int64_t>(b.seqs.size()), b.n, D});
    auto step_deltas = [&](const std::vector<HeadRef>& ablated) -> std::vector<float> {
        if (ablated.empty()) return baseline;
        int start = bundle.config.n_layers - 1;
        for (const auto& h : ablated) start = std::min(start, h.layer);
        for (size_t j = 0; j < base.size(); ++j) {
            std::memcpy(states.row(static_cast<int64_t>(j)), base[j].resid_pre.row(start),
                        sizeof(float) * static_cast<size_t>(b.n) * D);
        }
        AblationSpec spec{&means, ablated};
        return runner.restart(start, RestartPhase::attn, states, b.n, b.score, b.last, &spec);
    };

    const int K = static_cast<int>(order.size());
    for (int k = 0; k <= K; ++k) {
        std::vector<HeadRef> changed(order.begin(), order.begin() + k);
        std::vector<HeadRef> ablated;
        if (mode == AblationMode::necessity) {
            ablated = changed;
        } else {
            // ablate every head except the restored prefix
            std::set<HeadRef> restored(changed.begin(), changed.end());
            for (int l = 0; l < bundle.config.n_layers; ++l) {
                for (int h = 0; h < bundle.config.n_heads; ++h) {
                    HeadRef ref{l, h};
                    if (restored.count(ref) == 0) ablated.push_back(ref);
                }
            }
        }
        std::vector<float> deltas = step_deltas(ablated);
        BatchStats st = stats_of(deltas);
        curve.steps.push_back({changed, st.mean, st.stddev});
    }
    return curve;
}

}  // namespace

CircuitSpec CircuitSpec::default_circuit() {
    CircuitSpec c;
    c.name = "symbolic-default";
    c.heads = {
        {5, 8},  {6, 1},  {6, 15}, {7, 2},    // induction
        {8, 1},                               // previous-token
        {11, 10},                             // m-suppression
        {9, 9},  {11, 1}, {12, 1}, {14, 14},  // movers
        {15, 14}, {17, 2}, {18, 12}, {19, 1},
        {23, 10},
    };
    return c;
}

void CircuitSpec::validate(const ModelConfig& config) const {
    std::set<HeadRef> seen;
    for (const auto& h : heads) {
        if (h.layer < 0 || h.layer >= config.n_layers || h.head < 0 || h.head >= config.n_heads) {
            throw_data("circuit head out of range: " + std::to_string(h.layer) + "." +
                       std::to_string(h.head));
        }
        if (!seen.insert(h).second) {
            throw_data("circuit contains duplicate head " + std::to_string(h.layer) + "." +
                       std::to_string(h.head));
        }
    }
}

MeanTable mean_table(const ModelBundle& bundle, const std::vector<SyllogismInstance>& instances,
                     const SweepOptions& options) {
    InstanceBatch b = to_batch(instances);
    BatchRunner runner(bundle, options.workers);
    return runner.head_means(b.seqs, b.n);
}

AblationCurve necessity_curve(const ModelBundle& bundle, const CircuitSpec& circuit,
                              const std::vector<SyllogismInstance>& instances,
                              const MeanTable& means, const SweepOptions& options) {
    return run_curve(bundle, circuit, instances, means, AblationMode::necessity, options);
}

AblationCurve sufficiency_curve(const ModelBundle& bundle, const CircuitSpec& circuit,
                                const std::vector<SyllogismInstance>& instances,
                                const MeanTable& means, const SweepOptions& options) {
    return run_curve(bundle, circuit, instances, means, AblationMode::sufficiency, options);
}

ConditionReport evaluate_conditions(const AblationCurve& necessity,
                                    const AblationCurve& sufficiency,
                                    std::span<const float> baseline_deltas,
                                    const ConditionMargins& margins) {
    if (necessity.steps.empty() || sufficiency.steps.empty()) {
        throw_data("condition evaluation requires non-empty curves");
    }
    ConditionReport r;
    BatchStats bs = batch_stats(baseline_deltas);
    r.baseline_mean = bs.mean;
    r.necessity_final = necessity.final_step().mean;
    r.sufficiency_final = sufficiency.final_step().mean;
    r.c1 = r.necessity_final < margins.c1_factor * r.baseline_mean;
    r.c2 = r.sufficiency_final >= margins.c2_factor * r.baseline_mean;
    r.c3 = r.baseline_mean > 0.0;
    r.accuracy = accuracy(baseline_deltas);
    return r;
}

std::vector<MoverClassification> classify_movers(const ValueSweepByRole& sweeps) {
    const SweepResult& all = sweeps.all;
    if (all.axis != SweepAxis::layer_head) throw_data("mover classification needs head sweeps");
    auto same_shape = [&](const SweepResult& r) {
        return r.rows == all.rows && r.cols == all.cols;
    };
    if (!same_shape(sweeps.p) || !same_shape(sweeps.m1) || !same_shape(sweeps.m2)) {
        throw_data("role-scoped sweeps must share the all-position sweep's shape");
    }

    std::vector<MoverClassification> out;
    std::vector<float> magnitudes;
    for (int l = 0; l < all.rows; ++l) {
        for (int h = 0; h < all.cols; ++h) {
            MoverClassification m;
            m.head = {l, h};
            m.s_all = all.mean_at(l, h);
            m.s_p = sweeps.p.mean_at(l, h);
            m.s_m1 = sweeps.m1.mean_at(l, h);
            m.s_m2 = sweeps.m2.mean_at(l, h);
            m.ppd = std::fabs(m.s_p) - std::fabs(m.s_m1 + m.s_m2);
            const bool pos_ppd = m.ppd >= 0.0f;
            const bool pos_all = m.s_all >= 0.0f;
            m.quadrant = pos_ppd ? (pos_all ? MoverQuadrant::positive_copy
                                            : MoverQuadrant::negative_suppression)
                                 : (pos_all ? MoverQuadrant::positive_suppression
                                            : MoverQuadrant::negative_copy);
            if (!std::isnan(m.s_all)) magnitudes.push_back(std::fabs(m.s_all));
            out.push_back(m);
        }
    }
    if (magnitudes.empty()) return out;
    BatchStats st = batch_stats(magnitudes);
    const double tau = st.mean + 2.0 * st.stddev;
    for (auto& m : out) {
        m.outlier = !std::isnan(m.s_all) && std::fabs(m.s_all) > tau;
    }
    return out;
}

const char* quadrant_name(MoverQuadrant q) {
    switch (q) {
        case MoverQuadrant::positive_copy: return "positive_copy";
        case MoverQuadrant::positive_suppression: return "positive_suppression";
        case MoverQuadrant::negative_copy: return "negative_copy";
        case MoverQuadrant::negative_suppression: return "negative_suppression";
    }
    return "?";
}

const char* ablation_mode_name(AblationMode m) {
    return m == AblationMode::necessity ? "necessity" : "sufficiency";
}

}  // namespace syl
