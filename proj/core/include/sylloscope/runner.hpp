#pragma once

#include <span>
#include <vector>

#include "sylloscope/ablation.hpp"
#include "sylloscope/bundle.hpp"
#include "sylloscope/tensor.hpp"

namespace syl {

/// Where a restarted computation picks up at its start layer: `attn` states
/// are resid_pre (the attention sublayer still runs), `mlp` states are
/// resid_mid (the attention sublayer is already folded in).
enum class RestartPhase { attn, mlp };

struct ScoreTokens {
    int answer = -1;
    int distractor = -1;
};

/// Batched CPU engine for intervention sweeps. Jobs are independent
/// same-length sequences stacked into one row matrix so the per-layer GEMMs
/// run at full width; work is split across workers in fixed chunks, so
/// results are deterministic for a given worker-independent job order.
///
/// The key cost saver: a patch at layer l leaves everything below l
/// untouched, so sweep drivers restart from cached baseline residuals
/// instead of re-running the whole stack per site.
class BatchRunner {
public:
    explicit BatchRunner(const ModelBundle& bundle, int workers = 0);

    struct SlimRun {
        Tensor resid_pre;  // [L, n, D]
        float delta = 0.0f;
    };

    /// Full forwards caching resid_pre at every layer plus the scored logit
    /// difference. All sequences must share the same length.
    std::vector<SlimRun> slim_runs(std::span<const std::vector<int>> seqs,
                                   std::span<const ScoreTokens> score, int last_pos) const;

    /// Full forwards returning only logit differences; optional mean ablation.
    std::vector<float> deltas(std::span<const std::vector<int>> seqs,
                              std::span<const ScoreTokens> score, int last_pos,
                              const AblationSpec* ablation = nullptr) const;

    /// Runs layers [start_layer, L) over J stacked jobs. `states` is [J, n, D]
    /// holding each job's residual rows at the restart point. Ablation, if
    /// given, applies to layers >= start_layer.
    std::vector<float> restart(int start_layer, RestartPhase phase, const Tensor& states, int n,
                               std::span<const ScoreTokens> score, int last_pos,
                               const AblationSpec* ablation = nullptr) const;

    /// Position-wise batch means of per-head outputs over clean runs.
    MeanTable head_means(std::span<const std::vector<int>> seqs, int n) const;

    /// Per-sample attention rows from a fixed query position: [L, H, n] each.
    std::vector<Tensor> pattern_rows(std::span<const std::vector<int>> seqs, int query_pos) const;

    int workers() const { return workers_; }
    const ModelBundle& bundle() const { return bundle_; }

private:
    const ModelBundle& bundle_;
    int workers_;
};

}  // namespace syl
