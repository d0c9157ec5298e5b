#pragma once

#include <string>
#include <vector>

#include "sylloscope/bundle.hpp"
#include "sylloscope/dataset.hpp"
#include "sylloscope/patch.hpp"

namespace syl {

enum class SweepAxis { layer_position, layer_head };

/// Mean patching scores over a batch of prompt pairs, one cell per site.
/// Cells whose per-sample scores were all degenerate hold NaN and count 0.
struct SweepResult {
    SweepAxis axis = SweepAxis::layer_head;
    Direction direction = Direction::denoise;
    Intervention intervention = Intervention::middle_term;
    int rows = 0;  // layers
    int cols = 0;  // positions or heads
    int n = 0;     // samples per cell attempted
    std::vector<float> mean, stdev;  // rows*cols
    std::vector<int> count;
    std::vector<std::string> col_labels;

    float mean_at(int r, int c) const { return mean[static_cast<size_t>(r) * cols + c]; }
    float stdev_at(int r, int c) const { return stdev[static_cast<size_t>(r) * cols + c]; }
    int count_at(int r, int c) const { return count[static_cast<size_t>(r) * cols + c]; }

    /// Heads ranked by descending mean score (layer_head axis only).
    std::vector<std::pair<HeadRef, float>> ranked_heads() const;
};

struct SweepOptions {
    int workers = 0;  // 0 = hardware concurrency
};

/// Patches resid_pre one (layer, position) at a time.
SweepResult residual_sweep(const ModelBundle& bundle, const std::vector<PromptPair>& pairs,
                           Direction direction, const SweepOptions& options = {});

/// Patches one head's output at all positions jointly.
SweepResult head_output_sweep(const ModelBundle& bundle, const std::vector<PromptPair>& pairs,
                              Direction direction, const SweepOptions& options = {});

/// Patches one head's value vectors at all positions jointly.
SweepResult head_value_sweep(const ModelBundle& bundle, const std::vector<PromptPair>& pairs,
                             Direction direction, const SweepOptions& options = {});

/// Value patching scoped to single role positions, for mover localization:
/// S over all positions plus S[p], S[m1], S[m2].
struct ValueSweepByRole {
    SweepResult all, p, m1, m2;
};
ValueSweepByRole head_value_sweep_by_role(const ModelBundle& bundle,
                                          const std::vector<PromptPair>& pairs,
                                          Direction direction, const SweepOptions& options = {});

/// Batch-mean attention weights from one query role position to every key
/// position, with non-role positions pooled into dash groups.
struct AttentionProfile {
    Role query_role = Role::p;
    int query_position = -1;
    int n_layers = 0, n_heads = 0;
    std::vector<std::string> group_labels;          // e.g. "-", "[s]", "[m1]", ...
    std::vector<std::vector<int>> group_positions;  // per group
    std::vector<float> mean, stdev;                 // L*H*G

    int n_groups() const { return static_cast<int>(group_labels.size()); }
    int group_index(const std::string& label) const;
    float mean_at(int layer, int head, int group) const {
        return mean[(static_cast<size_t>(layer) * n_heads + head) * group_labels.size() + group];
    }
    float stdev_at(int layer, int head, int group) const {
        return stdev[(static_cast<size_t>(layer) * n_heads + head) * group_labels.size() + group];
    }
};

AttentionProfile attention_profile(const ModelBundle& bundle,
                                   const std::vector<SyllogismInstance>& instances,
                                   Role query_role, const SweepOptions& options = {});

}  // namespace syl
