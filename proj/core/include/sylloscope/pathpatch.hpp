#pragma once

#include <span>
#include <vector>

#include "sylloscope/bundle.hpp"
#include "sylloscope/dataset.hpp"
#include "sylloscope/metrics.hpp"
#include "sylloscope/patch.hpp"
#include "sylloscope/sweeps.hpp"

namespace syl {

struct PathPatchResult {
    HeadRef sender;
    HeadRef receiver;
    BatchStats stats;  // over per-sample path scores; 0 = no effect
    int missing = 0;   // degenerate-denominator samples excluded from stats
};

/// Noising path patching: a clean forward runs with every head's output
/// frozen to its clean value (MLPs recomputed) except the sender, which is
/// replaced by its corrupted-run output; the receiver's resulting output is
/// recorded and spliced into a final clean run for scoring. Only the
/// sender -> receiver route through the residual stream can carry the
/// corruption, so negative scores mean the route carries signal the clean
/// prediction relies on.
std::vector<PathPatchResult> path_patch_senders(const ModelBundle& bundle,
                                                const std::vector<PromptPair>& pairs,
                                                std::span<const HeadRef> senders,
                                                HeadRef receiver,
                                                const SweepOptions& options = {});

PathPatchResult path_patch(const ModelBundle& bundle, const std::vector<PromptPair>& pairs,
                           HeadRef sender, HeadRef receiver, const SweepOptions& options = {});

}  // namespace syl
