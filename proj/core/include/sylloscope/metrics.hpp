#pragma once

#include <optional>
#include <span>

#include "sylloscope/cache.hpp"
#include "sylloscope/dataset.hpp"

namespace syl {

struct RunScore {
    float delta = 0.0f;     // logit(p) - logit(m) at the last position
    bool correct = false;   // strictly positive delta
};

/// Reads the logits at the instance's last position and scores the answer
/// against the middle-term distractor.
RunScore logit_difference(const ActivationCache& cache, const SyllogismInstance& instance);

/// Normalized restoration fraction S = (d_patched - d_corrupted) /
/// (d_clean - d_corrupted), clamped to [-1, 1]. Returns nullopt when the
/// denominator is degenerate (|d_clean - d_corrupted| < 1e-9).
std::optional<float> patching_score(float delta_clean, float delta_corrupted, float delta_patched);

/// Path-patching effect, centered so no-effect is exactly 0:
/// (d_patched - d_clean) / (d_clean - d_corrupted), clamped to [-1, 1].
/// Under noising, negative values mean the patched component was carrying
/// signal that helped the clean prediction.
std::optional<float> path_patching_score(float delta_clean, float delta_corrupted,
                                         float delta_patched);

struct BatchStats {
    double mean = 0.0;
    double stddev = 0.0;  // population
    int count = 0;
};

BatchStats batch_stats(std::span<const float> values);

/// Fraction of samples with strictly positive delta.
double accuracy(std::span<const float> deltas);

}  // namespace syl
