#include "sylloscope/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "sylloscope/errors.hpp"

namespace syl {

RunScore logit_difference(const ActivationCache& cache, const SyllogismInstance& instance) {
    if (!cache.options.logits || cache.logits.empty()) {
        throw_data("cache has no logits; run forward with logits enabled");
    }
    if (cache.n_tokens != instance.n_tokens()) {
        throw_data("cache was produced from a different token sequence length");
    }
    const int vocab = static_cast<int>(cache.logits.dim(1));
    if (instance.answer_token < 0 || instance.answer_token >= vocab ||
        instance.distractor_token < 0 || instance.distractor_token >= vocab) {
        throw_data("token id out of vocab in instance scoring");
    }
    RunScore score;
    score.delta = cache.logit(instance.roles.last, instance.answer_token) -
                  cache.logit(instance.roles.last, instance.distractor_token);
    score.correct = score.delta > 0.0f;
    return score;
}

std::optional<float> patching_score(float delta_clean, float delta_corrupted,
                                    float delta_patched) {
    const double den = static_cast<double>(delta_clean) - delta_corrupted;
    if (std::fabs(den) < 1e-9) return std::nullopt;
    double s = (static_cast<double>(delta_patched) - delta_corrupted) / den;
    return static_cast<float>(std::clamp(s, -1.0, 1.0));
}

std::optional<float> path_patching_score(float delta_clean, float delta_corrupted,
                                         float delta_patched) {
    const double den = static_cast<double>(delta_clean) - delta_corrupted;
    if (std::fabs(den) < 1e-9) return std::nullopt;
    double s = (static_cast<double>(delta_patched) - delta_clean) / den;
    return static_cast<float>(std::clamp(s, -1.0, 1.0));
}

BatchStats batch_stats(std::span<const float> values) {
    if (values.empty()) throw_data("batch_stats requires at least one value");
    BatchStats st;
    st.count = static_cast<int>(values.size());
    double sum = 0.0;
    for (float v : values) sum += v;
    st.mean = sum / st.count;
    double sq = 0.0;
    for (float v : values) {
        double d = v - st.mean;
        sq += d * d;
    }
    st.stddev = std::sqrt(sq / st.count);
    return st;
}

double accuracy(std::span<const float> deltas) {
    if (deltas.empty()) throw_data("accuracy requires at least one delta");
    int correct = 0;
    for (float d : deltas) correct += d > 0.0f ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(deltas.size());
}

}  // namespace syl
