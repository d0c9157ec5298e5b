#pragma once

#include <span>

#include "sylloscope/ablation.hpp"
#include "sylloscope/bundle.hpp"
#include "sylloscope/cache.hpp"
#include "sylloscope/patch.hpp"

namespace syl {

/// Full instrumented forward pass. At every hook site listed in
/// `patch->targets` the computed activation is replaced by the donor's value
/// (activation patching) or, for heads listed in `ablation`, by the stored
/// batch mean (mean ablation) before any downstream computation. The cache
/// records post-replacement values.
ActivationCache forward(const ModelBundle& bundle, std::span<const int> tokens,
                        const PatchSpec* patch = nullptr,
                        const ActivationCache* donor = nullptr,
                        const AblationSpec* ablation = nullptr,
                        CacheOptions options = CacheOptions::full());

}  // namespace syl
