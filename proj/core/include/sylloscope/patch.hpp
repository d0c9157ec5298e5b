#pragma once

#include <vector>

#include "sylloscope/config.hpp"

namespace syl {

/// Hook sites where an activation can be replaced mid-forward.
enum class Site { resid_pre, head_out, head_value, head_pattern, mlp_out };

/// denoise: run the corrupted input and splice in clean activations.
/// noise:   run the clean input and splice in corrupted activations.
enum class Direction { denoise, noise };

struct HeadRef {
    int layer = 0;
    int head = 0;
    friend bool operator==(const HeadRef&, const HeadRef&) = default;
    friend auto operator<=>(const HeadRef&, const HeadRef&) = default;
};

/// One splice target. `positions` selects sequence positions (query rows for
/// head_pattern); empty means all positions. `head` is required for
/// head-scoped sites and ignored otherwise.
struct PatchTarget {
    Site site = Site::resid_pre;
    int layer = 0;
    int head = -1;
    std::vector<int> positions;
};

struct PatchSpec {
    Direction direction = Direction::denoise;
    std::vector<PatchTarget> targets;

    void validate(const ModelConfig& config, int n_tokens) const;
};

const char* site_name(Site site);
const char* direction_name(Direction direction);

}  // namespace syl
