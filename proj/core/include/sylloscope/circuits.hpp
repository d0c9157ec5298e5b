#pragma once

#include <string>
#include <vector>

#include "sylloscope/ablation.hpp"
#include "sylloscope/bundle.hpp"
#include "sylloscope/dataset.hpp"
#include "sylloscope/metrics.hpp"
#include "sylloscope/sweeps.hpp"

namespace syl {

/// An ordered set of attention heads hypothesized as the reasoning circuit.
struct CircuitSpec {
    std::string name;
    std::vector<HeadRef> heads;

    /// The head inventory assembled from the discovery analyses: induction
    /// heads 5.8/6.1/6.15/7.2, previous-token head 8.1, the m-suppression
    /// head 11.10, and the nine mover heads.
    static CircuitSpec default_circuit();

    void validate(const ModelConfig& config) const;
};

enum class AblationMode { necessity, sufficiency };

struct AblationStep {
    std::vector<HeadRef> heads_changed;  // cumulative
    double mean = 0.0;
    double stddev = 0.0;
};

struct AblationCurve {
    AblationMode mode = AblationMode::necessity;
    double baseline_mean = 0.0;
    double baseline_std = 0.0;
    int n = 0;
    std::vector<AblationStep> steps;  // step 0 included

    const AblationStep& final_step() const { return steps.back(); }
};

/// Per-(layer, head, position) mean outputs over the batch's clean runs.
MeanTable mean_table(const ModelBundle& bundle, const std::vector<SyllogismInstance>& instances,
                     const SweepOptions& options = {});

/// Cumulative knockout, downstream -> upstream: step k ablates the k highest
/// layers' circuit heads. Step 0 is the untouched model.
AblationCurve necessity_curve(const ModelBundle& bundle, const CircuitSpec& circuit,
                              const std::vector<SyllogismInstance>& instances,
                              const MeanTable& means, const SweepOptions& options = {});

/// Everything starts ablated; circuit heads are restored upstream ->
/// downstream. The final step is the circuit-only model.
AblationCurve sufficiency_curve(const ModelBundle& bundle, const CircuitSpec& circuit,
                                const std::vector<SyllogismInstance>& instances,
                                const MeanTable& means, const SweepOptions& options = {});

struct ConditionMargins {
    double c1_factor = 0.5;  // necessity passes when final delta < c1_factor * baseline
    double c2_factor = 0.9;  // sufficiency passes when final delta >= c2_factor * baseline
};

struct ConditionReport {
    bool c1 = false;
    bool c2 = false;
    bool c3 = false;
    double accuracy = 0.0;
    double baseline_mean = 0.0;
    double necessity_final = 0.0;
    double sufficiency_final = 0.0;
};

ConditionReport evaluate_conditions(const AblationCurve& necessity, const AblationCurve& sufficiency,
                                    std::span<const float> baseline_deltas,
                                    const ConditionMargins& margins = {});

enum class MoverQuadrant { positive_copy, positive_suppression, negative_copy, negative_suppression };

struct MoverClassification {
    HeadRef head;
    float s_all = 0.0f;
    float s_p = 0.0f;
    float s_m1 = 0.0f;
    float s_m2 = 0.0f;
    float ppd = 0.0f;  // |S[p]| - |S[m1] + S[m2]|
    MoverQuadrant quadrant = MoverQuadrant::positive_copy;
    bool outlier = false;
};

/// PPD quadrant classification over all heads; outliers are heads whose
/// |S_all| exceeds tau = mu + 2 sigma of all heads' |S_all|.
std::vector<MoverClassification> classify_movers(const ValueSweepByRole& sweeps);

const char* quadrant_name(MoverQuadrant q);
const char* ablation_mode_name(AblationMode m);

}  // namespace syl
