#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sylloscope/circuits.hpp"
#include "sylloscope/dataset.hpp"
#include "sylloscope/lens.hpp"
#include "sylloscope/pathpatch.hpp"
#include "sylloscope/sweeps.hpp"

namespace syl {

/// Provenance embedded in every report so a run can be reproduced:
/// model weight fingerprint, seed, and fingerprints of the effective config
/// and input dataset.
struct ReportMeta {
    std::string model_fingerprint;
    uint64_t seed = 0;
    std::string config_fingerprint;
    std::string dataset_fingerprint;
};

std::string fingerprint_text(std::string_view text);

/// Writes via a temp file in the same directory plus rename, so readers
/// never observe partial reports.
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

// dataset files: JSON lines, one instance (or pair) per line
std::string instances_to_jsonl(std::span<const SyllogismInstance> instances);
std::vector<SyllogismInstance> instances_from_jsonl(const std::filesystem::path& path);
std::string pairs_to_jsonl(std::span<const PromptPair> pairs);
std::vector<PromptPair> pairs_from_jsonl(const std::filesystem::path& path);

// analysis reports
std::string sweep_to_json(const SweepResult& sweep, const ReportMeta& meta);
std::string sweep_to_csv(const SweepResult& sweep);
std::string profile_to_json(const AttentionProfile& profile, const ReportMeta& meta);
std::string profile_to_csv(const AttentionProfile& profile);
std::string lens_to_json(const LensMatrix& lens, float diag_score, const ReportMeta& meta);
std::string lens_to_csv(const LensMatrix& lens);
std::string curve_to_json(const AblationCurve& curve, const ReportMeta& meta);
std::string movers_to_json(std::span<const MoverClassification> movers, const ReportMeta& meta);
std::string pathpatch_to_json(std::span<const PathPatchResult> results, const ReportMeta& meta);

struct SchemeConditionRow {
    std::string scheme;
    ConditionReport report;
};
/// Scheme report: CSV with columns scheme, C1, C2, C3, accuracy.
std::string conditions_to_csv(std::span<const SchemeConditionRow> rows);

/// Plain binary PPM heatmap of a rows x cols matrix, diverging palette
/// centered at zero. NaN cells render grey.
std::string matrix_to_ppm(int rows, int cols, std::span<const float> values, int cell_px = 12);

}  // namespace syl
