#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "sylloscope/bundle.hpp"
#include "sylloscope/patch.hpp"

namespace syl {

/// Effective settings for one command invocation: a flat key-value document
/// (config file) plus flag overrides. Every report embeds a fingerprint of
/// the canonical rendering plus the seed, which is mandatory wherever
/// randomness is involved.
struct ExperimentConfig {
    // model files
    std::filesystem::path model_dir;
    std::filesystem::path checkpoint, vocab, merges;  // override model_dir pieces

    // dataset
    std::string scheme = "AAA-1";
    int samples = 90;
    uint64_t seed = 0;
    bool seed_set = false;
    std::string perturbation = "none";  // none|numeric|quantifier
    std::string intervention = "middle_term";
    std::filesystem::path nonsymbolic_file;
    std::filesystem::path dataset;  // JSONL input (instances or pairs) or generate output

    // sweep
    std::string sweep_type = "head_output";  // residual|head_output|head_value|attention_profile
    std::string direction = "denoise";
    std::string query_role = "p";

    // circuit evaluation
    std::filesystem::path circuit_file;  // JSON {"name":..., "heads":["5.8",...]}
    double c1_factor = 0.5;
    double c2_factor = 0.9;

    // path patching
    std::string receiver = "11.10";
    std::string senders = "5.8,6.1,6.15,7.2";

    // lens
    std::string lens_head = "11.10";

    // execution
    std::filesystem::path out_dir = "reports";
    int workers = 0;

    static ExperimentConfig from_file(const std::filesystem::path& path);
    void set(const std::string& key, const std::string& value);

    /// Sorted key=value rendering of the effective settings.
    std::string canonical_text() const;

    std::filesystem::path checkpoint_path() const;
    std::filesystem::path vocab_path() const;
    std::filesystem::path merges_path() const;
    ModelBundle load_model() const;
    uint64_t require_seed() const;
};

HeadRef parse_head(const std::string& text);

// CLI verbs; each writes its reports under config.out_dir and logs a summary.
void cmd_generate(const ExperimentConfig& config, std::ostream& log);
void cmd_run(const ExperimentConfig& config, std::ostream& log);
void cmd_sweep(const ExperimentConfig& config, std::ostream& log);
void cmd_path_patch(const ExperimentConfig& config, std::ostream& log);
void cmd_lens(const ExperimentConfig& config, std::ostream& log);
void cmd_ablate(const ExperimentConfig& config, std::ostream& log);
void cmd_movers(const ExperimentConfig& config, std::ostream& log);
void cmd_subject_bias(const ExperimentConfig& config, std::ostream& log);
void cmd_report(const ExperimentConfig& config, const std::filesystem::path& input,
                std::ostream& log);

}  // namespace syl
