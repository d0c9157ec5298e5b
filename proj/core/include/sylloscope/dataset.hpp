#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sylloscope/schemes.hpp"
#include "sylloscope/tokenizer.hpp"

namespace syl {

struct RolePositions {
    std::vector<int> s;  // premise occurrence first, conclusion occurrence second
    int m1 = -1;
    int m2 = -1;
    int p = -1;
    int last = -1;
};

enum class Role { s, m1, m2, p, last };

/// One rendered completion prompt. Terms are canonical space-prefixed
/// single-token strings (" A", " men"); m1 == m2 for clean instances.
/// answer/distractor are the token ids the run is scored against; corrupted
/// instances keep the clean pair's ids (the answers-unchanged contract).
struct SyllogismInstance {
    std::string scheme;  // scheme code, e.g. "AAA-1"
    std::string term_s, term_m1, term_m2, term_p;
    std::string prompt;
    std::vector<int> tokens;
    RolePositions roles;
    int answer_token = -1;
    int distractor_token = -1;
    std::string tag;  // optional provenance, e.g. "consistent"/"inconsistent"

    int n_tokens() const { return static_cast<int>(tokens.size()); }
    std::vector<int> positions_of(Role role) const;
};

enum class Intervention { middle_term, all_term, subject_term };
enum class Perturbation { numeric, quantifier };

struct PromptPair {
    SyllogismInstance clean;
    SyllogismInstance corrupted;
    Intervention intervention = Intervention::middle_term;
};

/// Renders one instance of a scheme with explicit terms. Terms must be
/// space-prefixed and single-token. `each_is` switches every universal
/// affirmative sentence from "All x are y" to "Each x is y".
SyllogismInstance make_instance(const SyllogisticScheme& scheme, const std::string& term_s,
                                const std::string& term_m, const std::string& term_p,
                                const Tokenizer& tokenizer, bool each_is = false);

/// Symbolic dataset: letter triples sampled without replacement within a
/// triple, six role permutations per triple, deterministic in the seed.
std::vector<SyllogismInstance> generate_symbolic(const SyllogisticScheme& scheme, int n_samples,
                                                 uint64_t seed, const Tokenizer& tokenizer);

/// Builds a clean/corrupted pair by swapping single-token terms at role
/// positions. Replacements are drawn from the instance's symbol family
/// (letters or digits) excluding symbols already present, or from
/// `replacement_pool` when given (used for word instances).
PromptPair corrupt(const SyllogismInstance& instance, Intervention intervention, uint64_t seed,
                   const Tokenizer& tokenizer,
                   const std::vector<std::string>& replacement_pool = {});

/// Schema-preserving rewrite; role positions recomputed, answer/distractor
/// updated to the perturbed surface forms.
SyllogismInstance perturb(const SyllogismInstance& instance, Perturbation kind,
                          const Tokenizer& tokenizer);

struct IngestReject {
    int line = 0;
    std::string reason;
};

struct IngestResult {
    std::vector<SyllogismInstance> instances;
    std::vector<IngestReject> rejected;
};

/// Reads a UTF-8 comma-separated file with header `s,m,p,label` and renders
/// AAA-1 instances from word terms. Rows violating the single-token or
/// distinctness constraints are reported per row, not fatal.
IngestResult ingest_nonsymbolic(const std::filesystem::path& file, const Tokenizer& tokenizer);

const char* intervention_name(Intervention i);
Intervention parse_intervention(const std::string& name);
const char* perturbation_name(Perturbation p);
const char* role_name(Role r);
Role parse_role(const std::string& name);

}  // namespace syl
