#pragma once

#include <string>
#include <vector>

namespace syl {

/// The four categorical sentence forms: universal/particular x
/// affirmative/negative.
enum class SentenceForm : char { A = 'A', E = 'E', I = 'I', O = 'O' };

/// One of the 15 unconditionally valid syllogism schemes. The mood is given
/// in the traditional (major, minor, conclusion) letter order; rendering
/// puts the minor premise first. The figure fixes the term order inside each
/// premise:
///   figure 1: (s, m) (m, p)    figure 2: (s, m) (p, m)
///   figure 3: (m, s) (m, p)    figure 4: (m, s) (p, m)
/// The conclusion is always about (s, p) and the completion prompt truncates
/// it right before the final p term.
struct SyllogisticScheme {
    std::string name;  // e.g. "Barbara"
    std::string mood;  // e.g. "AAA"
    int figure = 1;

    std::string code() const { return mood + "-" + std::to_string(figure); }

    SentenceForm major_form() const { return static_cast<SentenceForm>(mood[0]); }
    SentenceForm minor_form() const { return static_cast<SentenceForm>(mood[1]); }
    SentenceForm conclusion_form() const { return static_cast<SentenceForm>(mood[2]); }

    bool premise1_middle_first() const { return figure == 3 || figure == 4; }
    bool premise2_predicate_first() const { return figure == 2 || figure == 4; }
};

/// All 15 schemes, in the canonical figure-then-name order.
const std::vector<SyllogisticScheme>& all_schemes();

/// Lookup by code ("AAA-1") or traditional name ("Barbara"), case-insensitive
/// for names. Throws a data error if unknown.
const SyllogisticScheme& find_scheme(const std::string& code_or_name);

}  // namespace syl
