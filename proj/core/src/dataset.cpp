#include "sylloscope/dataset.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "sylloscope/errors.hpp"

namespace syl {
namespace {

struct Segment {
    std::string text;  // literal, used when role == last (none)
    Role role = Role::last;
    bool is_term() const { return role != Role::last; }

    static Segment lit(std::string t) { return {std::move(t), Role::last}; }
    static Segment term(Role r) { return {"", r}; }
};

std::string sentence_start(SentenceForm f, bool first, bool each_is) {
    std::string space = first ? "" : " ";
    switch (f) {
        case SentenceForm::A: return space + (each_is ? "Each" : "All");
        case SentenceForm::E: return space + "No";
        case SentenceForm::I: return space + "Some";
        case SentenceForm::O: return space + "Some";
    }
    throw_data("bad sentence form");
}

void append_premise(std::vector<Segment>& out, SentenceForm f, Role first_term, Role second_term,
                    bool first_sentence, bool each_is) {
    out.push_back(Segment::lit(sentence_start(f, first_sentence, each_is)));
    out.push_back(Segment::term(first_term));
    std::string verb = (f == SentenceForm::A && each_is) ? " is" : " are";
    if (f == SentenceForm::O) verb += " not";
    out.push_back(Segment::lit(verb));
    out.push_back(Segment::term(second_term));
    out.push_back(Segment::lit("."));
}

/// Both premises plus the conclusion truncated right before the final p term.
std::vector<Segment> prompt_segments(const SyllogisticScheme& scheme, bool each_is) {
    std::vector<Segment> segs;
    // minor premise first, as in the scheme table
    if (scheme.premise1_middle_first()) {
        append_premise(segs, scheme.minor_form(), Role::m1, Role::s, true, each_is);
    } else {
        append_premise(segs, scheme.minor_form(), Role::s, Role::m1, true, each_is);
    }
    if (scheme.premise2_predicate_first()) {
        append_premise(segs, scheme.major_form(), Role::p, Role::m2, false, each_is);
    } else {
        append_premise(segs, scheme.major_form(), Role::m2, Role::p, false, each_is);
    }
    SentenceForm c = scheme.conclusion_form();
    std::string lead = " Therefore,";
    switch (c) {
        case SentenceForm::A: lead += each_is ? " each" : " all"; break;
        case SentenceForm::E: lead += " no"; break;
        case SentenceForm::I: lead += " some"; break;
        case SentenceForm::O: lead += " some"; break;
    }
    segs.push_back(Segment::lit(lead));
    segs.push_back(Segment::term(Role::s));
    std::string verb = (c == SentenceForm::A && each_is) ? " is" : " are";
    if (c == SentenceForm::O) verb += " not";
    segs.push_back(Segment::lit(verb));
    return segs;
}

int require_single_token(const std::string& text, const Tokenizer& tokenizer,
                         const std::string& what) {
    if (text.size() < 2 || text[0] != ' ') {
        throw_data(what + " '" + text + "' must be space-prefixed (\" A\" style)");
    }
    auto id = tokenizer.single_token(text);
    if (!id) throw_data(what + " '" + text + "' does not encode to a single token");
    return *id;
}

bool is_letter_term(const std::string& t) {
    return t.size() == 2 && t[0] == ' ' && t[1] >= 'A' && t[1] <= 'Z';
}
bool is_digit_term(const std::string& t) {
    return t.size() == 2 && t[0] == ' ' && t[1] >= '1' && t[1] <= '9';
}

uint64_t draw(std::mt19937_64& rng, uint64_t bound) { return rng() % bound; }

// the 3! role assignments of a letter triple, in a fixed order
constexpr std::array<std::array<int, 3>, 6> kPermutations = {
    {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};

}  // namespace

std::vector<int> SyllogismInstance::positions_of(Role role) const {
    switch (role) {
        case Role::s: return roles.s;
        case Role::m1: return {roles.m1};
        case Role::m2: return {roles.m2};
        case Role::p: return {roles.p};
        case Role::last: return {roles.last};
    }
    return {};
}

SyllogismInstance make_instance(const SyllogisticScheme& scheme, const std::string& term_s,
                                const std::string& term_m, const std::string& term_p,
                                const Tokenizer& tokenizer, bool each_is) {
    SyllogismInstance inst;
    inst.scheme = scheme.code();
    inst.term_s = term_s;
    inst.term_m1 = term_m;
    inst.term_m2 = term_m;
    inst.term_p = term_p;

    const int id_s = require_single_token(term_s, tokenizer, "term s");
    const int id_m = require_single_token(term_m, tokenizer, "term m");
    const int id_p = require_single_token(term_p, tokenizer, "term p");
    if (id_p == id_m) throw_data("answer and distractor terms coincide: " + term_p);

    for (const Segment& seg : prompt_segments(scheme, each_is)) {
        if (seg.is_term()) {
            const std::string* term = nullptr;
            switch (seg.role) {
                case Role::s: term = &term_s; break;
                case Role::m1: term = &term_m; break;
                case Role::m2: term = &term_m; break;
                case Role::p: term = &term_p; break;
                case Role::last: break;
            }
            int pos = static_cast<int>(inst.tokens.size());
            switch (seg.role) {
                case Role::s: inst.roles.s.push_back(pos); break;
                case Role::m1: inst.roles.m1 = pos; break;
                case Role::m2: inst.roles.m2 = pos; break;
                case Role::p: inst.roles.p = pos; break;
                case Role::last: break;
            }
            inst.prompt += *term;
            inst.tokens.push_back(*tokenizer.single_token(*term));
        } else {
            inst.prompt += seg.text;
            auto ids = tokenizer.encode(seg.text);
            inst.tokens.insert(inst.tokens.end(), ids.begin(), ids.end());
        }
    }
    inst.roles.last = static_cast<int>(inst.tokens.size()) - 1;
    inst.answer_token = id_p;
    inst.distractor_token = id_m;

    // segment-wise encoding must agree with encoding the rendered prompt
    if (tokenizer.encode(inst.prompt) != inst.tokens) {
        throw_data("scheme template broke a token boundary for prompt: " + inst.prompt);
    }
    return inst;
}

std::vector<SyllogismInstance> generate_symbolic(const SyllogisticScheme& scheme, int n_samples,
                                                 uint64_t seed, const Tokenizer& tokenizer) {
    if (n_samples < 1) throw_data("n_samples must be >= 1");
    std::mt19937_64 rng(seed);

    std::vector<SyllogismInstance> out;
    out.reserve(static_cast<size_t>(n_samples));
    while (static_cast<int>(out.size()) < n_samples) {
        // one triple of distinct letters
        std::array<std::string, 3> letters;
        std::set<char> used;
        for (auto& letter : letters) {
            char c;
            do {
                c = static_cast<char>('A' + draw(rng, 26));
            } while (used.count(c) > 0);
            used.insert(c);
            letter = std::string(" ") + c;
        }
        for (const auto& perm : kPermutations) {
            if (static_cast<int>(out.size()) >= n_samples) break;
            out.push_back(make_instance(scheme, letters[static_cast<size_t>(perm[0])],
                                        letters[static_cast<size_t>(perm[1])],
                                        letters[static_cast<size_t>(perm[2])], tokenizer));
        }
    }
    return out;
}

PromptPair corrupt(const SyllogismInstance& instance, Intervention intervention, uint64_t seed,
                   const Tokenizer& tokenizer, const std::vector<std::string>& replacement_pool) {
    std::mt19937_64 rng(seed);
    const std::set<std::string> present = {instance.term_s, instance.term_m1, instance.term_m2,
                                           instance.term_p};

    std::vector<std::string> pool;
    if (!replacement_pool.empty()) {
        pool = replacement_pool;
    } else if (is_digit_term(instance.term_s) && is_digit_term(instance.term_p)) {
        for (char c = '1'; c <= '9'; ++c) pool.push_back(std::string(" ") + c);
    } else if (is_letter_term(instance.term_s) && is_letter_term(instance.term_p)) {
        for (char c = 'A'; c <= 'Z'; ++c) pool.push_back(std::string(" ") + c);
    } else {
        throw_data("corrupting word instances requires a replacement pool");
    }
    std::vector<std::string> fresh;
    for (const auto& t : pool) {
        if (present.count(t) == 0) fresh.push_back(t);
    }

    auto take_fresh = [&]() {
        if (fresh.empty()) throw_data("replacement alphabet exhausted");
        size_t i = static_cast<size_t>(draw(rng, fresh.size()));
        std::string t = fresh[i];
        fresh.erase(fresh.begin() + static_cast<std::ptrdiff_t>(i));
        return t;
    };

    SyllogismInstance corrupted = instance;
    auto swap_at = [&](const std::vector<int>& positions, const std::string& term) {
        int id = require_single_token(term, tokenizer, "replacement term");
        for (int pos : positions) corrupted.tokens[static_cast<size_t>(pos)] = id;
    };

    switch (intervention) {
        case Intervention::middle_term: {
            corrupted.term_m2 = take_fresh();
            swap_at({instance.roles.m2}, corrupted.term_m2);
            break;
        }
        case Intervention::all_term: {
            corrupted.term_s = take_fresh();
            corrupted.term_m1 = take_fresh();
            corrupted.term_m2 = take_fresh();
            corrupted.term_p = take_fresh();
            swap_at(instance.roles.s, corrupted.term_s);
            swap_at({instance.roles.m1}, corrupted.term_m1);
            swap_at({instance.roles.m2}, corrupted.term_m2);
            swap_at({instance.roles.p}, corrupted.term_p);
            break;
        }
        case Intervention::subject_term: {
            corrupted.term_s = take_fresh();
            swap_at(instance.roles.s, corrupted.term_s);
            break;
        }
    }

    // answers-unchanged contract: the pair is scored with the clean ids
    corrupted.answer_token = instance.answer_token;
    corrupted.distractor_token = instance.distractor_token;
    corrupted.prompt = tokenizer.decode(corrupted.tokens);
    if (tokenizer.encode(corrupted.prompt) != corrupted.tokens) {
        throw_data("corruption broke a token boundary for prompt: " + corrupted.prompt);
    }

    PromptPair pair{instance, std::move(corrupted), intervention};
    if (pair.clean.tokens.size() != pair.corrupted.tokens.size()) {
        throw_data("corruption changed sequence length");
    }
    return pair;
}

SyllogismInstance perturb(const SyllogismInstance& instance, Perturbation kind,
                          const Tokenizer& tokenizer) {
    const SyllogisticScheme& scheme = find_scheme(instance.scheme);
    if (kind == Perturbation::quantifier) {
        SyllogismInstance out = make_instance(scheme, instance.term_s, instance.term_m1,
                                              instance.term_p, tokenizer, /*each_is=*/true);
        out.tag = instance.tag;
        return out;
    }
    // numeric: i-th distinct term in role order (s, m, p) -> " 1", " 2", " 3"
    std::vector<std::string> order = {instance.term_s, instance.term_m1, instance.term_p};
    std::vector<std::string> digits;
    std::vector<std::string> distinct;
    for (const auto& t : order) {
        if (std::find(distinct.begin(), distinct.end(), t) == distinct.end()) distinct.push_back(t);
    }
    auto digit_for = [&](const std::string& t) {
        auto it = std::find(distinct.begin(), distinct.end(), t);
        auto idx = static_cast<size_t>(it - distinct.begin());
        if (idx > 8) throw_data("numeric perturbation ran out of single digits");
        return std::string(" ") + static_cast<char>('1' + idx);
    };
    SyllogismInstance out =
        make_instance(scheme, digit_for(instance.term_s), digit_for(instance.term_m1),
                      digit_for(instance.term_p), tokenizer);
    out.tag = instance.tag;
    return out;
}

IngestResult ingest_nonsymbolic(const std::filesystem::path& file, const Tokenizer& tokenizer) {
    std::ifstream in(file);
    if (!in) throw_data("cannot open non-symbolic ingest file: " + file.string());

    IngestResult result;
    const SyllogisticScheme& barbara = find_scheme("AAA-1");
    std::string line;
    int line_no = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) {
            size_t b = f.find_first_not_of(" \t");
            size_t e = f.find_last_not_of(" \t");
            fields.push_back(b == std::string::npos ? "" : f.substr(b, e - b + 1));
        }
        if (!saw_header) {
            if (fields.size() < 4 || fields[0] != "s" || fields[1] != "m" || fields[2] != "p" ||
                fields[3] != "label") {
                throw_data("ingest file must start with header 's,m,p,label'");
            }
            saw_header = true;
            continue;
        }
        if (fields.size() != 4) {
            result.rejected.push_back({line_no, "expected 4 fields, got " +
                                                    std::to_string(fields.size())});
            continue;
        }
        const std::string& label = fields[3];
        if (label != "consistent" && label != "inconsistent") {
            result.rejected.push_back({line_no, "label must be consistent|inconsistent"});
            continue;
        }
        std::array<std::string, 3> words;
        bool ok = true;
        for (int i = 0; i < 3; ++i) {
            std::string w = fields[static_cast<size_t>(i)];
            if (w.empty()) {
                result.rejected.push_back({line_no, "empty term"});
                ok = false;
                break;
            }
            words[static_cast<size_t>(i)] = w[0] == ' ' ? w : " " + w;
            if (!tokenizer.single_token(words[static_cast<size_t>(i)])) {
                result.rejected.push_back({line_no, "multi-token term '" + w + "'"});
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        if (words[0] == words[1] || words[1] == words[2] || words[0] == words[2]) {
            result.rejected.push_back({line_no, "terms must be pairwise distinct"});
            continue;
        }
        SyllogismInstance inst = make_instance(barbara, words[0], words[1], words[2], tokenizer);
        inst.tag = label;
        result.instances.push_back(std::move(inst));
    }
    if (!saw_header) throw_data("ingest file is empty: " + file.string());
    return result;
}

const char* intervention_name(Intervention i) {
    switch (i) {
        case Intervention::middle_term: return "middle_term";
        case Intervention::all_term: return "all_term";
        case Intervention::subject_term: return "subject_term";
    }
    return "?";
}

Intervention parse_intervention(const std::string& name) {
    if (name == "middle_term") return Intervention::middle_term;
    if (name == "all_term") return Intervention::all_term;
    if (name == "subject_term") return Intervention::subject_term;
    throw_usage("unknown intervention: " + name + " (middle_term|all_term|subject_term)");
}

const char* perturbation_name(Perturbation p) {
    return p == Perturbation::numeric ? "numeric" : "quantifier";
}

const char* role_name(Role r) {
    switch (r) {
        case Role::s: return "s";
        case Role::m1: return "m1";
        case Role::m2: return "m2";
        case Role::p: return "p";
        case Role::last: return "last";
    }
    return "?";
}

Role parse_role(const std::string& name) {
    if (name == "s") return Role::s;
    if (name == "m1") return Role::m1;
    if (name == "m2") return Role::m2;
    if (name == "p") return Role::p;
    if (name == "last") return Role::last;
    throw_usage("unknown role: " + name + " (s|m1|m2|p|last)");
}

}  // namespace syl
