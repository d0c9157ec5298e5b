#include "sylloscope/tokenizer.hpp"

#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sylloscope/errors.hpp"

namespace syl {
namespace {

// --- UTF-8 helpers ----------------------------------------------------------

std::string cp_to_utf8(uint32_t cp) {
    std::string out;
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return out;
}

// Decodes UTF-8; invalid bytes are taken as their own codepoints, which keeps
// encoding total (byte-level BPE covers every byte anyway).
struct Decoded {
    std::vector<uint32_t> cps;
    std::vector<size_t> byte_offset;  // offset of each codepoint, plus end sentinel
};

Decoded decode_utf8(std::string_view s) {
    Decoded d;
    size_t i = 0;
    while (i < s.size()) {
        d.byte_offset.push_back(i);
        unsigned char c = static_cast<unsigned char>(s[i]);
        uint32_t cp = c;
        size_t extra = 0;
        if ((c & 0xE0) == 0xC0) { cp = c & 0x1F; extra = 1; }
        else if ((c & 0xF0) == 0xE0) { cp = c & 0x0F; extra = 2; }
        else if ((c & 0xF8) == 0xF0) { cp = c & 0x07; extra = 3; }
        if (extra > 0 && i + extra < s.size() + 1) {
            bool ok = true;
            uint32_t acc = cp;
            for (size_t k = 1; k <= extra; ++k) {
                if (i + k >= s.size() || (static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) {
                    ok = false;
                    break;
                }
                acc = (acc << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
            }
            if (ok) {
                d.cps.push_back(acc);
                i += extra + 1;
                continue;
            }
        }
        d.cps.push_back(c);
        i += 1;
    }
    d.byte_offset.push_back(s.size());
    return d;
}

// --- character classes for the reference pre-tokenizer ----------------------
//
// Approximate Unicode \p{L}, \p{N}, \s over the ranges that occur in
// practice (Latin, Greek, Cyrillic, CJK). Outside these ranges the split may
// differ from the reference for exotic scripts, but byte-level encoding keeps
// round-trips exact.

bool is_letter_cp(uint32_t c) {
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) return true;
    if (c < 0x80) return false;
    if (c == 0xAA || c == 0xB5 || c == 0xBA) return true;
    if (c >= 0xC0 && c <= 0x2FF) return c != 0xD7 && c != 0xF7;
    if (c >= 0x370 && c <= 0x3FF) return c != 0x37E && c != 0x3A2 && c != 0x387;
    if (c >= 0x400 && c <= 0x52F) return true;
    if (c >= 0x531 && c <= 0x58F) return true;   // Armenian
    if (c >= 0x5D0 && c <= 0x5EA) return true;   // Hebrew
    if (c >= 0x620 && c <= 0x64A) return true;   // Arabic
    if (c >= 0x3040 && c <= 0x30FF) return c != 0x3097 && c != 0x3098;  // kana
    if (c >= 0x4E00 && c <= 0x9FFF) return true;
    if (c >= 0xAC00 && c <= 0xD7A3) return true;
    return false;
}

bool is_number_cp(uint32_t c) {
    if (c >= '0' && c <= '9') return true;
    if (c == 0xB2 || c == 0xB3 || c == 0xB9) return true;
    if (c >= 0xBC && c <= 0xBE) return true;
    if (c >= 0x660 && c <= 0x669) return true;
    if (c >= 0x6F0 && c <= 0x6F9) return true;
    return false;
}

bool is_space_cp(uint32_t c) {
    switch (c) {
        case '\t': case '\n': case '\v': case '\f': case '\r': case ' ':
        case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
        case 0x202F: case 0x205F: case 0x3000:
            return true;
        default:
            return c >= 0x2000 && c <= 0x200A;
    }
}

// Pre-tokenizer equivalent to the reference pattern
//   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
// Returns byte ranges of s.
std::vector<std::pair<size_t, size_t>> pretokenize(std::string_view s) {
    Decoded d = decode_utf8(s);
    const auto& cps = d.cps;
    const size_t n = cps.size();
    std::vector<std::pair<size_t, size_t>> spans;
    auto emit = [&](size_t from, size_t to) {
        spans.emplace_back(d.byte_offset[from], d.byte_offset[to]);
    };

    static const std::vector<std::vector<uint32_t>> contractions = {
        {'\'', 's'}, {'\'', 't'}, {'\'', 'r', 'e'}, {'\'', 'v', 'e'},
        {'\'', 'm'}, {'\'', 'l', 'l'}, {'\'', 'd'},
    };

    size_t i = 0;
    while (i < n) {
        // contractions ('re before 'r-less alternatives; check longest first
        // is unnecessary because the list is prefix-free except 's vs nothing)
        bool matched = false;
        for (const auto& con : contractions) {
            if (i + con.size() <= n) {
                bool eq = true;
                for (size_t k = 0; k < con.size(); ++k) {
                    if (cps[i + k] != con[k]) { eq = false; break; }
                }
                if (eq) {
                    emit(i, i + con.size());
                    i += con.size();
                    matched = true;
                    break;
                }
            }
        }
        if (matched) continue;

        size_t head = (cps[i] == ' ') ? i + 1 : i;
        if (head < n && is_letter_cp(cps[head])) {
            size_t j = head;
            while (j < n && is_letter_cp(cps[j])) ++j;
            emit(i, j);
            i = j;
            continue;
        }
        if (head < n && is_number_cp(cps[head])) {
            size_t j = head;
            while (j < n && is_number_cp(cps[j])) ++j;
            emit(i, j);
            i = j;
            continue;
        }
        if (head < n && !is_space_cp(cps[head])) {
            size_t j = head;
            while (j < n && !is_space_cp(cps[j]) && !is_letter_cp(cps[j]) && !is_number_cp(cps[j])) ++j;
            emit(i, j);
            i = j;
            continue;
        }

        // whitespace run: \s+(?!\S) takes all but a trailing one kept for the
        // next token's optional leading space; lone whitespace falls to \s+
        size_t j = i;
        while (j < n && is_space_cp(cps[j])) ++j;
        if (j < n && j - i >= 2) {
            emit(i, j - 1);
            i = j - 1;
        } else {
            emit(i, j);
            i = j;
        }
    }
    return spans;
}

}  // namespace

Tokenizer Tokenizer::load(const std::filesystem::path& vocab_json,
                          const std::filesystem::path& merges_txt) {
    Tokenizer tk;

    // bytes_to_unicode: printable bytes map to themselves, the rest to 256+k
    int k = 0;
    auto printable = [](int b) {
        return (b >= 33 && b <= 126) || (b >= 161 && b <= 172) || (b >= 174 && b <= 255);
    };
    for (int b = 0; b < 256; ++b) {
        uint32_t cp = printable(b) ? static_cast<uint32_t>(b) : static_cast<uint32_t>(256 + k++);
        tk.byte_to_cp_[b] = cp;
        tk.cp_to_byte_[cp] = static_cast<uint8_t>(b);
    }

    std::ifstream vf(vocab_json);
    if (!vf) throw_model("cannot open vocab file: " + vocab_json.string());
    nlohmann::json vocab;
    try {
        vf >> vocab;
    } catch (const nlohmann::json::exception& e) {
        throw_model("vocab file is not valid JSON: " + std::string(e.what()));
    }

    int max_id = -1;
    for (auto& [sym, idv] : vocab.items()) max_id = std::max(max_id, idv.get<int>());
    tk.id_to_symbol_.assign(static_cast<size_t>(max_id + 1), {});
    tk.id_to_piece_.assign(static_cast<size_t>(max_id + 1), {});
    for (auto& [sym, idv] : vocab.items()) {
        int id = idv.get<int>();
        tk.symbol_to_id_[sym] = id;
        tk.id_to_symbol_[static_cast<size_t>(id)] = sym;
        // raw bytes: reverse byte map over the symbol's codepoints
        std::string bytes;
        for (uint32_t cp : decode_utf8(sym).cps) {
            auto it = tk.cp_to_byte_.find(cp);
            if (it == tk.cp_to_byte_.end()) {
                throw_model("vocab symbol contains unmapped codepoint: " + sym);
            }
            bytes.push_back(static_cast<char>(it->second));
        }
        tk.id_to_piece_[static_cast<size_t>(id)] = bytes;
        tk.piece_to_id_[bytes] = id;
    }

    std::ifstream mf(merges_txt);
    if (!mf) throw_model("cannot open merges file: " + merges_txt.string());
    std::string line;
    int rank = 0;
    while (std::getline(mf, line)) {
        if (line.empty() || line.rfind("#version", 0) == 0) continue;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto sp = line.find(' ');
        if (sp == std::string::npos) throw_model("malformed merges line: " + line);
        tk.merge_rank_[{line.substr(0, sp), line.substr(sp + 1)}] = rank++;
    }
    if (tk.merge_rank_.empty()) throw_model("merges file has no entries: " + merges_txt.string());
    return tk;
}

std::vector<int> Tokenizer::bpe(std::string_view pretoken_bytes) const {
    std::vector<std::string> word;
    word.reserve(pretoken_bytes.size());
    for (unsigned char b : pretoken_bytes) {
        word.push_back(cp_to_utf8(byte_to_cp_[b]));
    }

    const int INF = std::numeric_limits<int>::max();
    while (word.size() >= 2) {
        int best = INF;
        size_t best_i = 0;
        for (size_t i = 0; i + 1 < word.size(); ++i) {
            auto it = merge_rank_.find({word[i], word[i + 1]});
            int r = (it == merge_rank_.end()) ? INF : it->second;
            if (r < best) {
                best = r;
                best_i = i;
            }
        }
        if (best == INF) break;

        const std::string first = word[best_i];
        const std::string second = word[best_i + 1];
        std::vector<std::string> merged;
        merged.reserve(word.size());
        size_t i = 0;
        while (i < word.size()) {
            if (i + 1 < word.size() && word[i] == first && word[i + 1] == second) {
                merged.push_back(first + second);
                i += 2;
            } else {
                merged.push_back(word[i]);
                i += 1;
            }
        }
        word = std::move(merged);
    }

    std::vector<int> ids;
    ids.reserve(word.size());
    for (const auto& sym : word) {
        auto it = symbol_to_id_.find(sym);
        if (it == symbol_to_id_.end()) {
            throw_model("BPE produced symbol missing from vocab: " + sym);
        }
        ids.push_back(it->second);
    }
    return ids;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<int> out;
    for (auto [b, e] : pretokenize(text)) {
        auto ids = bpe(text.substr(b, e - b));
        out.insert(out.end(), ids.begin(), ids.end());
    }
    return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) out += piece(id);
    return out;
}

const std::string& Tokenizer::piece(int id) const {
    if (id < 0 || id >= vocab_size()) {
        throw_data("token id out of vocab: " + std::to_string(id));
    }
    return id_to_piece_[static_cast<size_t>(id)];
}

std::optional<int> Tokenizer::single_token(std::string_view text) const {
    auto ids = encode(text);
    if (ids.size() != 1) return std::nullopt;
    return ids[0];
}

std::optional<int> Tokenizer::piece_id(std::string_view piece) const {
    auto it = piece_to_id_.find(std::string(piece));
    if (it == piece_to_id_.end()) return std::nullopt;
    return it->second;
}

}  // namespace syl
