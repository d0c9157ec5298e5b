#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace syl {

/// Byte-level BPE tokenizer (GPT-2 family). Loads the reference JSON vocab
/// and rank-ordered merges table and reproduces the reference encoder:
/// regex-style pre-tokenization, byte-to-unicode remapping, rank-greedy
/// merging. Encoding is total over arbitrary UTF-8 input and
/// decode(encode(x)) == x.
class Tokenizer {
public:
    static Tokenizer load(const std::filesystem::path& vocab_json,
                          const std::filesystem::path& merges_txt);

    std::vector<int> encode(std::string_view text) const;
    std::string decode(std::span<const int> ids) const;

    /// Id for a text that must encode to exactly one token (e.g. " A").
    std::optional<int> single_token(std::string_view text) const;

    /// Direct vocab lookup of a raw byte string (no pre-tokenization).
    std::optional<int> piece_id(std::string_view piece) const;

    int vocab_size() const { return static_cast<int>(id_to_piece_.size()); }

    /// Raw byte string for a token id.
    const std::string& piece(int id) const;

private:
    Tokenizer() = default;

    std::vector<int> bpe(std::string_view pretoken_bytes) const;

    // vocab over byte-remapped symbol strings
    std::unordered_map<std::string, int> symbol_to_id_;
    std::map<std::pair<std::string, std::string>, int> merge_rank_;
    std::vector<std::string> id_to_symbol_;
    std::vector<std::string> id_to_piece_;  // raw bytes per id
    std::unordered_map<std::string, int> piece_to_id_;

    // byte <-> unicode codepoint remapping tables
    uint32_t byte_to_cp_[256] = {};
    std::unordered_map<uint32_t, uint8_t> cp_to_byte_;
};

}  // namespace syl
