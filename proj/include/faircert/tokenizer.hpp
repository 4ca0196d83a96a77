#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace faircert::lm {

inline constexpr const char* kPadToken = "[PAD]";
inline constexpr const char* kUnkToken = "[UNK]";
inline constexpr const char* kSubwordPrefix = "##";

/// Token-string → dense id map with fixed special ids: PAD = 0, UNK = 1.
/// Subword continuations follow the "##" prefix convention.
class Vocab {
public:
    Vocab();
    explicit Vocab(const std::vector<std::string>& tokens);

    /// Adds a token if absent; returns its id either way.
    int add(const std::string& token);

    bool contains(const std::string& token) const;
    int id(const std::string& token) const;         // throws NotFoundError
    int id_or_unk(const std::string& token) const;  // total
    const std::string& token(int id) const;

    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    static constexpr int kPadId = 0;
    static constexpr int kUnkId = 1;

private:
    std::unordered_map<std::string, int> ids_;
    std::vector<std::string> tokens_;
};

/// Lowercases and splits on whitespace and ASCII punctuation; punctuation
/// characters survive as single-character tokens.
std::vector<std::string> basic_tokenize(const std::string& text);

/// Greedy longest-match subword segmentation with "##" continuations.
/// A residue with no matching piece becomes a single UNK token.
std::vector<std::string> wordpiece_split(const std::string& word, const Vocab& vocab);

/// basic_tokenize + wordpiece, without padding. Used for phrase embedding.
std::vector<std::string> subword_tokenize(const std::string& text, const Vocab& vocab);

/// Full id pipeline: lowercase/split/wordpiece, truncate to max_seq, pad with
/// PAD. Total function.
std::vector<int> tokenize(const std::string& text, const Vocab& vocab,
                          std::size_t max_seq);

}  // namespace faircert::lm
