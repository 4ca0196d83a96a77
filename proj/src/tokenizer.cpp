#include "faircert/tokenizer.hpp"

#include <cctype>

#include "faircert/errors.hpp"

namespace faircert::lm {

Vocab::Vocab() {
    add(kPadToken);
    add(kUnkToken);
}

Vocab::Vocab(const std::vector<std::string>& tokens) : Vocab() {
    for (const std::string& t : tokens) add(t);
}

int Vocab::add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    ids_.emplace(token, id);
    tokens_.push_back(token);
    return id;
}

bool Vocab::contains(const std::string& token) const { return ids_.count(token) > 0; }

int Vocab::id(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) throw NotFoundError("token not in vocabulary: " + token);
    return it->second;
}

int Vocab::id_or_unk(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
        throw NotFoundError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
}

namespace {

bool is_punct_byte(unsigned char c) {
    // ASCII punctuation splits words; bytes >= 0x80 (UTF-8 continuations)
    // are treated as word characters.
    return c < 0x80 && std::ispunct(c);
}

}  // namespace

std::vector<std::string> basic_tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else if (is_punct_byte(c)) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
            out.push_back(std::string(1, static_cast<char>(c)));
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::vector<std::string> wordpiece_split(const std::string& word, const Vocab& vocab) {
    std::vector<std::string> pieces;
    std::size_t start = 0;
    while (start < word.size()) {
        std::size_t end = word.size();
        std::string match;
        while (end > start) {
            std::string candidate = word.substr(start, end - start);
            if (start > 0) candidate = std::string(kSubwordPrefix) + candidate;
            if (vocab.contains(candidate)) {
                match = std::move(candidate);
                break;
            }
            --end;
        }
        if (match.empty()) {
            pieces.push_back(kUnkToken);
            break;
        }
        pieces.push_back(std::move(match));
        start = end;
    }
    if (pieces.empty()) pieces.push_back(kUnkToken);
    return pieces;
}

std::vector<std::string> subword_tokenize(const std::string& text, const Vocab& vocab) {
    std::vector<std::string> out;
    for (const std::string& word : basic_tokenize(text)) {
        if (vocab.contains(word)) {
            out.push_back(word);
            continue;
        }
        std::vector<std::string> pieces = wordpiece_split(word, vocab);
        out.insert(out.end(), pieces.begin(), pieces.end());
    }
    return out;
}

std::vector<int> tokenize(const std::string& text, const Vocab& vocab,
                          std::size_t max_seq) {
    std::vector<int> ids;
    ids.reserve(max_seq);
    for (const std::string& piece : subword_tokenize(text, vocab)) {
        if (ids.size() == max_seq) break;
        ids.push_back(vocab.id_or_unk(piece));
    }
    ids.resize(max_seq, Vocab::kPadId);
    return ids;
}

}  // namespace faircert::lm
