#include "mdma/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace mdma {

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }

bool is_space_char(unsigned char c) { return std::isspace(c) != 0; }

}  // namespace

const std::vector<std::string>& Vocab::core_special_tokens() {
    static const std::vector<std::string> kCore = {
        tokens::kMask, tokens::kSep, tokens::kCls,  tokens::kUnk,           tokens::kPad,
        tokens::kDate, tokens::kPol, tokens::kYear, tokens::kPoliticsDelim, tokens::kLocation};
    return kCore;
}

std::optional<TokenId> Vocab::find(const std::string& token) const {
    const auto it = token_to_id_.find(token);
    if (it == token_to_id_.end()) {
        return std::nullopt;
    }
    return it->second;
}

TokenId Vocab::id(const std::string& token) const {
    const auto it = token_to_id_.find(token);
    if (it == token_to_id_.end()) {
        throw std::runtime_error("token not in vocabulary: '" + token + "'");
    }
    return it->second;
}

TokenId Vocab::id_or_unk(const std::string& token) const {
    const auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? unk_id() : it->second;
}

const std::string& Vocab::token(TokenId id) const {
    if (id < 0 || id >= size()) {
        throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                                std::to_string(size()));
    }
    return id_to_token_[id];
}

bool Vocab::is_special(TokenId id) const {
    if (id < 0 || id >= size()) {
        throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                                std::to_string(size()));
    }
    return special_[id];
}

TokenId Vocab::add(const std::string& token, bool special) {
    if (token.empty()) {
        throw std::invalid_argument("empty token");
    }
    if (token_to_id_.count(token)) {
        throw std::invalid_argument("duplicate token: '" + token + "'");
    }
    const TokenId id = static_cast<TokenId>(id_to_token_.size());
    id_to_token_.push_back(token);
    token_to_id_.emplace(token, id);
    special_.push_back(special);
    if (!special) {
        normal_ids_.push_back(id);
    }
    if (special && token.size() >= 3 && token.front() == '[' && token.back() == ']' &&
        std::all_of(token.begin() + 1, token.end() - 1,
                    [](unsigned char c) { return std::isdigit(c) != 0; })) {
        has_special_years_ = true;
    }
    return id;
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open vocabulary file for writing: " + path);
    }
    for (int i = 0; i < size(); ++i) {
        out << (special_[i] ? 'S' : 'N') << '\t' << id_to_token_[i] << '\n';
    }
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open vocabulary file: " + path);
    }
    Vocab vocab;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        if (line.size() < 3 || (line[0] != 'S' && line[0] != 'N') || line[1] != '\t') {
            throw std::runtime_error("vocabulary file " + path + " line " +
                                     std::to_string(line_no) + ": bad format");
        }
        vocab.add(line.substr(2), line[0] == 'S');
    }
    return vocab;
}

std::vector<std::string> tokenize_words(const std::string& text, const Vocab* vocab) {
    std::vector<std::string> out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        while (i < n && is_space_char(text[i])) {
            ++i;
        }
        if (i >= n) {
            break;
        }
        std::size_t j = i;
        while (j < n && !is_space_char(text[j])) {
            ++j;
        }
        const std::string word = text.substr(i, j - i);
        i = j;
        if (vocab != nullptr) {
            const auto found = vocab->find(word);
            if (found && vocab->is_special(*found)) {
                out.push_back(word);
                continue;
            }
        }
        // lower-case, then split into alphanumeric runs and punctuation marks
        std::string run;
        for (unsigned char c : word) {
            const char lc = static_cast<char>(std::tolower(c));
            if (is_word_char(static_cast<unsigned char>(lc))) {
                run += lc;
            } else {
                if (!run.empty()) {
                    out.push_back(run);
                    run.clear();
                }
                out.push_back(std::string(1, lc));
            }
        }
        if (!run.empty()) {
            out.push_back(run);
        }
    }
    return out;
}

Vocab build_vocab(const DocumentSet& corpus, int max_size, const VocabBuildOptions& options) {
    if (corpus.docs.empty()) {
        throw std::invalid_argument("build_vocab: corpus is empty");
    }
    Vocab vocab;
    for (const std::string& token : Vocab::core_special_tokens()) {
        vocab.add(token, true);
    }
    if (options.special_year_tokens) {
        for (int y = corpus.year_min; y <= corpus.year_max; ++y) {
            vocab.add("[" + std::to_string(y) + "]", true);
        }
    }
    if (options.special_politics_tokens) {
        for (const char* abbrev : {"[lib]", "[con]", "[rad]", "[neu]", "[non]"}) {
            vocab.add(abbrev, true);
        }
    }
    for (int y = corpus.year_min; y <= corpus.year_max; ++y) {
        vocab.add(std::to_string(y), false);
    }
    for (const std::string& token : options.extra_tokens) {
        if (!vocab.find(token)) {
            vocab.add(token, false);
        }
    }
    if (max_size < vocab.size() + 2) {
        throw std::invalid_argument("build_vocab: max_size " + std::to_string(max_size) +
                                    " cannot hold the " + std::to_string(vocab.size()) +
                                    " mandatory tokens plus corpus words");
    }

    std::map<std::string, std::size_t> counts;
    for (const Document& doc : corpus.docs) {
        for (const std::string& word : tokenize_words(doc.text, nullptr)) {
            ++counts[word];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;  // frequency descending
        }
        return a.first < b.first;  // lexicographic tie-break
    });
    for (const auto& [word, count] : ranked) {
        if (vocab.size() >= max_size) {
            break;
        }
        if (!vocab.find(word)) {
            vocab.add(word, false);
        }
    }
    return vocab;
}

std::vector<TokenId> encode(const std::string& text, const Vocab& vocab) {
    const std::vector<std::string> words = tokenize_words(text, &vocab);
    std::vector<TokenId> ids;
    ids.reserve(words.size());
    for (const std::string& word : words) {
        ids.push_back(vocab.id_or_unk(word));
    }
    return ids;
}

std::string decode(const std::vector<TokenId>& ids, const Vocab& vocab) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i > 0) {
            out += ' ';
        }
        out += vocab.token(ids[i]);
    }
    return out;
}

}  // namespace mdma
