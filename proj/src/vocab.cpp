#include "denseface/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "denseface/palettes.hpp"

namespace df {

namespace {

std::vector<std::string> split_words(const std::string& caption) {
    std::string lower;
    lower.reserve(caption.size());
    for (char c : caption) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    std::istringstream is(lower);
    std::vector<std::string> words;
    std::string w;
    while (is >> w) words.push_back(w);
    return words;
}

}  // namespace

Vocabulary Vocabulary::defaults() {
    std::vector<std::string> toks = {"<pad>", "<bos>", "<eos>", "face"};
    const char* grammar[] = {"a", "with", "hair", "and", "eyes", "looking", "on", "background",
                             "left", "right", "up", "down", "ahead"};
    std::set<std::string> extra;
    for (const char* w : grammar) extra.insert(w);
    for (const auto& c : kHairColors) extra.insert(c.name);
    for (const auto& c : kEyeColors) extra.insert(c.name);
    for (const auto& c : kBackgroundColors) extra.insert(c.name);
    for (const auto& w : extra) toks.push_back(w);
    return from_tokens(toks);
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
    if (tokens.size() > 128) throw ConfigError("vocabulary larger than 128 tokens");
    Vocabulary v;
    v.tokens_ = tokens;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (!v.index_.emplace(tokens[i], static_cast<int>(i)).second)
            throw ConfigError("duplicate vocabulary token '" + tokens[i] + "'");
    }
    auto need = [&](const char* t) {
        auto it = v.index_.find(t);
        if (it == v.index_.end()) throw ConfigError(std::string("vocabulary missing token '") + t + "'");
        return it->second;
    };
    v.pad_ = need("<pad>");
    v.bos_ = need("<bos>");
    v.eos_ = need("<eos>");
    v.face_ = need("face");
    return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open vocabulary file " + path);
    std::vector<std::string> toks;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) toks.push_back(line);
    }
    return from_tokens(toks);
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write vocabulary file " + path);
    for (const auto& t : tokens_) f << t << "\n";
}

int Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) throw TokenizeError("word '" + token + "' not in vocabulary");
    return it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw IndexError("token id " + std::to_string(id));
    return tokens_[static_cast<size_t>(id)];
}

std::vector<int> tokenize(const std::string& caption, const Vocabulary& vocab, int len) {
    const auto words = split_words(caption);
    if (static_cast<int>(words.size()) > len - 2)
        throw TokenizeError("caption has " + std::to_string(words.size()) +
                            " words, more than fit in length " + std::to_string(len));
    std::vector<int> ids;
    ids.reserve(static_cast<size_t>(len));
    ids.push_back(vocab.bos());
    for (const auto& w : words) ids.push_back(vocab.id(w));
    ids.push_back(vocab.eos());
    while (static_cast<int>(ids.size()) < len) ids.push_back(vocab.pad());
    return ids;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string out;
    for (int id : ids) {
        if (id == vocab.pad() || id == vocab.bos() || id == vocab.eos()) continue;
        if (!out.empty()) out.push_back(' ');
        out += vocab.token(id);
    }
    return out;
}

}  // namespace df
