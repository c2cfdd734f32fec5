#pragma once

// Tiny whitespace tokenizer over a fixed vocabulary (<= 128 tokens).
// Token order in the list defines ids; serialization is a newline-delimited
// UTF-8 token list.

#include <string>
#include <unordered_map>
#include <vector>

#include "denseface/error.hpp"

namespace df {

class Vocabulary {
public:
    static Vocabulary defaults();  // caption-template grammar + palette names
    static Vocabulary from_tokens(const std::vector<std::string>& tokens);
    static Vocabulary load(const std::string& path);
    void save(const std::string& path) const;

    int id(const std::string& token) const;
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(tokens_.size()); }

    int pad() const { return pad_; }
    int bos() const { return bos_; }
    int eos() const { return eos_; }
    int face() const { return face_; }

    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    int pad_ = -1, bos_ = -1, eos_ = -1, face_ = -1;
};

// BOS + word ids + EOS, padded with PAD to exactly len.
std::vector<int> tokenize(const std::string& caption, const Vocabulary& vocab, int len);

// inverse of tokenize on in-vocabulary captions (drops specials/padding)
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

}  // namespace df
