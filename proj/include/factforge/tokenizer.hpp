#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "factforge/errors.hpp"

namespace factforge {

enum class TokenUnit { Byte, Word };

// Byte-level tokenization keeps exact-match evaluation free of OOV effects;
// word mode exists for small hand-built fixtures.
class Tokenizer {
public:
    static Tokenizer bytes() { return Tokenizer(); }

    static Tokenizer words(std::vector<std::string> vocabulary) {
        Tokenizer t;
        t.unit_ = TokenUnit::Word;
        t.vocab_ = std::move(vocabulary);
        for (size_t i = 0; i < t.vocab_.size(); ++i) {
            if (t.vocab_[i].empty()) throw ConfigError("empty vocabulary entry");
            if (!t.index_.emplace(t.vocab_[i], static_cast<int>(i)).second) {
                throw ConfigError("duplicate vocabulary entry: " + t.vocab_[i]);
            }
        }
        return t;
    }

    TokenUnit unit() const { return unit_; }

    int vocab_size() const {
        return unit_ == TokenUnit::Byte ? 256 : static_cast<int>(vocab_.size());
    }

    std::vector<int> encode(const std::string& text) const {
        std::vector<int> out;
        if (unit_ == TokenUnit::Byte) {
            out.reserve(text.size());
            for (unsigned char c : text) out.push_back(static_cast<int>(c));
            return out;
        }
        size_t pos = 0;
        while (pos < text.size()) {
            size_t end = text.find(' ', pos);
            if (end == std::string::npos) end = text.size();
            if (end > pos) {
                std::string word = text.substr(pos, end - pos);
                auto it = index_.find(word);
                if (it == index_.end()) throw ConfigError("word not in vocabulary: " + word);
                out.push_back(it->second);
            }
            pos = end + 1;
        }
        return out;
    }

    std::string decode(const std::vector<int>& tokens) const {
        std::string out;
        if (unit_ == TokenUnit::Byte) {
            out.reserve(tokens.size());
            for (int t : tokens) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
            return out;
        }
        for (size_t i = 0; i < tokens.size(); ++i) {
            if (tokens[i] < 0 || tokens[i] >= vocab_size()) {
                throw ConfigError("token id out of range");
            }
            if (i) out.push_back(' ');
            out += vocab_[tokens[i]];
        }
        return out;
    }

    // decode that drops a trailing partial UTF-8 sequence (byte mode)
    std::string decode_text(const std::vector<int>& tokens) const {
        std::string s = decode(tokens);
        if (unit_ != TokenUnit::Byte) return s;
        size_t keep = s.size();
        size_t i = s.size();
        int continuation = 0;
        while (i > 0) {
            unsigned char c = static_cast<unsigned char>(s[i - 1]);
            if ((c & 0xc0) == 0x80) {
                ++continuation;
                --i;
                if (continuation > 3) break;
                continue;
            }
            int expected = 0;
            if ((c & 0x80) == 0) expected = 0;
            else if ((c & 0xe0) == 0xc0) expected = 1;
            else if ((c & 0xf0) == 0xe0) expected = 2;
            else if ((c & 0xf8) == 0xf0) expected = 3;
            else expected = -1; // stray byte, leave as-is
            if (expected > continuation) keep = i - 1; // incomplete tail
            break;
        }
        return s.substr(0, keep);
    }

private:
    Tokenizer() = default;
    TokenUnit unit_ = TokenUnit::Byte;
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int> index_;
};

} // namespace factforge
