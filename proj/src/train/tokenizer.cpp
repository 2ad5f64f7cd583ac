#include "latefuse/train/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <unordered_map>

#include "latefuse/core/errors.hpp"

namespace latefuse {

namespace {

enum class CharClass { letter, digit, space, punct };

CharClass classify(unsigned char c) {
    if (c >= 0x80 || std::isalpha(c)) return CharClass::letter;
    if (std::isdigit(c)) return CharClass::digit;
    if (std::isspace(c)) return CharClass::space;
    return CharClass::punct;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::uint64_t pair_key(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

// Applies merges by rank to one pre-token, tracking byte offsets.
void encode_chunk(std::string_view text, std::size_t begin, std::size_t end,
                  const std::unordered_map<std::uint64_t, int>& ranks, int first_merge_id,
                  std::vector<TokenPiece>& out) {
    std::vector<TokenPiece> parts;
    parts.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        parts.push_back({static_cast<unsigned char>(text[i]), i, i + 1});
    }
    while (parts.size() > 1 && !ranks.empty()) {
        int best_rank = -1;
        std::size_t best_at = 0;
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
            const auto it = ranks.find(pair_key(parts[i].id, parts[i + 1].id));
            if (it != ranks.end() && (best_rank < 0 || it->second < best_rank)) {
                best_rank = it->second;
                best_at = i;
            }
        }
        if (best_rank < 0) break;
        parts[best_at] = {first_merge_id + best_rank, parts[best_at].begin, parts[best_at + 1].end};
        parts.erase(parts.begin() + static_cast<std::ptrdiff_t>(best_at) + 1);
    }
    out.insert(out.end(), parts.begin(), parts.end());
}

}  // namespace

std::string_view to_string(TokenizerMode mode) { return mode == TokenizerMode::byte_level ? "byte" : "bpe"; }

TokenizerMode parse_tokenizer_mode(std::string_view text) {
    if (text == "byte" || text == "byte-level" || text == "bytes") return TokenizerMode::byte_level;
    if (text == "bpe") return TokenizerMode::bpe;
    throw ConfigError("unknown tokenizer mode '" + std::string(text) + "' (expected byte or bpe)");
}

std::vector<std::pair<std::size_t, std::size_t>> pretokenize(std::string_view text) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
        const std::size_t start = i;
        const auto c = classify(static_cast<unsigned char>(text[i]));
        if (text[i] == ' ' && i + 1 < n && classify(static_cast<unsigned char>(text[i + 1])) != CharClass::space) {
            ++i;
            const auto run = classify(static_cast<unsigned char>(text[i]));
            while (i < n && classify(static_cast<unsigned char>(text[i])) == run) ++i;
        } else if (c == CharClass::space) {
            while (i < n && is_space(text[i])) ++i;
            // Leave a final plain space to lead the next word.
            if (i < n && i - start > 1 && text[i - 1] == ' ') --i;
        } else {
            while (i < n && classify(static_cast<unsigned char>(text[i])) == c) ++i;
        }
        out.emplace_back(start, i);
    }
    return out;
}

Tokenizer Tokenizer::byte_level() {
    Tokenizer t;
    t.vocab_.reserve(256);
    for (int b = 0; b < 256; ++b) t.vocab_.emplace_back(1, static_cast<char>(b));
    return t;
}

void Tokenizer::add_merge(int left, int right) {
    merges_.emplace_back(left, right);
    vocab_.push_back(vocab_.at(left) + vocab_.at(right));
}

Tokenizer Tokenizer::train_bpe(std::span<const std::string> texts, int vocab_size) {
    if (vocab_size < 256) throw ConfigError("BPE vocab_size must be >= 256, got " + std::to_string(vocab_size));
    Tokenizer t = byte_level();
    t.mode_ = TokenizerMode::bpe;

    // Unique pre-tokens with counts; std::map keeps the iteration order fixed.
    std::map<std::string, std::int64_t> counts;
    for (const auto& text : texts) {
        for (const auto& [b, e] : pretokenize(text)) ++counts[text.substr(b, e - b)];
    }
    std::vector<std::vector<int>> words;
    std::vector<std::int64_t> freq;
    for (const auto& [w, c] : counts) {
        words.emplace_back(w.begin(), w.end());
        for (auto& id : words.back()) id = static_cast<unsigned char>(id);
        freq.push_back(c);
    }

    while (t.vocab_size() < vocab_size) {
        std::map<std::pair<int, int>, std::int64_t> pairs;
        for (std::size_t w = 0; w < words.size(); ++w) {
            for (std::size_t i = 0; i + 1 < words[w].size(); ++i) pairs[{words[w][i], words[w][i + 1]}] += freq[w];
        }
        if (pairs.empty()) break;
        auto best = pairs.begin();
        for (auto it = pairs.begin(); it != pairs.end(); ++it) {
            if (it->second > best->second) best = it;
        }
        if (best->second < 2) break;
        const auto [left, right] = best->first;
        const int id = t.vocab_size();
        t.add_merge(left, right);
        for (auto& word : words) {
            std::vector<int> merged;
            merged.reserve(word.size());
            for (std::size_t i = 0; i < word.size(); ++i) {
                if (i + 1 < word.size() && word[i] == left && word[i + 1] == right) {
                    merged.push_back(id);
                    ++i;
                } else {
                    merged.push_back(word[i]);
                }
            }
            word = std::move(merged);
        }
    }
    return t;
}

const std::string& Tokenizer::piece(int id) const {
    if (id < 0 || id >= vocab_size()) {
        throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab_size()));
    }
    return vocab_[static_cast<std::size_t>(id)];
}

std::vector<TokenPiece> Tokenizer::encode_with_offsets(std::string_view text) const {
    std::vector<TokenPiece> out;
    out.reserve(text.size());
    if (mode_ == TokenizerMode::byte_level) {
        for (std::size_t i = 0; i < text.size(); ++i) out.push_back({static_cast<unsigned char>(text[i]), i, i + 1});
        return out;
    }
    std::unordered_map<std::uint64_t, int> ranks;
    for (std::size_t r = 0; r < merges_.size(); ++r) ranks.emplace(pair_key(merges_[r].first, merges_[r].second), int(r));
    for (const auto& [b, e] : pretokenize(text)) encode_chunk(text, b, e, ranks, 256, out);
    return out;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& p : encode_with_offsets(text)) ids.push_back(p.id);
    return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) out += piece(id);
    return out;
}

nlohmann::json Tokenizer::to_json() const {
    nlohmann::json merges = nlohmann::json::array();
    for (const auto& [a, b] : merges_) merges.push_back({a, b});
    return {{"mode", to_string(mode_)}, {"vocab_size", vocab_size()}, {"merges", merges}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
    try {
        Tokenizer t = byte_level();
        t.mode_ = parse_tokenizer_mode(j.at("mode").get<std::string>());
        for (const auto& m : j.at("merges")) {
            const int a = m.at(0).get<int>();
            const int b = m.at(1).get<int>();
            const int next = t.vocab_size();
            if (a < 0 || b < 0 || a >= next || b >= next) {
                throw DataError("tokenizer merge (" + std::to_string(a) + ", " + std::to_string(b) +
                                ") refers to an undefined token");
            }
            t.add_merge(a, b);
        }
        if (t.mode_ == TokenizerMode::byte_level && !t.merges_.empty()) {
            throw DataError("byte-level tokenizer cannot carry merges");
        }
        if (j.contains("vocab_size") && j["vocab_size"].get<int>() != t.vocab_size()) {
            throw DataError("tokenizer vocab_size " + j["vocab_size"].dump() + " disagrees with " +
                            std::to_string(t.vocab_size()) + " defined tokens");
        }
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed tokenizer description: ") + e.what());
    } catch (const ConfigError& e) {
        throw DataError(e.what());
    }
}

TokenSpan align_span(std::span<const TokenPiece> tokens, std::string_view text, std::size_t byte_begin,
                     std::size_t byte_end) {
    if (byte_begin >= byte_end || byte_end > text.size()) {
        throw AlignmentError("span [" + std::to_string(byte_begin) + ", " + std::to_string(byte_end) +
                             ") is empty or outside a text of " + std::to_string(text.size()) + " bytes");
    }
    bool found = false;
    TokenSpan out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        std::size_t cb = tokens[i].begin, ce = tokens[i].end;
        while (cb < ce && is_space(text[cb])) ++cb;
        while (ce > cb && is_space(text[ce - 1])) --ce;
        if (cb == ce || ce <= byte_begin || cb >= byte_end) continue;
        if (cb < byte_begin || ce > byte_end) {
            throw AlignmentError("span '" + std::string(text.substr(byte_begin, byte_end - byte_begin)) +
                                 "' cuts token " + std::to_string(i) + " '" +
                                 std::string(text.substr(tokens[i].begin, tokens[i].end - tokens[i].begin)) + "'");
        }
        if (!found) out.first = i;
        out.last = i;
        found = true;
    }
    if (!found) {
        throw AlignmentError("span '" + std::string(text.substr(byte_begin, byte_end - byte_begin)) +
                             "' covers no token");
    }
    return out;
}

bool is_valid_utf8(std::string_view text) {
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > text.size()) return false;
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(text[i + k]);
            if ((cc & 0xC0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3F);
        }
        static constexpr std::uint32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
        if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
        i += len;
    }
    return true;
}

std::size_t codepoint_count(std::string_view text) {
    std::size_t n = 0;
    for (char c : text) {
        if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) ++n;
    }
    return n;
}

std::size_t codepoint_to_byte(std::string_view text, std::size_t codepoint_offset) {
    if (!is_valid_utf8(text)) throw DataError("text is not valid UTF-8");
    std::size_t seen = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if ((static_cast<unsigned char>(text[i]) & 0xC0) == 0x80) continue;
        if (seen == codepoint_offset) return i;
        ++seen;
    }
    if (seen == codepoint_offset) return text.size();
    throw DataError("character offset " + std::to_string(codepoint_offset) + " past end of a " +
                    std::to_string(seen) + "-character text");
}

}  // namespace latefuse
