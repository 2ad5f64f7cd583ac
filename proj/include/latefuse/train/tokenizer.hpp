#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace latefuse {

enum class TokenizerMode { byte_level, bpe };

std::string_view to_string(TokenizerMode mode);
TokenizerMode parse_tokenizer_mode(std::string_view text);

// A token with the byte range [begin, end) of the source text it covers.
struct TokenPiece {
    int id = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
};

// Token index range [first, last] (inclusive) covering a text span.
struct TokenSpan {
    std::size_t first = 0;
    std::size_t last = 0;

    std::size_t count() const { return last - first + 1; }
    friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

// Byte-level tokenizer (ids 0..255 are raw bytes) with an optional merge
// table on top. Ids 0..255 are always present, so every input encodes.
class Tokenizer {
public:
    static Tokenizer byte_level();
    // Learns up to vocab_size - 256 merges from texts. Merges never cross
    // pre-token boundaries (letter runs, digit runs, punctuation runs, each
    // with at most one leading space; whitespace runs).
    static Tokenizer train_bpe(std::span<const std::string> texts, int vocab_size);

    TokenizerMode mode() const noexcept { return mode_; }
    int vocab_size() const noexcept { return static_cast<int>(vocab_.size()); }
    const std::vector<std::pair<int, int>>& merges() const noexcept { return merges_; }
    // Bytes of one token.
    const std::string& piece(int id) const;

    std::vector<int> encode(std::string_view text) const;
    std::vector<TokenPiece> encode_with_offsets(std::string_view text) const;
    // Throws IndexError for an id outside the vocabulary.
    std::string decode(std::span<const int> ids) const;

    nlohmann::json to_json() const;
    // Throws DataError for a malformed or inconsistent description.
    static Tokenizer from_json(const nlohmann::json& j);

    friend bool operator==(const Tokenizer& a, const Tokenizer& b) {
        return a.mode_ == b.mode_ && a.merges_ == b.merges_;
    }

private:
    void add_merge(int left, int right);

    TokenizerMode mode_ = TokenizerMode::byte_level;
    std::vector<std::pair<int, int>> merges_;
    std::vector<std::string> vocab_;
};

// Splits text into pre-token byte ranges. Exposed for tests.
std::vector<std::pair<std::size_t, std::size_t>> pretokenize(std::string_view text);

// Maps a byte span of the text to the tokens covering it. A token "fits" the
// span when its bytes, ignoring surrounding whitespace, lie inside the span.
// Throws AlignmentError if the span is empty, out of range, or cuts a token.
TokenSpan align_span(std::span<const TokenPiece> tokens, std::string_view text, std::size_t byte_begin,
                     std::size_t byte_end);

// UTF-8 helpers. Offsets in code points are converted to byte offsets;
// throws DataError on invalid UTF-8 or an offset past the end.
bool is_valid_utf8(std::string_view text);
std::size_t codepoint_to_byte(std::string_view text, std::size_t codepoint_offset);
std::size_t codepoint_count(std::string_view text);

}  // namespace latefuse
