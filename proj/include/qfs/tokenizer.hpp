#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace qfs {

// How token counts are produced. The same spec over the same text yields the
// same count on every invocation; counting has no hidden state.
struct TokenizerSpec {
    enum class Kind { whitespace_fallback, bpe_vocabulary };
    Kind kind = Kind::whitespace_fallback;
    std::string vocabulary_source; // required for bpe_vocabulary
};

class Tokenizer {
public:
    virtual ~Tokenizer() = default;

    virtual std::size_t count(std::string_view text) const = 0;

    // Byte length of the longest prefix of `text` containing at most
    // `max_tokens` tokens, cut at a token boundary. Used for hard-splitting
    // a single sentence that alone exceeds the chunk budget.
    virtual std::size_t prefix_bytes(std::string_view text, std::size_t max_tokens) const = 0;
};

// Tokens are maximal runs of non-whitespace bytes. Counting is additive over
// concatenation as long as the cut point touches whitespace.
class WhitespaceTokenizer final : public Tokenizer {
public:
    std::size_t count(std::string_view text) const override;
    std::size_t prefix_bytes(std::string_view text, std::size_t max_tokens) const override;
};

// Byte-level BPE driven by a ranked vocabulary file: one token per line,
// "<base64-encoded bytes> <rank>". Within each whitespace-delimited segment,
// adjacent symbols are merged greedily by lowest rank; bytes that never merge
// count one token each.
class BpeTokenizer final : public Tokenizer {
public:
    // Throws IoError / ParseError on a missing or corrupt vocabulary file.
    explicit BpeTokenizer(const std::string& vocabulary_path);

    std::size_t count(std::string_view text) const override;
    std::size_t prefix_bytes(std::string_view text, std::size_t max_tokens) const override;

    // Token byte-lengths in order; exposed so chunking can cut on boundaries.
    std::vector<std::size_t> token_lengths(std::string_view text) const;

private:
    std::vector<std::string> encode_segment(std::string_view segment) const;

    struct RankMap;
    std::shared_ptr<const RankMap> ranks_;
};

std::unique_ptr<Tokenizer> make_tokenizer(const TokenizerSpec& spec);

// One-shot count under a spec; prefer holding a Tokenizer for bulk work.
std::size_t count_tokens(std::string_view text, const TokenizerSpec& spec);

// Strict base64 decode (standard alphabet, optional '=' padding).
// Throws ParseError on invalid input.
std::string base64_decode(std::string_view data);

} // namespace qfs
