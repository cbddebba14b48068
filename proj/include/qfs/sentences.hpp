#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace qfs {

// A half-open byte range [offset, offset + length) into the original text.
struct SentenceSpan {
    std::size_t offset = 0;
    std::size_t length = 0;
};

// Rule-based sentence splitting: a sentence ends after a run of '.', '!' or
// '?' that is followed by whitespace and then an uppercase letter or an
// opening quote. A fixed abbreviation guard list ("Dr.", "Mr.", ...) keeps
// title-style periods from splitting. Spans are contiguous, non-overlapping
// and cover the input exactly; any whitespace between sentences leads the
// following span.
std::vector<SentenceSpan> split_sentences(std::string_view text);

// Convenience: the sentence texts themselves, partitioning `text`.
std::vector<std::string> split_sentence_texts(std::string_view text);

// Trims ASCII whitespace from both ends; used when a sentence is presented
// as a standalone content unit.
std::string_view trim_view(std::string_view s);

} // namespace qfs
