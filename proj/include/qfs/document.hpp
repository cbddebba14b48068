#pragma once

#include "qfs/tokenizer.hpp"

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace qfs {

struct Document {
    std::string id;
    std::string title;
    std::string text; // line endings normalized to '\n'
    std::size_t token_count = 0;
    std::map<std::string, std::string> metadata;
};

// A sequential, sentence-aligned segment of a document. Chunks of a document
// are indexed 0..N-1 with no gaps and their texts concatenate byte-exactly to
// the document text. token_count <= the configured limit unless `oversized`
// is set, which marks pieces of a single sentence longer than the limit.
struct Chunk {
    std::string doc_id;
    std::size_t index = 0;
    std::string text;
    std::size_t token_count = 0;
    std::size_t sentence_count = 0;
    bool oversized = false;
};

// Reads a UTF-8 text file, normalizes line endings and counts tokens.
// Throws IoError for unreadable paths and EncodingError for invalid UTF-8.
Document load_document(const std::string& path, const std::string& id, const Tokenizer& tokenizer);

// Greedy accumulation of whole sentences up to max_tokens per chunk. A single
// sentence that alone exceeds max_tokens is hard-split at a token boundary
// and every resulting piece is flagged oversized.
std::vector<Chunk> chunk_document(const Document& doc, std::size_t max_tokens,
                                  const Tokenizer& tokenizer);

// True iff `text` is well-formed UTF-8.
bool is_valid_utf8(std::string_view text);

// CRLF / lone CR -> LF.
std::string normalize_line_endings(std::string text);

} // namespace qfs
