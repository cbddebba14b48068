#pragma once

#include "qfs/document.hpp"
#include "qfs/gateway.hpp"
#include "qfs/keyfact.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace qfs {

// Faithfulness error taxonomy. Out-of-article is the extrinsic category;
// entity, relation and sentence errors are intrinsic.
enum class ErrorCategory { out_of_article, entity, relation, sentence, no_error };

std::string_view to_string(ErrorCategory category);
// Accepts the judge-facing labels ("Out-of-article error", "No error", ...),
// case-insensitively. Anything else is a ParseError.
ErrorCategory error_category_from_label(std::string_view label);
bool is_extrinsic(ErrorCategory category);
bool is_intrinsic(ErrorCategory category);

struct SummaryRef {
    std::string query_id;
    std::string model_id;

    bool operator==(const SummaryRef&) const = default;
};

// A model's query-focused answer, split into content units (sentences).
// The sentence list partitions `text` byte-exactly.
struct Summary {
    std::string query_id;
    std::string model_id;
    std::string text;
    std::vector<std::string> sentences;
    std::size_t token_count = 0;

    std::size_t sentence_count() const { return sentences.size(); }
};

Summary make_summary(std::string query_id, std::string model_id, std::string text,
                     const Tokenizer& tokenizer);

struct FactVerdict {
    SummaryRef summary_ref;
    std::size_t sentence_index = 0; // 0-based
    bool faithful = false;          // faithful <=> category == no_error
    ErrorCategory category = ErrorCategory::no_error;
    std::string reason;
};

struct AlignmentVerdict {
    SummaryRef summary_ref;
    std::string key_fact_id;
    bool matched = false;                // matched <=> line_numbers non-empty
    std::vector<std::size_t> line_numbers; // 1-based summary sentence numbers
};

// One sentence per line, prefixed "k: " for k = 1..n. Sentences are trimmed
// and internal newlines flattened to spaces so line numbers stay meaningful.
std::string render_numbered_summary(const Summary& summary);

// Sentences one per line without numbering, for the fact-verification prompt.
std::string render_sentence_lines(const Summary& summary);

// Parses the fact-verification response: a JSON list with one
// {"sentence", "reason", "category"} entry per summary sentence, in order.
// A count mismatch or unknown category label is a ParseError.
std::vector<FactVerdict> parse_fact_verdicts(const std::string& raw, const SummaryRef& ref,
                                             std::size_t sentence_count);

// Parses the key-fact alignment response: one {"key-fact", "response",
// "line number"} entry per linearized fact, in order. "Yes" must cite valid,
// duplicate-free line numbers in [1, sentence_count]; "No" must cite none.
std::vector<AlignmentVerdict> parse_alignment_verdicts(const std::string& raw,
                                                       const SummaryRef& ref,
                                                       const std::vector<KeyFact>& facts,
                                                       std::size_t sentence_count);

// Judge task 1: per-sentence fact verification against the anchor chunk.
std::vector<FactVerdict> verify_facts(const Chunk& chunk, const Summary& summary,
                                      const ModelSpec& judge, Gateway& gateway,
                                      const PromptLibrary& prompts, std::size_t max_tokens);

// Judge task 2: entailment of each linearized key-fact in the summary.
std::vector<AlignmentVerdict> align_keyfacts(const Summary& summary,
                                             const std::vector<KeyFact>& facts,
                                             const ModelSpec& judge, Gateway& gateway,
                                             const PromptLibrary& prompts,
                                             std::size_t max_tokens);

} // namespace qfs
