#include "qfs/evaluator.hpp"

#include "qfs/errors.hpp"
#include "qfs/sentences.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace qfs {

using nlohmann::ordered_json;

std::string_view to_string(ErrorCategory category) {
    switch (category) {
    case ErrorCategory::out_of_article: return "out-of-article";
    case ErrorCategory::entity: return "entity";
    case ErrorCategory::relation: return "relation";
    case ErrorCategory::sentence: return "sentence";
    case ErrorCategory::no_error: return "no-error";
    }
    return "no-error";
}

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

} // namespace

ErrorCategory error_category_from_label(std::string_view label) {
    std::string l = lower(trim_view(label));
    if (l == "out-of-article error" || l == "out of article error" || l == "out-of-article") {
        return ErrorCategory::out_of_article;
    }
    if (l == "entity error" || l == "entity") return ErrorCategory::entity;
    if (l == "relation error" || l == "relation") return ErrorCategory::relation;
    if (l == "sentence error" || l == "sentence") return ErrorCategory::sentence;
    if (l == "no error" || l == "no-error" || l == "none") return ErrorCategory::no_error;
    throw ParseError("unknown error category label: \"" + std::string(label) + "\"");
}

bool is_extrinsic(ErrorCategory category) { return category == ErrorCategory::out_of_article; }

bool is_intrinsic(ErrorCategory category) {
    return category == ErrorCategory::entity || category == ErrorCategory::relation ||
           category == ErrorCategory::sentence;
}

Summary make_summary(std::string query_id, std::string model_id, std::string text,
                     const Tokenizer& tokenizer) {
    Summary summary;
    summary.query_id = std::move(query_id);
    summary.model_id = std::move(model_id);
    summary.token_count = tokenizer.count(text);
    summary.sentences = split_sentence_texts(text);
    summary.text = std::move(text);
    return summary;
}

namespace {

std::string flatten(std::string_view sentence) {
    std::string out(trim_view(sentence));
    for (char& c : out) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return out;
}

} // namespace

std::string render_numbered_summary(const Summary& summary) {
    std::string out;
    for (std::size_t i = 0; i < summary.sentences.size(); ++i) {
        if (i > 0) out += '\n';
        out += std::to_string(i + 1) + ": " + flatten(summary.sentences[i]);
    }
    return out;
}

std::string render_sentence_lines(const Summary& summary) {
    std::string out;
    for (std::size_t i = 0; i < summary.sentences.size(); ++i) {
        if (i > 0) out += '\n';
        out += flatten(summary.sentences[i]);
    }
    return out;
}

std::vector<FactVerdict> parse_fact_verdicts(const std::string& raw, const SummaryRef& ref,
                                             std::size_t sentence_count) {
    ordered_json j = ordered_json::parse(extract_json_payload(raw), nullptr, false);
    if (j.is_discarded() || !j.is_array()) {
        throw ParseError("fact verification output must be a JSON list");
    }
    if (j.size() != sentence_count) {
        throw ParseError("expected " + std::to_string(sentence_count) + " sentence verdicts, got " +
                         std::to_string(j.size()));
    }
    std::vector<FactVerdict> verdicts;
    verdicts.reserve(sentence_count);
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& entry = j[i];
        if (!entry.is_object() || !entry.contains("category")) {
            throw ParseError("verdict " + std::to_string(i + 1) + " is missing \"category\"");
        }
        if (!entry["category"].is_string()) {
            throw ParseError("verdict " + std::to_string(i + 1) + ": \"category\" must be a string");
        }
        FactVerdict verdict;
        verdict.summary_ref = ref;
        verdict.sentence_index = i;
        verdict.category = error_category_from_label(entry["category"].get<std::string>());
        verdict.faithful = verdict.category == ErrorCategory::no_error;
        if (entry.contains("reason") && entry["reason"].is_string()) {
            verdict.reason = entry["reason"].get<std::string>();
        }
        verdicts.push_back(std::move(verdict));
    }
    return verdicts;
}

std::vector<AlignmentVerdict> parse_alignment_verdicts(const std::string& raw,
                                                       const SummaryRef& ref,
                                                       const std::vector<KeyFact>& facts,
                                                       std::size_t sentence_count) {
    ordered_json j = ordered_json::parse(extract_json_payload(raw), nullptr, false);
    if (j.is_discarded() || !j.is_array()) {
        throw ParseError("key-fact alignment output must be a JSON list");
    }
    if (j.size() != facts.size()) {
        throw ParseError("expected " + std::to_string(facts.size()) + " key-fact verdicts, got " +
                         std::to_string(j.size()));
    }
    std::vector<AlignmentVerdict> verdicts;
    verdicts.reserve(facts.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& entry = j[i];
        const std::string where = "key-fact " + std::to_string(i + 1);
        if (!entry.is_object() || !entry.contains("response") || !entry["response"].is_string()) {
            throw ParseError(where + " is missing a \"response\" string");
        }
        std::string response = lower(trim_view(entry["response"].get<std::string>()));
        if (response != "yes" && response != "no") {
            throw ParseError(where + ": \"response\" must be Yes or No");
        }
        AlignmentVerdict verdict;
        verdict.summary_ref = ref;
        verdict.key_fact_id = facts[i].id;
        verdict.matched = response == "yes";

        std::set<std::size_t> seen;
        if (entry.contains("line number")) {
            const auto& lines = entry["line number"];
            if (!lines.is_array()) throw ParseError(where + ": \"line number\" must be a list");
            for (const auto& line : lines) {
                if (!line.is_number_integer()) {
                    throw ParseError(where + ": line numbers must be integers");
                }
                long long value = line.get<long long>();
                if (value < 1 || static_cast<std::size_t>(value) > sentence_count) {
                    throw ParseError(where + ": line number " + std::to_string(value) +
                                     " is outside 1.." + std::to_string(sentence_count));
                }
                if (!seen.insert(static_cast<std::size_t>(value)).second) {
                    throw ParseError(where + ": duplicate line number " + std::to_string(value));
                }
                verdict.line_numbers.push_back(static_cast<std::size_t>(value));
            }
        }
        if (verdict.matched && verdict.line_numbers.empty()) {
            throw ParseError(where + ": \"Yes\" must cite at least one line number");
        }
        if (!verdict.matched && !verdict.line_numbers.empty()) {
            throw ParseError(where + ": \"No\" must not cite line numbers");
        }
        verdicts.push_back(std::move(verdict));
    }
    return verdicts;
}

std::vector<FactVerdict> verify_facts(const Chunk& chunk, const Summary& summary,
                                      const ModelSpec& judge, Gateway& gateway,
                                      const PromptLibrary& prompts, std::size_t max_tokens) {
    if (summary.sentences.empty()) {
        throw StageError("fact verification needs a summary with at least one sentence");
    }
    Bindings bindings = {{"excerpt", chunk.text},
                         {"# sentences", std::to_string(summary.sentences.size())},
                         {"summary sentences", render_sentence_lines(summary)}};
    ChatRequest request;
    request.model = judge;
    request.messages = prompts.render(templates::fact_verify, bindings);
    request.max_tokens = max_tokens;
    request.stage = "evaluate";
    request.template_id = std::string(templates::fact_verify);
    request.bindings = std::move(bindings);

    SummaryRef ref{summary.query_id, summary.model_id};
    std::size_t n = summary.sentences.size();
    auto [verdicts, _] = gateway.complete_structured(
        std::move(request),
        [&](const std::string& raw) { return parse_fact_verdicts(raw, ref, n); });
    return verdicts;
}

std::vector<AlignmentVerdict> align_keyfacts(const Summary& summary,
                                             const std::vector<KeyFact>& facts,
                                             const ModelSpec& judge, Gateway& gateway,
                                             const PromptLibrary& prompts,
                                             std::size_t max_tokens) {
    if (facts.empty()) throw StageError("key-fact alignment needs a non-empty fact list");

    std::string fact_list;
    for (std::size_t i = 0; i < facts.size(); ++i) {
        if (i > 0) fact_list += '\n';
        fact_list += std::to_string(i + 1) + ". " + facts[i].text;
    }
    Bindings bindings = {{"summary", render_numbered_summary(summary)},
                         {"# key-facts", std::to_string(facts.size())},
                         {"key-fact list", std::move(fact_list)}};
    ChatRequest request;
    request.model = judge;
    request.messages = prompts.render(templates::keyfact_align, bindings);
    request.max_tokens = max_tokens;
    request.stage = "evaluate";
    request.template_id = std::string(templates::keyfact_align);
    request.bindings = std::move(bindings);

    SummaryRef ref{summary.query_id, summary.model_id};
    std::size_t n = summary.sentences.size();
    auto [verdicts, _] = gateway.complete_structured(
        std::move(request),
        [&](const std::string& raw) { return parse_alignment_verdicts(raw, ref, facts, n); });
    return verdicts;
}

} // namespace qfs
