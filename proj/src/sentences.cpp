#include "qfs/sentences.hpp"

#include <array>
#include <cctype>

namespace qfs {

namespace {

constexpr std::array<std::string_view, 9> kAbbreviations = {
    "Dr.", "Mr.", "Mrs.", "Ms.", "St.", "vs.", "etc.", "e.g.", "i.e."};

inline bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

inline bool opens_sentence(char c) {
    return (std::isupper(static_cast<unsigned char>(c)) != 0) || c == '"' || c == '\'';
}

// The whitespace-delimited word ending at text[end - 1].
std::string_view word_ending_at(std::string_view text, std::size_t end) {
    std::size_t start = end;
    while (start > 0 && !is_space(text[start - 1])) --start;
    return text.substr(start, end - start);
}

bool guarded_abbreviation(std::string_view text, std::size_t terminator_end) {
    std::string_view word = word_ending_at(text, terminator_end);
    for (std::string_view abbr : kAbbreviations) {
        if (word == abbr) return true;
    }
    return false;
}

} // namespace

std::vector<SentenceSpan> split_sentences(std::string_view text) {
    std::vector<SentenceSpan> spans;
    if (text.empty()) return spans;

    std::size_t sentence_start = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        if (!is_terminator(text[i])) {
            ++i;
            continue;
        }
        std::size_t run_end = i + 1;
        while (run_end < text.size() && is_terminator(text[run_end])) ++run_end;

        bool split = false;
        if (run_end < text.size() && is_space(text[run_end])) {
            std::size_t next = run_end;
            while (next < text.size() && is_space(text[next])) ++next;
            if (next < text.size() && opens_sentence(text[next])) {
                bool single_period = (run_end - i == 1) && text[i] == '.';
                split = !(single_period && guarded_abbreviation(text, run_end));
            }
        }
        if (split) {
            spans.push_back({sentence_start, run_end - sentence_start});
            sentence_start = run_end;
        }
        i = run_end;
    }
    spans.push_back({sentence_start, text.size() - sentence_start});
    return spans;
}

std::vector<std::string> split_sentence_texts(std::string_view text) {
    std::vector<std::string> out;
    for (const auto& span : split_sentences(text)) {
        out.emplace_back(text.substr(span.offset, span.length));
    }
    return out;
}

std::string_view trim_view(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return s.substr(b, e - b);
}

} // namespace qfs
