#include "qfs/tokenizer.hpp"

#include "qfs/errors.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace qfs {

namespace {

inline bool is_space(unsigned char c) { return std::isspace(c) != 0; }

// Splits text into maximal whitespace / non-whitespace runs.
template <class Fn>
void for_each_segment(std::string_view text, Fn&& fn) {
    std::size_t i = 0;
    while (i < text.size()) {
        bool ws = is_space(static_cast<unsigned char>(text[i]));
        std::size_t j = i + 1;
        while (j < text.size() && is_space(static_cast<unsigned char>(text[j])) == ws) ++j;
        fn(text.substr(i, j - i), ws);
        i = j;
    }
}

} // namespace

std::size_t WhitespaceTokenizer::count(std::string_view text) const {
    std::size_t n = 0;
    for_each_segment(text, [&](std::string_view, bool ws) {
        if (!ws) ++n;
    });
    return n;
}

std::size_t WhitespaceTokenizer::prefix_bytes(std::string_view text, std::size_t max_tokens) const {
    if (max_tokens == 0) return 0;
    std::size_t n = 0;
    std::size_t cut = text.size();
    std::size_t consumed = 0;
    bool done = false;
    for_each_segment(text, [&](std::string_view seg, bool ws) {
        if (done) return;
        if (!ws) {
            if (n == max_tokens) {
                cut = consumed;
                done = true;
                return;
            }
            ++n;
        }
        consumed += seg.size();
    });
    return done ? cut : text.size();
}

struct BpeTokenizer::RankMap {
    std::unordered_map<std::string, std::size_t> rank;
    std::size_t max_token_bytes = 1;
};

BpeTokenizer::BpeTokenizer(const std::string& vocabulary_path) {
    std::ifstream in(vocabulary_path, std::ios::binary);
    if (!in) throw IoError("cannot open vocabulary file: " + vocabulary_path);
    auto map = std::make_shared<RankMap>();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string b64, rank_text, extra;
        if (!(fields >> b64 >> rank_text) || (fields >> extra)) {
            throw ParseError("corrupt vocabulary line " + std::to_string(lineno) + " in " +
                             vocabulary_path);
        }
        std::string token;
        std::size_t rank = 0;
        try {
            token = base64_decode(b64);
            std::size_t pos = 0;
            rank = std::stoull(rank_text, &pos);
            if (pos != rank_text.size()) throw ParseError("trailing rank characters");
        } catch (const std::exception&) {
            throw ParseError("corrupt vocabulary line " + std::to_string(lineno) + " in " +
                             vocabulary_path);
        }
        if (token.empty()) {
            throw ParseError("empty token at vocabulary line " + std::to_string(lineno));
        }
        if (!map->rank.emplace(std::move(token), rank).second) {
            throw ParseError("duplicate token at vocabulary line " + std::to_string(lineno));
        }
    }
    if (map->rank.empty()) throw ParseError("vocabulary file has no entries: " + vocabulary_path);
    for (const auto& [tok, _] : map->rank) {
        map->max_token_bytes = std::max(map->max_token_bytes, tok.size());
    }
    ranks_ = std::move(map);
}

std::vector<std::string> BpeTokenizer::encode_segment(std::string_view segment) const {
    std::vector<std::string> symbols;
    symbols.reserve(segment.size());
    for (char c : segment) symbols.emplace_back(1, c);
    const auto& rank = ranks_->rank;
    while (symbols.size() > 1) {
        std::size_t best_rank = std::numeric_limits<std::size_t>::max();
        std::size_t best_pos = symbols.size();
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            if (symbols[i].size() + symbols[i + 1].size() > ranks_->max_token_bytes) continue;
            auto it = rank.find(symbols[i] + symbols[i + 1]);
            if (it != rank.end() && it->second < best_rank) {
                best_rank = it->second;
                best_pos = i;
            }
        }
        if (best_pos == symbols.size()) break;
        symbols[best_pos] += symbols[best_pos + 1];
        symbols.erase(symbols.begin() + static_cast<std::ptrdiff_t>(best_pos) + 1);
    }
    return symbols;
}

std::vector<std::size_t> BpeTokenizer::token_lengths(std::string_view text) const {
    std::vector<std::size_t> lengths;
    for_each_segment(text, [&](std::string_view seg, bool) {
        for (const auto& sym : encode_segment(seg)) lengths.push_back(sym.size());
    });
    return lengths;
}

std::size_t BpeTokenizer::count(std::string_view text) const {
    std::size_t n = 0;
    for_each_segment(text, [&](std::string_view seg, bool) { n += encode_segment(seg).size(); });
    return n;
}

std::size_t BpeTokenizer::prefix_bytes(std::string_view text, std::size_t max_tokens) const {
    auto lengths = token_lengths(text);
    std::size_t bytes = 0;
    std::size_t used = 0;
    for (std::size_t len : lengths) {
        if (used == max_tokens) break;
        bytes += len;
        ++used;
    }
    return used == lengths.size() ? text.size() : bytes;
}

std::unique_ptr<Tokenizer> make_tokenizer(const TokenizerSpec& spec) {
    switch (spec.kind) {
    case TokenizerSpec::Kind::whitespace_fallback:
        return std::make_unique<WhitespaceTokenizer>();
    case TokenizerSpec::Kind::bpe_vocabulary:
        return std::make_unique<BpeTokenizer>(spec.vocabulary_source);
    }
    throw ConfigError("unknown tokenizer kind");
}

std::size_t count_tokens(std::string_view text, const TokenizerSpec& spec) {
    return make_tokenizer(spec)->count(text);
}

std::string base64_decode(std::string_view data) {
    auto value_of = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::string out;
    int buffer = 0;
    int bits = 0;
    std::size_t i = 0;
    for (; i < data.size(); ++i) {
        char c = data[i];
        if (c == '=') break;
        int v = value_of(c);
        if (v < 0) throw ParseError("invalid base64 character");
        buffer = (buffer << 6) | v;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<char>((buffer >> bits) & 0xff));
        }
    }
    for (; i < data.size(); ++i) {
        if (data[i] != '=') throw ParseError("invalid base64 padding");
    }
    return out;
}

} // namespace qfs
