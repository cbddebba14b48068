#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "qfs/errors.hpp"
#include "qfs/hash.hpp"
#include "qfs/tokenizer.hpp"

#include "support.hpp"

#include <algorithm>
#include <cctype>
#include <map>

using namespace qfs;

TEST_CASE("whitespace tokenizer counts") {
    WhitespaceTokenizer tok;
    CHECK(tok.count("") == 0);
    CHECK(tok.count("hello world") == 2);
    CHECK(tok.count("  hello   world  ") == 2);
    CHECK(tok.count("one") == 1);
    CHECK(tok.count("\n\t ") == 0);
}

TEST_CASE("whitespace counting is deterministic and additive at space cuts") {
    WhitespaceTokenizer tok;
    SplitMix64 rng(99);
    for (int iter = 0; iter < 200; ++iter) {
        std::string text;
        std::size_t words = rng.below(30);
        for (std::size_t w = 0; w < words; ++w) {
            std::size_t len = 1 + rng.below(8);
            for (std::size_t c = 0; c < len; ++c) {
                text.push_back(static_cast<char>('a' + rng.below(26)));
            }
            text.push_back(rng.below(4) == 0 ? '\n' : ' ');
        }
        CHECK(tok.count(text) == tok.count(text));
        for (std::size_t i = 0; i < text.size(); ++i) {
            if (text[i] == ' ' || text[i] == '\n') {
                CHECK(tok.count(text.substr(0, i)) + tok.count(text.substr(i)) ==
                      tok.count(text));
                break;
            }
        }
    }
}

TEST_CASE("whitespace prefix_bytes cuts on token boundaries") {
    WhitespaceTokenizer tok;
    std::string text = "aa bb cc dd";
    CHECK(tok.prefix_bytes(text, 0) == 0);
    CHECK(tok.prefix_bytes(text, 2) == 6); // "aa bb " ends right before "cc"
    CHECK(tok.count(text.substr(0, tok.prefix_bytes(text, 2))) == 2);
    CHECK(tok.prefix_bytes(text, 4) == text.size());
    CHECK(tok.prefix_bytes(text, 9) == text.size());
}

TEST_CASE("base64 decoding") {
    CHECK(base64_decode("aGVsbG8=") == "hello");
    CHECK(base64_decode("aGk=") == "hi");
    CHECK(base64_decode("") == "");
    CHECK_THROWS_AS(base64_decode("a!b"), ParseError);
    CHECK_THROWS_AS(base64_decode("aGk=x"), ParseError);
}

namespace {

// Second formulation of the same greedy scheme: walk the vocabulary in rank
// order and apply the first merge that fits, instead of scanning adjacent
// pairs for the best rank. Used as the independent oracle.
std::size_t oracle_bpe_count(const std::string& text,
                             const std::vector<std::pair<std::string, std::size_t>>& vocab) {
    std::vector<std::pair<std::string, std::size_t>> ranked = vocab;
    std::sort(ranked.begin(), ranked.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });

    std::size_t total = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        bool ws = std::isspace(static_cast<unsigned char>(text[i])) != 0;
        std::size_t j = i + 1;
        while (j < text.size() &&
               (std::isspace(static_cast<unsigned char>(text[j])) != 0) == ws) {
            ++j;
        }
        std::string segment = text.substr(i, j - i);
        std::vector<std::string> symbols;
        for (char c : segment) symbols.emplace_back(1, c);
        bool merged = true;
        while (merged && symbols.size() > 1) {
            merged = false;
            for (const auto& [token, rank] : ranked) {
                for (std::size_t k = 0; k + 1 < symbols.size(); ++k) {
                    if (symbols[k] + symbols[k + 1] == token) {
                        symbols[k] += symbols[k + 1];
                        symbols.erase(symbols.begin() + static_cast<std::ptrdiff_t>(k) + 1);
                        merged = true;
                        break;
                    }
                }
                if (merged) break;
            }
        }
        total += symbols.size();
        i = j;
    }
    return total;
}

std::vector<std::pair<std::string, std::size_t>> load_vocab_for_oracle() {
    std::string raw = qfs::test::read_file(qfs::test::fixture("bpe_vocab.txt"));
    std::vector<std::pair<std::string, std::size_t>> vocab;
    std::istringstream in(raw);
    std::string b64;
    std::size_t rank;
    while (in >> b64 >> rank) vocab.push_back({base64_decode(b64), rank});
    return vocab;
}

} // namespace

TEST_CASE("bpe tokenizer matches the frozen golden counts") {
    BpeTokenizer tok(qfs::test::fixture("bpe_vocab.txt").string());
    // Precomputed once with an independent implementation of the scheme.
    CHECK(tok.count("hello world") == 8);

    std::string doc = qfs::test::read_file(qfs::test::fixture("chunking_sample.txt"));
    std::string paragraph = doc.substr(0, doc.find("\n\n"));
    CHECK(tok.count(paragraph) == 229);
}

TEST_CASE("bpe tokenizer equals the rank-walk oracle") {
    BpeTokenizer tok(qfs::test::fixture("bpe_vocab.txt").string());
    auto vocab = load_vocab_for_oracle();

    std::string doc = qfs::test::read_file(qfs::test::fixture("chunking_sample.txt"));
    std::string paragraph = doc.substr(0, doc.find("\n\n"));
    CHECK(tok.count(paragraph) == oracle_bpe_count(paragraph, vocab));

    SplitMix64 rng(3);
    for (int iter = 0; iter < 40; ++iter) {
        std::size_t offset = rng.below(doc.size() - 200);
        std::string slice = doc.substr(offset, 50 + rng.below(150));
        CHECK(tok.count(slice) == oracle_bpe_count(slice, vocab));
    }
}

TEST_CASE("bpe prefix_bytes consumes whole tokens") {
    BpeTokenizer tok(qfs::test::fixture("bpe_vocab.txt").string());
    std::string text = "the harbor ledger";
    auto lengths = tok.token_lengths(text);
    REQUIRE(lengths.size() >= 3);
    std::size_t two = tok.prefix_bytes(text, 2);
    CHECK(two == lengths[0] + lengths[1]);
    CHECK(tok.prefix_bytes(text, lengths.size() + 5) == text.size());
}

TEST_CASE("bpe vocabulary error handling") {
    CHECK_THROWS_AS(BpeTokenizer("/nonexistent/vocab.txt"), IoError);

    qfs::test::TempDir dir("vocab");
    auto bad = dir.path() / "bad.txt";

    qfs::test::write_file(bad, "not-base64!! 3\n");
    CHECK_THROWS_AS(BpeTokenizer(bad.string()), ParseError);

    qfs::test::write_file(bad, "aGk= notanumber\n");
    CHECK_THROWS_AS(BpeTokenizer(bad.string()), ParseError);

    qfs::test::write_file(bad, "aGk= 1 extra\n");
    CHECK_THROWS_AS(BpeTokenizer(bad.string()), ParseError);

    qfs::test::write_file(bad, "aGk= 1\naGk= 2\n");
    CHECK_THROWS_AS(BpeTokenizer(bad.string()), ParseError);

    qfs::test::write_file(bad, "");
    CHECK_THROWS_AS(BpeTokenizer(bad.string()), ParseError);
}

TEST_CASE("make_tokenizer dispatches on kind") {
    TokenizerSpec ws{TokenizerSpec::Kind::whitespace_fallback, ""};
    CHECK(make_tokenizer(ws)->count("a b") == 2);
    CHECK(count_tokens("", ws) == 0);
    CHECK(count_tokens("hello world", ws) == 2);

    TokenizerSpec bpe{TokenizerSpec::Kind::bpe_vocabulary,
                      qfs::test::fixture("bpe_vocab.txt").string()};
    CHECK(make_tokenizer(bpe)->count("hello world") == 8);
}
