#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "qfs/errors.hpp"
#include "qfs/evaluator.hpp"
#include "qfs/gateway.hpp"
#include "qfs/hash.hpp"
#include "qfs/sentences.hpp"

#include "support.hpp"

using namespace qfs;
using nlohmann::ordered_json;

namespace {

WhitespaceTokenizer ws_tok;

Summary summary_of(const std::string& text) { return make_summary("q1", "m1", text, ws_tok); }

const SummaryRef kRef{"q1", "m1"};

std::vector<KeyFact> three_facts() {
    return {{"r0", FactLevel::root, "the root fact", ""},
            {"r0.b0", FactLevel::branch, "the branch fact", "r0"},
            {"r0.b0.l0", FactLevel::leaf, "the leaf fact", "r0.b0"}};
}

GatewayConfig fast_config() {
    GatewayConfig config;
    config.backoff_initial_ms = 1;
    return config;
}

ModelSpec judge_with_fixtures(const std::string& dir) {
    ModelSpec judge;
    judge.model_id = "judge";
    judge.kind = ProviderKind::mock;
    judge.context_window = 100000;
    judge.max_output_tokens = 4096;
    judge.endpoint = dir;
    return judge;
}

} // namespace

TEST_CASE("error category labels round-trip from judge vocabulary") {
    CHECK(error_category_from_label("No error") == ErrorCategory::no_error);
    CHECK(error_category_from_label("no error") == ErrorCategory::no_error);
    CHECK(error_category_from_label("Out-of-article error") == ErrorCategory::out_of_article);
    CHECK(error_category_from_label("Entity error") == ErrorCategory::entity);
    CHECK(error_category_from_label("Relation error") == ErrorCategory::relation);
    CHECK(error_category_from_label("Sentence error") == ErrorCategory::sentence);
    CHECK_THROWS_AS(error_category_from_label("vibes error"), ParseError);

    CHECK(is_extrinsic(ErrorCategory::out_of_article));
    CHECK_FALSE(is_intrinsic(ErrorCategory::out_of_article));
    CHECK(is_intrinsic(ErrorCategory::relation));
    CHECK_FALSE(is_extrinsic(ErrorCategory::no_error));
    CHECK_FALSE(is_intrinsic(ErrorCategory::no_error));
}

TEST_CASE("make_summary splits sentences that partition the text") {
    Summary summary = summary_of("First point. Second point! Third?");
    CHECK(summary.sentence_count() == 3);
    std::string joined;
    for (const auto& sentence : summary.sentences) joined += sentence;
    CHECK(joined == summary.text);
    CHECK(summary.token_count == 5);
}

TEST_CASE("render_numbered_summary numbers lines 1..n") {
    Summary summary = summary_of("Alpha one. Beta two. Gamma three.");
    CHECK(render_numbered_summary(summary) == "1: Alpha one.\n2: Beta two.\n3: Gamma three.");
    CHECK(render_numbered_summary(summary_of("")) == "");
}

TEST_CASE("numbered rendering round-trips sentence texts on random fixtures") {
    SplitMix64 rng(88);
    const char* starters[] = {"Alpha", "Beta", "Gamma", "Delta"};
    for (int iter = 0; iter < 100; ++iter) {
        std::string text;
        std::size_t n = 1 + rng.below(8);
        for (std::size_t s = 0; s < n; ++s) {
            if (s > 0) text += " ";
            text += starters[rng.below(4)];
            std::size_t words = rng.below(6);
            for (std::size_t w = 0; w < words; ++w) text += " word" + std::to_string(w);
            text += ".";
        }
        Summary summary = summary_of(text);
        std::string rendered = render_numbered_summary(summary);

        // Strip "k: " prefixes and compare with the trimmed sentences.
        std::vector<std::string> lines;
        std::istringstream in(rendered);
        std::string line;
        while (std::getline(in, line)) lines.push_back(line);
        REQUIRE(lines.size() == summary.sentence_count());
        for (std::size_t i = 0; i < lines.size(); ++i) {
            std::string prefix = std::to_string(i + 1) + ": ";
            REQUIRE(lines[i].rfind(prefix, 0) == 0);
            CHECK(lines[i].substr(prefix.size()) == std::string(trim_view(summary.sentences[i])));
        }
    }
}

TEST_CASE("parse_fact_verdicts enforces count and category") {
    const char* good = R"([
      {"sentence": "s1", "reason": "fine", "category": "No error"},
      {"sentence": "s2", "reason": "made up", "category": "Out-of-article error"}
    ])";
    auto verdicts = parse_fact_verdicts(good, kRef, 2);
    REQUIRE(verdicts.size() == 2);
    CHECK(verdicts[0].faithful);
    CHECK(verdicts[0].category == ErrorCategory::no_error);
    CHECK(verdicts[0].sentence_index == 0);
    CHECK_FALSE(verdicts[1].faithful);
    CHECK(verdicts[1].category == ErrorCategory::out_of_article);
    CHECK(verdicts[1].reason == "made up");

    // Count mismatch: four verdicts for a five-sentence summary.
    CHECK_THROWS_AS(parse_fact_verdicts(good, kRef, 5), ParseError);
    CHECK_THROWS_AS(parse_fact_verdicts("{\"not\": \"a list\"}", kRef, 2), ParseError);
    CHECK_THROWS_AS(parse_fact_verdicts(R"([{"sentence": "s", "category": "???"}])", kRef, 1),
                    ParseError);
}

TEST_CASE("fact verdict label coheres with category") {
    SplitMix64 rng(5);
    const char* labels[] = {"No error", "Entity error", "Relation error", "Sentence error",
                            "Out-of-article error"};
    for (int iter = 0; iter < 50; ++iter) {
        ordered_json list = ordered_json::array();
        std::size_t n = 1 + rng.below(6);
        for (std::size_t i = 0; i < n; ++i) {
            list.push_back({{"sentence", "s"}, {"reason", "r"}, {"category", labels[rng.below(5)]}});
        }
        auto verdicts = parse_fact_verdicts(list.dump(), kRef, n);
        for (const auto& verdict : verdicts) {
            CHECK(verdict.faithful == (verdict.category == ErrorCategory::no_error));
        }
    }
}

TEST_CASE("parse_alignment_verdicts enforces ranges and consistency") {
    auto facts = three_facts();

    const char* good = R"([
      {"key-fact": "the root fact", "response": "Yes", "line number": [1]},
      {"key-fact": "the branch fact", "response": "No", "line number": []},
      {"key-fact": "the leaf fact", "response": "Yes", "line number": [1, 3]}
    ])";
    auto verdicts = parse_alignment_verdicts(good, kRef, facts, 3);
    REQUIRE(verdicts.size() == 3);
    CHECK(verdicts[0].matched);
    CHECK(verdicts[0].line_numbers == std::vector<std::size_t>{1});
    CHECK(verdicts[0].key_fact_id == "r0");
    CHECK_FALSE(verdicts[1].matched);
    CHECK(verdicts[1].line_numbers.empty());
    CHECK(verdicts[2].line_numbers == std::vector<std::size_t>{1, 3});

    // Line 9 for a 3-sentence summary.
    const char* out_of_range = R"([
      {"key-fact": "a", "response": "Yes", "line number": [9]},
      {"key-fact": "b", "response": "No", "line number": []},
      {"key-fact": "c", "response": "No", "line number": []}
    ])";
    CHECK_THROWS_AS(parse_alignment_verdicts(out_of_range, kRef, facts, 3), ParseError);

    const char* duplicate = R"([
      {"key-fact": "a", "response": "Yes", "line number": [2, 2]},
      {"key-fact": "b", "response": "No", "line number": []},
      {"key-fact": "c", "response": "No", "line number": []}
    ])";
    CHECK_THROWS_AS(parse_alignment_verdicts(duplicate, kRef, facts, 3), ParseError);

    const char* yes_without_lines = R"([
      {"key-fact": "a", "response": "Yes", "line number": []},
      {"key-fact": "b", "response": "No", "line number": []},
      {"key-fact": "c", "response": "No", "line number": []}
    ])";
    CHECK_THROWS_AS(parse_alignment_verdicts(yes_without_lines, kRef, facts, 3), ParseError);

    const char* count_mismatch = R"([
      {"key-fact": "a", "response": "Yes", "line number": [1]}
    ])";
    CHECK_THROWS_AS(parse_alignment_verdicts(count_mismatch, kRef, facts, 3), ParseError);
}

TEST_CASE("verify_facts drives the judge through fixtures") {
    qfs::test::TempDir dir("judge");
    ModelSpec judge = judge_with_fixtures(dir.path().string());
    Gateway gateway(ws_tok, fast_config());
    const PromptLibrary& prompts = PromptLibrary::builtin();

    Chunk chunk;
    chunk.doc_id = "d";
    chunk.index = 0;
    chunk.text = "The bell rang twice. Nobody answered.";

    Summary summary = summary_of("The bell rang twice. Someone invented a dragon.");
    Bindings bindings = {{"excerpt", chunk.text},
                         {"# sentences", "2"},
                         {"summary sentences", render_sentence_lines(summary)}};
    std::string digest = request_digest("fact_verify", bindings, judge.model_id);
    qfs::test::write_file(dir.path() / (digest + ".txt"), R"([
      {"sentence": "The bell rang twice.", "reason": "stated", "category": "No error"},
      {"sentence": "Someone invented a dragon.", "reason": "unsupported", "category": "Out-of-article error"}
    ])");

    auto verdicts = verify_facts(chunk, summary, judge, gateway, prompts, 1024);
    REQUIRE(verdicts.size() == 2);
    CHECK(verdicts[0].faithful);
    CHECK(verdicts[1].sentence_index == 1);
    CHECK(verdicts[1].category == ErrorCategory::out_of_article);

    Summary empty = summary_of("");
    CHECK_THROWS_AS(verify_facts(chunk, empty, judge, gateway, prompts, 1024), StageError);
}

TEST_CASE("align_keyfacts drives the judge through fixtures") {
    qfs::test::TempDir dir("judge");
    ModelSpec judge = judge_with_fixtures(dir.path().string());
    Gateway gateway(ws_tok, fast_config());
    const PromptLibrary& prompts = PromptLibrary::builtin();

    auto facts = three_facts();
    Summary summary = summary_of("The root is covered here. Unrelated filler.");
    std::string fact_list = "1. the root fact\n2. the branch fact\n3. the leaf fact";
    Bindings bindings = {{"summary", render_numbered_summary(summary)},
                         {"# key-facts", "3"},
                         {"key-fact list", fact_list}};
    std::string digest = request_digest("keyfact_align", bindings, judge.model_id);
    qfs::test::write_file(dir.path() / (digest + ".txt"), R"([
      {"key-fact": "the root fact", "response": "Yes", "line number": [1]},
      {"key-fact": "the branch fact", "response": "No", "line number": []},
      {"key-fact": "the leaf fact", "response": "No", "line number": []}
    ])");

    auto verdicts = align_keyfacts(summary, facts, judge, gateway, prompts, 1024);
    REQUIRE(verdicts.size() == 3);
    CHECK(verdicts[0].matched);
    CHECK(verdicts[0].key_fact_id == "r0");

    CHECK_THROWS_AS(align_keyfacts(summary, {}, judge, gateway, prompts, 1024), StageError);
}
