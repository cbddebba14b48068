#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "qfs/errors.hpp"
#include "qfs/hash.hpp"
#include "qfs/metrics.hpp"

#include "support.hpp"

#include <cmath>

using namespace qfs;

namespace {

// Random evaluation instance: tree of <= 14 nodes, summary of <= 10
// sentences, alignment and fact verdicts drawn uniformly.
struct Instance {
    KeyFactTree tree;
    std::size_t sentences = 0;
    std::vector<AlignmentVerdict> alignment;
    std::vector<FactVerdict> facts;
};

Instance random_instance(SplitMix64& rng) {
    Instance instance;
    instance.tree = qfs::test::random_tree(rng, 2, 2, 2);
    instance.sentences = 1 + rng.below(10);
    for (const auto& fact : linearize(instance.tree)) {
        AlignmentVerdict verdict;
        verdict.summary_ref = {"q", "m"};
        verdict.key_fact_id = fact.id;
        verdict.matched = rng.below(2) == 0;
        if (verdict.matched) {
            std::size_t first = 1 + rng.below(instance.sentences);
            verdict.line_numbers.push_back(first);
            if (instance.sentences > 1 && rng.below(3) == 0) {
                std::size_t second = 1 + rng.below(instance.sentences);
                if (second != first) verdict.line_numbers.push_back(second);
            }
        }
        instance.alignment.push_back(std::move(verdict));
    }
    for (std::size_t s = 0; s < instance.sentences; ++s) {
        FactVerdict verdict;
        verdict.summary_ref = {"q", "m"};
        verdict.sentence_index = s;
        verdict.faithful = rng.unit() < 0.6;
        verdict.category = verdict.faithful ? ErrorCategory::no_error
                           : rng.below(2) == 0 ? ErrorCategory::out_of_article
                                               : ErrorCategory::relation;
        instance.facts.push_back(std::move(verdict));
    }
    return instance;
}

// Brute-force enumeration, kept deliberately simple-minded.
struct OracleCounts {
    std::size_t matched[3] = {0, 0, 0};
    std::size_t total[3] = {0, 0, 0};
};

OracleCounts oracle_recall_counts(const Instance& instance) {
    OracleCounts counts;
    for (const auto& fact : linearize(instance.tree)) {
        std::size_t level = fact.level == FactLevel::root     ? 0
                            : fact.level == FactLevel::branch ? 1
                                                              : 2;
        ++counts.total[level];
        for (const auto& verdict : instance.alignment) {
            if (verdict.key_fact_id == fact.id && verdict.matched) {
                ++counts.matched[level];
                break;
            }
        }
    }
    return counts;
}

std::vector<SentenceLevel> oracle_partition(const Instance& instance) {
    std::vector<SentenceLevel> levels(instance.sentences, SentenceLevel::none);
    auto facts = linearize(instance.tree);
    for (std::size_t s = 0; s < instance.sentences; ++s) {
        int best = 0;
        for (const auto& verdict : instance.alignment) {
            if (!verdict.matched) continue;
            bool cites = false;
            for (std::size_t line : verdict.line_numbers) cites |= (line == s + 1);
            if (!cites) continue;
            for (const auto& fact : facts) {
                if (fact.id != verdict.key_fact_id) continue;
                int depth = fact.level == FactLevel::root     ? 1
                            : fact.level == FactLevel::branch ? 2
                                                              : 3;
                best = std::max(best, depth);
            }
        }
        levels[s] = best == 0   ? SentenceLevel::none
                    : best == 1 ? SentenceLevel::root
                    : best == 2 ? SentenceLevel::branch
                                : SentenceLevel::leaf;
    }
    return levels;
}

const FactLevel kLevels[3] = {FactLevel::root, FactLevel::branch, FactLevel::leaf};
const SentenceLevel kSentenceLevels[4] = {SentenceLevel::root, SentenceLevel::branch,
                                          SentenceLevel::leaf, SentenceLevel::none};

} // namespace

TEST_CASE("compute_recall arithmetic on a small fixture") {
    // Tree with 4 leaves, one of them matched.
    KeyFactTree tree;
    tree.roots.push_back(
        {"r0", "root", {{"r0.b0", "branch", {{"r0.b0.l0", "a"}, {"r0.b0.l1", "b"},
                                             {"r0.b0.l2", "c"}, {"r0.b0.l3", "d"}}}}});
    std::vector<AlignmentVerdict> verdicts;
    for (const auto& fact : linearize(tree)) {
        verdicts.push_back({{"q", "m"}, fact.id, fact.id == "r0.b0.l2", {}});
        if (verdicts.back().matched) verdicts.back().line_numbers = {1};
    }
    CHECK(compute_recall(tree, verdicts, FactLevel::leaf) == 0.25);
    CHECK(compute_recall(tree, verdicts, FactLevel::root) == 0.0);
    CHECK(compute_whole_recall(tree, verdicts) == 1.0 / 6.0); // 1 of 6 nodes

    KeyFactTree no_leaves;
    no_leaves.roots.push_back({"r0", "root", {}});
    CHECK_THROWS_AS(compute_recall(no_leaves, {}, FactLevel::leaf), StageError);
    CHECK_THROWS_AS(compute_whole_recall(KeyFactTree{}, {}), StageError);
}

TEST_CASE("recall equals brute-force enumeration on 1000 seeded instances") {
    SplitMix64 rng(424242);
    for (int iter = 0; iter < 1000; ++iter) {
        Instance instance = random_instance(rng);
        OracleCounts counts = oracle_recall_counts(instance);
        for (int level = 0; level < 3; ++level) {
            if (counts.total[level] == 0) {
                CHECK_THROWS_AS(compute_recall(instance.tree, instance.alignment, kLevels[level]),
                                StageError);
            } else {
                double expected = static_cast<double>(counts.matched[level]) /
                                  static_cast<double>(counts.total[level]);
                CHECK(compute_recall(instance.tree, instance.alignment, kLevels[level]) ==
                      expected);
            }
        }
        std::size_t matched_all = counts.matched[0] + counts.matched[1] + counts.matched[2];
        std::size_t total_all = counts.total[0] + counts.total[1] + counts.total[2];
        CHECK(compute_whole_recall(instance.tree, instance.alignment) ==
              static_cast<double>(matched_all) / static_cast<double>(total_all));
    }
}

TEST_CASE("assign_levels picks the deepest citing level") {
    KeyFactTree tree;
    tree.roots.push_back({"r0", "root", {{"r0.b0", "branch", {{"r0.b0.l0", "leaf"}}}}});
    std::vector<AlignmentVerdict> verdicts = {
        {{"q", "m"}, "r0", true, {1}},
        {{"q", "m"}, "r0.b0", false, {}},
        {{"q", "m"}, "r0.b0.l0", true, {1, 3}},
    };
    LevelPartition partition = assign_levels(tree, verdicts, 4);
    CHECK(partition.levels[0] == SentenceLevel::leaf); // cited by root and leaf
    CHECK(partition.levels[1] == SentenceLevel::none);
    CHECK(partition.levels[2] == SentenceLevel::leaf);
    CHECK(partition.levels[3] == SentenceLevel::none);
}

TEST_CASE("assign_levels partitions and matches the oracle on random instances") {
    SplitMix64 rng(11);
    for (int iter = 0; iter < 500; ++iter) {
        Instance instance = random_instance(rng);
        LevelPartition partition =
            assign_levels(instance.tree, instance.alignment, instance.sentences);
        REQUIRE(partition.levels.size() == instance.sentences);
        CHECK(partition.levels == oracle_partition(instance));
        std::size_t covered = 0;
        for (SentenceLevel level : kSentenceLevels) covered += partition.count(level);
        CHECK(covered == instance.sentences);
    }
}

TEST_CASE("compute_faithfulness matches the hand-worked example") {
    // Five sentences at levels (leaf, leaf, root, none, none) with faithful
    // flags (1, 0, 1, 0, 0): leaf 0.5, root 1.0, none 0.0, all 0.4.
    LevelPartition partition;
    partition.levels = {SentenceLevel::leaf, SentenceLevel::leaf, SentenceLevel::root,
                        SentenceLevel::none, SentenceLevel::none};
    std::vector<FactVerdict> facts;
    bool flags[5] = {true, false, true, false, false};
    for (std::size_t i = 0; i < 5; ++i) {
        facts.push_back({{"q", "m"},
                         i,
                         flags[i],
                         flags[i] ? ErrorCategory::no_error : ErrorCategory::relation,
                         ""});
    }
    CHECK(compute_faithfulness(partition, facts, SentenceLevel::leaf) == 0.5);
    CHECK(compute_faithfulness(partition, facts, SentenceLevel::root) == 1.0);
    CHECK(compute_faithfulness(partition, facts, SentenceLevel::none) == 0.0);
    CHECK(compute_overall_faithfulness(facts) == 0.4);
    CHECK_THROWS_AS(compute_faithfulness(partition, facts, SentenceLevel::branch), StageError);
}

TEST_CASE("faithfulness weighted-average identity on random instances") {
    SplitMix64 rng(606);
    for (int iter = 0; iter < 500; ++iter) {
        Instance instance = random_instance(rng);
        LevelPartition partition =
            assign_levels(instance.tree, instance.alignment, instance.sentences);

        double weighted = 0.0;
        std::size_t total = 0;
        for (SentenceLevel level : kSentenceLevels) {
            std::size_t count = partition.count(level);
            if (count == 0) continue;
            weighted +=
                compute_faithfulness(partition, instance.facts, level) * static_cast<double>(count);
            total += count;
        }
        REQUIRE(total == instance.sentences);
        double overall = compute_overall_faithfulness(instance.facts);
        CHECK(std::abs(weighted / static_cast<double>(total) - overall) <= 1e-12);
    }
}

TEST_CASE("recall weighted-average identity on random instances") {
    SplitMix64 rng(607);
    for (int iter = 0; iter < 500; ++iter) {
        Instance instance = random_instance(rng);
        OracleCounts counts = oracle_recall_counts(instance);
        double weighted = 0.0;
        std::size_t total = 0;
        for (int level = 0; level < 3; ++level) {
            if (counts.total[level] == 0) continue;
            weighted += compute_recall(instance.tree, instance.alignment, kLevels[level]) *
                        static_cast<double>(counts.total[level]);
            total += counts.total[level];
        }
        double overall = compute_whole_recall(instance.tree, instance.alignment);
        CHECK(std::abs(weighted / static_cast<double>(total) - overall) <= 1e-12);
    }
}

TEST_CASE("bin_by_position formula") {
    // 25 chunks: indices 0-4 -> bin 0, ..., 20-24 -> bin 4.
    for (std::size_t i = 0; i < 25; ++i) CHECK(bin_by_position(i, 25) == static_cast<int>(i / 5));
    // 5 chunks: one per bin.
    for (std::size_t i = 0; i < 5; ++i) CHECK(bin_by_position(i, 5) == static_cast<int>(i));
    // 7 chunks: floor(5i/7).
    int expected7[] = {0, 0, 1, 2, 2, 3, 4};
    for (std::size_t i = 0; i < 7; ++i) CHECK(bin_by_position(i, 7) == expected7[i]);
    // Single chunk lands in bin 0.
    CHECK(bin_by_position(0, 1) == 0);
    CHECK_THROWS_AS(bin_by_position(7, 7), StageError);
    CHECK_THROWS_AS(bin_by_position(0, 0), StageError);
}

TEST_CASE("recall_gap is max minus min") {
    std::array<double, 5> anchor = {0.87, 0.85, 0.86, 0.88, 0.89};
    CHECK(recall_gap(anchor) == doctest::Approx(0.04).epsilon(1e-12));
    std::array<double, 5> constant = {0.3, 0.3, 0.3, 0.3, 0.3};
    CHECK(recall_gap(constant) == 0.0);

    SplitMix64 rng(9);
    for (int iter = 0; iter < 300; ++iter) {
        std::array<double, 5> bins{};
        for (auto& bin : bins) bin = rng.unit();
        double lo = bins[0];
        double hi = bins[0];
        for (double bin : bins) {
            lo = std::min(lo, bin);
            hi = std::max(hi, bin);
        }
        double gap = recall_gap(bins);
        CHECK(gap == hi - lo);
        CHECK(gap >= 0.0);
        bool all_equal = true;
        for (double bin : bins) all_equal &= (bin == bins[0]);
        CHECK((gap == 0.0) == all_equal);

        std::array<double, 5> shifted = bins;
        double delta = rng.unit();
        for (auto& bin : shifted) bin += delta;
        CHECK(recall_gap(shifted) == doctest::Approx(gap).epsilon(1e-9));
    }
}

TEST_CASE("pearson closed forms and second-formula agreement") {
    std::vector<double> xs = {1, 2, 3, 4, 5, 6, 7, 8};
    std::vector<double> doubled, negated;
    for (double x : xs) {
        doubled.push_back(2 * x);
        negated.push_back(-x);
    }
    CHECK(pearson(xs, doubled) == 1.0);
    CHECK(pearson(xs, negated) == -1.0);

    // Textbook-style fixture checked against the expanded formula.
    std::vector<double> ys = {2.1, 2.9, 6.2, 7.8, 9.1, 12.3, 13.5, 16.0};
    double n = 8;
    double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxy += xs[i] * ys[i];
        sxx += xs[i] * xs[i];
        syy += ys[i] * ys[i];
    }
    double second = (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
    CHECK(std::abs(pearson(xs, ys) - second) <= 1e-12);

    std::vector<double> one = {1.0};
    std::vector<double> two = {2.0};
    CHECK_THROWS_AS(pearson(one, two), StageError);
    std::vector<double> flat = {1.0, 1.0};
    std::vector<double> rise = {2.0, 3.0};
    CHECK_THROWS_AS(pearson(flat, rise), StageError); // zero variance
    std::vector<double> pair = {1.0, 2.0};
    CHECK_THROWS_AS(pearson(pair, two), StageError);
}

TEST_CASE("pearson is invariant under positive affine rescaling") {
    SplitMix64 rng(123);
    for (int iter = 0; iter < 100; ++iter) {
        std::size_t n = 3 + rng.below(20);
        std::vector<double> xs, ys;
        for (std::size_t i = 0; i < n; ++i) {
            xs.push_back(rng.unit() * 10);
            ys.push_back(rng.unit() * 10);
        }
        double base;
        try {
            base = pearson(xs, ys);
        } catch (const StageError&) {
            continue;
        }
        double a = 0.5 + rng.unit() * 3;
        double b = rng.unit() * 7 - 3;
        std::vector<double> scaled;
        for (double x : xs) scaled.push_back(a * x + b);
        CHECK(pearson(scaled, ys) == doctest::Approx(base).epsilon(1e-9));
    }
}

TEST_CASE("bacc agreement") {
    std::vector<int> a = {1, 0, 1, 1, 0, 0, 1, 0};
    CHECK(bacc(a, a) == 1.0);
    std::vector<int> flipped;
    for (int v : a) flipped.push_back(1 - v);
    CHECK(bacc(a, flipped) == 0.0);

    std::vector<int> gold = {1, 0, 1, 1, 0, 0, 1, 0};
    std::vector<int> pred = {1, 0, 1, 0, 0, 0, 0, 0}; // 6 of 8 agree
    CHECK(bacc(pred, gold) == 0.75);

    std::vector<int> empty;
    CHECK_THROWS_AS(bacc(empty, empty), StageError);
    std::vector<int> single = {1};
    std::vector<int> twice = {1, 0};
    CHECK_THROWS_AS(bacc(single, twice), StageError);

    SplitMix64 rng(55);
    for (int iter = 0; iter < 50; ++iter) {
        std::vector<int> labels;
        std::size_t n = 1 + rng.below(30);
        for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.below(2)));
        CHECK(bacc(labels, labels) == 1.0);
    }
}

TEST_CASE("error_distribution and the extrinsic rollup") {
    std::vector<FactVerdict> verdicts;
    auto add = [&](ErrorCategory category) {
        verdicts.push_back({{"q", "m"}, verdicts.size(),
                            category == ErrorCategory::no_error, category, ""});
    };
    for (int i = 0; i < 19; ++i) add(ErrorCategory::out_of_article);
    add(ErrorCategory::entity);
    for (int i = 0; i < 7; ++i) add(ErrorCategory::no_error);

    ErrorHistogram histogram = error_distribution(verdicts);
    CHECK(histogram.total() == 20);
    CHECK(histogram.extrinsic() == 19);
    CHECK(histogram.intrinsic() == 1);
    CHECK(static_cast<double>(histogram.extrinsic()) / histogram.total() == 0.95);

    CHECK(error_distribution({}).total() == 0);
}

namespace {

// Two hand-worked summaries for one model, analytical perspective.
std::vector<EvaluatedSummary> golden_instances() {
    KeyFactTree tree;
    tree.roots.push_back(
        {"r0", "root", {{"r0.b0", "branch", {{"r0.b0.l0", "leaf a"}, {"r0.b0.l1", "leaf b"}}}}});

    EvaluatedSummary a;
    a.query_id = "qA";
    a.model_id = "m";
    a.perspective = Perspective::analytical;
    a.chunk = {"doc", 0};
    a.num_chunks = 5;
    a.sentence_count = 4;
    a.summary_tokens = 40;
    a.tree = tree;
    a.alignment = {{{"qA", "m"}, "r0", true, {1}},
                   {{"qA", "m"}, "r0.b0", false, {}},
                   {{"qA", "m"}, "r0.b0.l0", true, {2}},
                   {{"qA", "m"}, "r0.b0.l1", false, {}}};
    a.facts = {{{"qA", "m"}, 0, true, ErrorCategory::no_error, ""},
               {{"qA", "m"}, 1, false, ErrorCategory::entity, ""},
               {{"qA", "m"}, 2, true, ErrorCategory::no_error, ""},
               {{"qA", "m"}, 3, false, ErrorCategory::out_of_article, ""}};

    EvaluatedSummary b;
    b.query_id = "qB";
    b.model_id = "m";
    b.perspective = Perspective::analytical;
    b.chunk = {"doc", 4};
    b.num_chunks = 5;
    b.sentence_count = 2;
    b.summary_tokens = 10;
    b.tree = tree;
    b.alignment = {{{"qB", "m"}, "r0", false, {}},
                   {{"qB", "m"}, "r0.b0", true, {1}},
                   {{"qB", "m"}, "r0.b0.l0", false, {}},
                   {{"qB", "m"}, "r0.b0.l1", true, {2}}};
    b.facts = {{{"qB", "m"}, 0, true, ErrorCategory::no_error, ""},
               {{"qB", "m"}, 1, true, ErrorCategory::no_error, ""}};
    return {a, b};
}

} // namespace

TEST_CASE("aggregate produces the hand-computed report") {
    MetricsReport report = aggregate(golden_instances(), 5);
    REQUIRE(report.models.count("m") == 1);
    const PerspectiveMetrics& m = report.models.at("m").at("analytical");

    CHECK(m.summaries == 2);
    CHECK(*m.recall.at("root") == 0.5);   // (1 + 0) / 2
    CHECK(*m.recall.at("branch") == 0.5); // (0 + 1) / 2
    CHECK(*m.recall.at("leaf") == 0.5);
    CHECK(*m.recall.at("all") == 0.5);

    CHECK(*m.faithfulness.at("root") == 1.0);
    CHECK(*m.faithfulness.at("branch") == 1.0);
    CHECK(*m.faithfulness.at("leaf") == 0.5);
    CHECK(*m.faithfulness.at("none") == 0.5);
    CHECK(*m.faithfulness.at("all") == doctest::Approx(4.0 / 6.0).epsilon(1e-12));

    // Bins 0 and 4 are populated; the rest are absent, so no gap.
    const auto& root_bins = m.position_recall.at("root");
    REQUIRE(root_bins.size() == 5);
    CHECK(*root_bins[0] == 1.0);
    CHECK_FALSE(root_bins[1].has_value());
    CHECK(*root_bins[4] == 0.0);
    CHECK_FALSE(m.gap.at("root").has_value());

    CHECK(m.mean_sentences == 3.0);
    CHECK(m.mean_tokens == 25.0);

    // Two points per level: root correlates +1, branch -1, leaf/all degenerate.
    CHECK(*m.pearson_length_recall.at("root") == doctest::Approx(1.0));
    CHECK(*m.pearson_length_recall.at("branch") == doctest::Approx(-1.0));
    CHECK_FALSE(m.pearson_length_recall.at("leaf").has_value());
    CHECK_FALSE(m.pearson_length_recall.at("all").has_value());

    CHECK(m.error_histogram.at("entity") == 1);
    CHECK(m.error_histogram.at("out-of-article") == 1);

    const SummaryLevelMetrics& coarse = report.summary_level.at("m");
    CHECK(coarse.recall == 0.5);
    CHECK(coarse.faithfulness == doctest::Approx(4.0 / 6.0).epsilon(1e-12));
    CHECK(coarse.mean == doctest::Approx((0.5 + 4.0 / 6.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("aggregate computes bACC against gold labels") {
    std::vector<GoldLabel> gold = {
        {"alignment", "m/qA/r0", 1},    // prediction 1: agree
        {"alignment", "m/qA/r0.b0", 1}, // prediction 0: disagree
        {"factcheck", "m/qA/0", 1},     // prediction 1: agree
        {"factcheck", "m/qB/1", 0},     // prediction 1: disagree
        {"factcheck", "m/qA/2", 1},     // prediction 1: agree
    };
    MetricsReport report = aggregate(golden_instances(), 5, gold);
    CHECK(*report.agreement.at("alignment") == 0.5);
    CHECK(*report.agreement.at("factcheck") == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    std::vector<GoldLabel> unknown = {{"alignment", "m/qZ/r0", 1}};
    CHECK_THROWS_AS(aggregate(golden_instances(), 5, unknown), StageError);
    std::vector<GoldLabel> bad_task = {{"mystery", "m/qA/r0", 1}};
    CHECK_THROWS_AS(aggregate(golden_instances(), 5, bad_task), StageError);
}

TEST_CASE("aggregate rejects incomplete verdict coverage") {
    auto instances = golden_instances();
    instances[0].alignment.pop_back();
    CHECK_THROWS_AS(aggregate(instances, 5), StageError);

    instances = golden_instances();
    instances[0].facts.pop_back();
    CHECK_THROWS_AS(aggregate(instances, 5), StageError);
}

TEST_CASE("metrics report JSON round-trips") {
    MetricsReport report = aggregate(golden_instances(), 5);
    nlohmann::ordered_json j = report.to_json();
    MetricsReport back = MetricsReport::from_json(j);
    CHECK(back.to_json() == j);
    CHECK_THROWS_AS(MetricsReport::from_json(nlohmann::ordered_json::object()), ParseError);
}
