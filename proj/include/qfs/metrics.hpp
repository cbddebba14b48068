#pragma once

#include "qfs/evaluator.hpp"
#include "qfs/keyfact.hpp"

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace qfs {

// Level a summary sentence is assigned to: the deepest tree level among the
// matched key-facts citing it, or `none` when no matched fact cites it.
enum class SentenceLevel { root, branch, leaf, none };

std::string_view to_string(SentenceLevel level);

struct LevelPartition {
    std::vector<SentenceLevel> levels; // index = sentence index

    std::size_t count(SentenceLevel level) const;
};

// Fraction of reference key-facts at `level` that the summary entails.
// Throws StageError when the tree has no facts at that level; callers must
// record the level as absent rather than zero.
double compute_recall(const KeyFactTree& tree, std::span<const AlignmentVerdict> verdicts,
                      FactLevel level);

// Matched facts across all levels over total facts.
double compute_whole_recall(const KeyFactTree& tree, std::span<const AlignmentVerdict> verdicts);

LevelPartition assign_levels(const KeyFactTree& tree, std::span<const AlignmentVerdict> verdicts,
                             std::size_t sentence_count);

// Fraction of sentences at `level` that are faithful. Throws StageError on an
// empty level (absent, never zero).
double compute_faithfulness(const LevelPartition& partition,
                            std::span<const FactVerdict> fact_verdicts, SentenceLevel level);

double compute_overall_faithfulness(std::span<const FactVerdict> fact_verdicts);

// floor(bins * chunk_index / num_chunks), clamped to bins - 1.
int bin_by_position(std::size_t chunk_index, std::size_t num_chunks, int bins = 5);

// max - min over five populated bins.
double recall_gap(const std::array<double, 5>& per_bin_recalls);

// Product-moment correlation; throws StageError on fewer than two points or
// zero variance.
double pearson(std::span<const double> xs, std::span<const double> ys);

// Agreement fraction between two equal-length binary label vectors.
double bacc(std::span<const int> predicted, std::span<const int> gold);

struct ErrorHistogram {
    std::map<ErrorCategory, std::size_t> counts; // no_error excluded
    std::size_t total() const;
    std::size_t extrinsic() const;
    std::size_t intrinsic() const;
};

ErrorHistogram error_distribution(std::span<const FactVerdict> verdicts);

// Everything the aggregator needs to know about one evaluated summary.
struct EvaluatedSummary {
    std::string query_id;
    std::string model_id;
    Perspective perspective = Perspective::analytical;
    ChunkRef chunk;
    std::size_t num_chunks = 0; // chunk count of the source document
    std::size_t sentence_count = 0;
    std::size_t summary_tokens = 0;
    KeyFactTree tree; // validated tree the query was built from
    std::vector<AlignmentVerdict> alignment;
    std::vector<FactVerdict> facts;
};

struct GoldLabel {
    std::string task;        // "alignment" or "factcheck"
    std::string instance_id; // alignment: model/query/fact_id; factcheck: model/query/index
    int gold = 0;
};

// Per (model, perspective) slice of the report. Missing optionals mean the
// denominator was empty everywhere; they are excluded from rendering and
// never coerced to zero.
struct PerspectiveMetrics {
    std::size_t summaries = 0;
    std::map<std::string, std::optional<double>> recall;       // root/branch/leaf/all
    std::map<std::string, std::optional<double>> faithfulness; // root/branch/leaf/none/all
    std::map<std::string, std::vector<std::optional<double>>> position_recall; // level -> bins
    std::map<std::string, std::optional<double>> gap;          // level -> recall gap
    double mean_sentences = 0.0;
    double mean_tokens = 0.0;
    std::map<std::string, std::optional<double>> pearson_length_recall;
    std::map<std::string, std::size_t> error_histogram; // category name -> count
};

struct SummaryLevelMetrics {
    double recall = 0.0;
    double faithfulness = 0.0;
    double mean = 0.0;
};

struct MetricsReport {
    int bins = 5;
    // model -> perspective name -> metrics
    std::map<std::string, std::map<std::string, PerspectiveMetrics>> models;
    std::map<std::string, SummaryLevelMetrics> summary_level; // model -> coarse scores
    std::map<std::string, std::optional<double>> agreement;   // task -> bACC, when gold given

    nlohmann::ordered_json to_json() const;
    static MetricsReport from_json(const nlohmann::ordered_json& j);
};

MetricsReport aggregate(const std::vector<EvaluatedSummary>& summaries, int bins,
                        const std::vector<GoldLabel>& gold = {});

} // namespace qfs
