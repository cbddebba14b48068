#include "qfs/metrics.hpp"

#include "qfs/errors.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace qfs {

using nlohmann::ordered_json;

std::string_view to_string(SentenceLevel level) {
    switch (level) {
    case SentenceLevel::root: return "root";
    case SentenceLevel::branch: return "branch";
    case SentenceLevel::leaf: return "leaf";
    case SentenceLevel::none: return "none";
    }
    return "none";
}

std::size_t LevelPartition::count(SentenceLevel level) const {
    return static_cast<std::size_t>(std::count(levels.begin(), levels.end(), level));
}

namespace {

SentenceLevel deepest(SentenceLevel a, SentenceLevel b) {
    auto depth = [](SentenceLevel level) {
        switch (level) {
        case SentenceLevel::none: return 0;
        case SentenceLevel::root: return 1;
        case SentenceLevel::branch: return 2;
        case SentenceLevel::leaf: return 3;
        }
        return 0;
    };
    return depth(a) >= depth(b) ? a : b;
}

SentenceLevel sentence_level_of(FactLevel level) {
    switch (level) {
    case FactLevel::root: return SentenceLevel::root;
    case FactLevel::branch: return SentenceLevel::branch;
    case FactLevel::leaf: return SentenceLevel::leaf;
    }
    return SentenceLevel::none;
}

std::map<std::string, FactLevel> level_index(const KeyFactTree& tree) {
    std::map<std::string, FactLevel> index;
    for (const auto& fact : linearize(tree)) index.emplace(fact.id, fact.level);
    return index;
}

} // namespace

double compute_recall(const KeyFactTree& tree, std::span<const AlignmentVerdict> verdicts,
                      FactLevel level) {
    auto index = level_index(tree);
    std::size_t total = 0;
    for (const auto& [_, fact_level] : index) {
        if (fact_level == level) ++total;
    }
    if (total == 0) {
        throw StageError(std::string("recall undefined: no key-facts at level ") +
                         std::string(to_string(level)));
    }
    std::size_t matched = 0;
    for (const auto& verdict : verdicts) {
        auto it = index.find(verdict.key_fact_id);
        if (it == index.end()) {
            throw StageError("alignment verdict references unknown key-fact " +
                             verdict.key_fact_id);
        }
        if (it->second == level && verdict.matched) ++matched;
    }
    return static_cast<double>(matched) / static_cast<double>(total);
}

double compute_whole_recall(const KeyFactTree& tree, std::span<const AlignmentVerdict> verdicts) {
    std::size_t total = tree.node_count();
    if (total == 0) throw StageError("recall undefined: tree has no key-facts");
    std::size_t matched = 0;
    for (const auto& verdict : verdicts) {
        if (verdict.matched) ++matched;
    }
    return static_cast<double>(matched) / static_cast<double>(total);
}

LevelPartition assign_levels(const KeyFactTree& tree, std::span<const AlignmentVerdict> verdicts,
                             std::size_t sentence_count) {
    auto index = level_index(tree);
    LevelPartition partition;
    partition.levels.assign(sentence_count, SentenceLevel::none);
    for (const auto& verdict : verdicts) {
        if (!verdict.matched) continue;
        auto it = index.find(verdict.key_fact_id);
        if (it == index.end()) {
            throw StageError("alignment verdict references unknown key-fact " +
                             verdict.key_fact_id);
        }
        SentenceLevel level = sentence_level_of(it->second);
        for (std::size_t line : verdict.line_numbers) {
            if (line < 1 || line > sentence_count) {
                throw StageError("alignment verdict cites line " + std::to_string(line) +
                                 " outside 1.." + std::to_string(sentence_count));
            }
            auto& slot = partition.levels[line - 1];
            slot = deepest(slot, level);
        }
    }
    return partition;
}

double compute_faithfulness(const LevelPartition& partition,
                            std::span<const FactVerdict> fact_verdicts, SentenceLevel level) {
    std::size_t total = 0;
    std::size_t faithful = 0;
    for (const auto& verdict : fact_verdicts) {
        if (verdict.sentence_index >= partition.levels.size()) {
            throw StageError("fact verdict cites sentence index " +
                             std::to_string(verdict.sentence_index) + " outside the partition");
        }
        if (partition.levels[verdict.sentence_index] != level) continue;
        ++total;
        if (verdict.faithful) ++faithful;
    }
    if (total == 0) {
        throw StageError(std::string("faithfulness undefined: no sentences at level ") +
                         std::string(to_string(level)));
    }
    return static_cast<double>(faithful) / static_cast<double>(total);
}

double compute_overall_faithfulness(std::span<const FactVerdict> fact_verdicts) {
    if (fact_verdicts.empty()) throw StageError("faithfulness undefined: no sentences");
    std::size_t faithful = 0;
    for (const auto& verdict : fact_verdicts) {
        if (verdict.faithful) ++faithful;
    }
    return static_cast<double>(faithful) / static_cast<double>(fact_verdicts.size());
}

int bin_by_position(std::size_t chunk_index, std::size_t num_chunks, int bins) {
    if (num_chunks == 0 || chunk_index >= num_chunks) {
        throw StageError("chunk index " + std::to_string(chunk_index) + " outside 0.." +
                         std::to_string(num_chunks) + "-1");
    }
    if (bins < 1) throw StageError("bins must be >= 1");
    auto bin = static_cast<int>(static_cast<std::size_t>(bins) * chunk_index / num_chunks);
    return std::min(bin, bins - 1);
}

double recall_gap(const std::array<double, 5>& per_bin_recalls) {
    auto [lo, hi] = std::minmax_element(per_bin_recalls.begin(), per_bin_recalls.end());
    return *hi - *lo;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw StageError("pearson needs equal-length inputs");
    if (xs.size() < 2) throw StageError("pearson needs at least two points");
    const double n = static_cast<double>(xs.size());
    double mean_x = 0.0;
    double mean_y = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mean_x += xs[i];
        mean_y += ys[i];
    }
    mean_x /= n;
    mean_y /= n;
    double cov = 0.0;
    double var_x = 0.0;
    double var_y = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mean_x;
        const double dy = ys[i] - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if (var_x == 0.0 || var_y == 0.0) throw StageError("pearson undefined: zero variance");
    return cov / std::sqrt(var_x * var_y);
}

double bacc(std::span<const int> predicted, std::span<const int> gold) {
    if (predicted.size() != gold.size()) throw StageError("bacc needs equal-length label vectors");
    if (predicted.empty()) throw StageError("bacc needs at least one instance");
    std::size_t agree = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if ((predicted[i] != 0) == (gold[i] != 0)) ++agree;
    }
    return static_cast<double>(agree) / static_cast<double>(predicted.size());
}

std::size_t ErrorHistogram::total() const {
    std::size_t n = 0;
    for (const auto& [_, count] : counts) n += count;
    return n;
}

std::size_t ErrorHistogram::extrinsic() const {
    auto it = counts.find(ErrorCategory::out_of_article);
    return it != counts.end() ? it->second : 0;
}

std::size_t ErrorHistogram::intrinsic() const { return total() - extrinsic(); }

ErrorHistogram error_distribution(std::span<const FactVerdict> verdicts) {
    ErrorHistogram histogram;
    for (const auto& verdict : verdicts) {
        if (verdict.category == ErrorCategory::no_error) continue;
        ++histogram.counts[verdict.category];
    }
    return histogram;
}

namespace {

constexpr const char* kFactLevels[] = {"root", "branch", "leaf"};

std::optional<double> mean_of(const std::vector<double>& values) {
    if (values.empty()) return std::nullopt;
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
}

FactLevel fact_level_of_name(const std::string& name) { return fact_level_from_string(name); }

struct Accumulator {
    std::size_t summaries = 0;
    std::map<std::string, std::vector<double>> recall_values;            // level -> per summary
    std::map<std::string, std::vector<std::vector<double>>> bin_values;  // level -> bin -> values
    std::map<std::string, std::size_t> faithful_counts;                  // level -> faithful
    std::map<std::string, std::size_t> sentence_counts;                  // level -> total
    std::vector<double> sentence_lengths;
    std::vector<double> token_lengths;
    std::map<std::string, std::vector<std::pair<double, double>>> length_recall; // level
    std::map<std::string, std::size_t> error_histogram;
};

} // namespace

MetricsReport aggregate(const std::vector<EvaluatedSummary>& summaries, int bins,
                        const std::vector<GoldLabel>& gold) {
    if (bins < 1) throw StageError("bins must be >= 1");
    std::map<std::string, std::map<std::string, Accumulator>> slices;
    std::map<std::string, std::vector<double>> model_whole_recall;
    std::map<std::string, std::pair<std::size_t, std::size_t>> model_faithful; // faithful, total

    for (const auto& summary : summaries) {
        if (summary.alignment.size() != summary.tree.node_count()) {
            throw StageError("summary " + summary.query_id + "/" + summary.model_id +
                             ": alignment verdicts do not cover the tree");
        }
        if (summary.facts.size() != summary.sentence_count) {
            throw StageError("summary " + summary.query_id + "/" + summary.model_id +
                             ": fact verdicts do not cover the sentences");
        }

        Accumulator& acc = slices[summary.model_id][std::string(to_string(summary.perspective))];
        ++acc.summaries;
        acc.sentence_lengths.push_back(static_cast<double>(summary.sentence_count));
        acc.token_lengths.push_back(static_cast<double>(summary.summary_tokens));

        int bin = bin_by_position(summary.chunk.chunk_index, summary.num_chunks, bins);
        LevelCounts counts = level_counts(summary.tree);

        auto record_recall = [&](const std::string& level_name, double value) {
            acc.recall_values[level_name].push_back(value);
            auto& bins_for_level = acc.bin_values[level_name];
            if (bins_for_level.empty()) bins_for_level.resize(static_cast<std::size_t>(bins));
            bins_for_level[static_cast<std::size_t>(bin)].push_back(value);
            acc.length_recall[level_name].push_back(
                {static_cast<double>(summary.sentence_count), value});
        };

        for (const char* level_name : kFactLevels) {
            FactLevel level = fact_level_of_name(level_name);
            std::size_t at_level = level == FactLevel::root     ? counts.roots
                                   : level == FactLevel::branch ? counts.branches
                                                                : counts.leaves;
            if (at_level == 0) continue; // absent, not zero
            record_recall(level_name, compute_recall(summary.tree, summary.alignment, level));
        }
        double whole = compute_whole_recall(summary.tree, summary.alignment);
        record_recall("all", whole);
        model_whole_recall[summary.model_id].push_back(whole);

        LevelPartition partition =
            assign_levels(summary.tree, summary.alignment, summary.sentence_count);
        for (const auto& verdict : summary.facts) {
            std::string level_name(to_string(partition.levels[verdict.sentence_index]));
            ++acc.sentence_counts[level_name];
            ++acc.sentence_counts["all"];
            if (verdict.faithful) {
                ++acc.faithful_counts[level_name];
                ++acc.faithful_counts["all"];
            }
        }
        auto& [model_faithful_count, model_total] = model_faithful[summary.model_id];
        for (const auto& verdict : summary.facts) {
            ++model_total;
            if (verdict.faithful) ++model_faithful_count;
        }

        ErrorHistogram histogram = error_distribution(summary.facts);
        for (const auto& [category, count] : histogram.counts) {
            acc.error_histogram[std::string(to_string(category))] += count;
        }
    }

    MetricsReport report;
    report.bins = bins;

    for (auto& [model, perspectives] : slices) {
        for (auto& [perspective, acc] : perspectives) {
            PerspectiveMetrics metrics;
            metrics.summaries = acc.summaries;

            for (const char* level_name : {"root", "branch", "leaf", "all"}) {
                auto it = acc.recall_values.find(level_name);
                metrics.recall[level_name] =
                    it != acc.recall_values.end() ? mean_of(it->second) : std::nullopt;
            }
            for (const char* level_name : {"root", "branch", "leaf", "none", "all"}) {
                auto total_it = acc.sentence_counts.find(level_name);
                if (total_it == acc.sentence_counts.end() || total_it->second == 0) {
                    metrics.faithfulness[level_name] = std::nullopt;
                } else {
                    metrics.faithfulness[level_name] =
                        static_cast<double>(acc.faithful_counts[level_name]) /
                        static_cast<double>(total_it->second);
                }
            }
            for (const auto& [level_name, per_bin] : acc.bin_values) {
                std::vector<std::optional<double>> bin_means;
                bin_means.reserve(per_bin.size());
                bool complete = true;
                std::array<double, 5> gap_input{};
                for (std::size_t b = 0; b < per_bin.size(); ++b) {
                    auto mean = mean_of(per_bin[b]);
                    bin_means.push_back(mean);
                    if (mean && b < gap_input.size()) {
                        gap_input[b] = *mean;
                    } else {
                        complete = false;
                    }
                }
                metrics.position_recall[level_name] = std::move(bin_means);
                metrics.gap[level_name] = (complete && per_bin.size() == 5)
                                              ? std::optional<double>(recall_gap(gap_input))
                                              : std::nullopt;
            }
            metrics.mean_sentences = mean_of(acc.sentence_lengths).value_or(0.0);
            metrics.mean_tokens = mean_of(acc.token_lengths).value_or(0.0);

            for (const auto& [level_name, pairs] : acc.length_recall) {
                std::vector<double> xs;
                std::vector<double> ys;
                for (const auto& [x, y] : pairs) {
                    xs.push_back(x);
                    ys.push_back(y);
                }
                try {
                    metrics.pearson_length_recall[level_name] = pearson(xs, ys);
                } catch (const StageError&) {
                    metrics.pearson_length_recall[level_name] = std::nullopt;
                }
            }
            metrics.error_histogram = acc.error_histogram;
            report.models[model][perspective] = std::move(metrics);
        }
    }

    for (const auto& [model, recalls] : model_whole_recall) {
        SummaryLevelMetrics coarse;
        coarse.recall = mean_of(recalls).value_or(0.0);
        const auto& [faithful, total] = model_faithful[model];
        coarse.faithfulness =
            total > 0 ? static_cast<double>(faithful) / static_cast<double>(total) : 0.0;
        coarse.mean = (coarse.recall + coarse.faithfulness) / 2.0;
        report.summary_level[model] = coarse;
    }

    if (!gold.empty()) {
        // Predictions keyed the way the gold file keys instances.
        std::map<std::string, int> predictions;
        for (const auto& summary : summaries) {
            for (const auto& verdict : summary.alignment) {
                predictions["alignment:" + summary.model_id + "/" + summary.query_id + "/" +
                            verdict.key_fact_id] = verdict.matched ? 1 : 0;
            }
            for (const auto& verdict : summary.facts) {
                predictions["factcheck:" + summary.model_id + "/" + summary.query_id + "/" +
                            std::to_string(verdict.sentence_index)] = verdict.faithful ? 1 : 0;
            }
        }
        std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> by_task;
        for (const auto& label : gold) {
            if (label.task != "alignment" && label.task != "factcheck") {
                throw StageError("unknown gold-label task: " + label.task);
            }
            auto it = predictions.find(label.task + ":" + label.instance_id);
            if (it == predictions.end()) {
                throw StageError("gold label references unknown instance " + label.instance_id +
                                 " for task " + label.task);
            }
            by_task[label.task].first.push_back(it->second);
            by_task[label.task].second.push_back(label.gold);
        }
        for (const char* task : {"alignment", "factcheck"}) {
            auto it = by_task.find(task);
            report.agreement[task] = it == by_task.end()
                                         ? std::nullopt
                                         : std::optional<double>(
                                               bacc(it->second.first, it->second.second));
        }
    }

    return report;
}

namespace {

ordered_json optional_to_json(const std::optional<double>& value) {
    if (!value) return nullptr;
    return *value;
}

std::optional<double> optional_from_json(const ordered_json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

} // namespace

ordered_json MetricsReport::to_json() const {
    ordered_json models_json = ordered_json::object();
    for (const auto& [model, perspectives] : models) {
        ordered_json perspectives_json = ordered_json::object();
        for (const auto& [perspective, metrics] : perspectives) {
            ordered_json m = ordered_json::object();
            m["summaries"] = metrics.summaries;
            ordered_json recall = ordered_json::object();
            for (const auto& [level, value] : metrics.recall) recall[level] = optional_to_json(value);
            m["recall"] = std::move(recall);
            ordered_json faith = ordered_json::object();
            for (const auto& [level, value] : metrics.faithfulness) {
                faith[level] = optional_to_json(value);
            }
            m["faithfulness"] = std::move(faith);
            ordered_json position = ordered_json::object();
            for (const auto& [level, bins_for_level] : metrics.position_recall) {
                ordered_json arr = ordered_json::array();
                for (const auto& value : bins_for_level) arr.push_back(optional_to_json(value));
                position[level] = std::move(arr);
            }
            m["position_recall"] = std::move(position);
            ordered_json gaps = ordered_json::object();
            for (const auto& [level, value] : metrics.gap) gaps[level] = optional_to_json(value);
            m["recall_gap"] = std::move(gaps);
            m["mean_sentences"] = metrics.mean_sentences;
            m["mean_tokens"] = metrics.mean_tokens;
            ordered_json correlation = ordered_json::object();
            for (const auto& [level, value] : metrics.pearson_length_recall) {
                correlation[level] = optional_to_json(value);
            }
            m["pearson_length_recall"] = std::move(correlation);
            ordered_json histogram = ordered_json::object();
            for (const auto& [category, count] : metrics.error_histogram) {
                histogram[category] = count;
            }
            m["error_histogram"] = std::move(histogram);
            perspectives_json[perspective] = std::move(m);
        }
        models_json[model] = std::move(perspectives_json);
    }

    ordered_json summary_json = ordered_json::object();
    for (const auto& [model, coarse] : summary_level) {
        summary_json[model] = {{"recall", coarse.recall},
                               {"faithfulness", coarse.faithfulness},
                               {"mean", coarse.mean}};
    }

    ordered_json out = {{"bins", bins}, {"models", std::move(models_json)},
                        {"summary_level", std::move(summary_json)}};
    if (!agreement.empty()) {
        ordered_json agreement_json = ordered_json::object();
        for (const auto& [task, value] : agreement) agreement_json[task] = optional_to_json(value);
        out["agreement"] = std::move(agreement_json);
    }
    return out;
}

MetricsReport MetricsReport::from_json(const ordered_json& j) {
    if (!j.is_object() || !j.contains("models")) {
        throw ParseError("metrics report is missing \"models\"");
    }
    MetricsReport report;
    report.bins = j.value("bins", 5);
    for (const auto& [model, perspectives] : j["models"].items()) {
        for (const auto& [perspective, m] : perspectives.items()) {
            PerspectiveMetrics metrics;
            metrics.summaries = m.value("summaries", std::size_t{0});
            if (m.contains("recall")) {
                for (const auto& [level, value] : m["recall"].items()) {
                    metrics.recall[level] = optional_from_json(value);
                }
            }
            if (m.contains("faithfulness")) {
                for (const auto& [level, value] : m["faithfulness"].items()) {
                    metrics.faithfulness[level] = optional_from_json(value);
                }
            }
            if (m.contains("position_recall")) {
                for (const auto& [level, arr] : m["position_recall"].items()) {
                    std::vector<std::optional<double>> bins_for_level;
                    for (const auto& value : arr) bins_for_level.push_back(optional_from_json(value));
                    metrics.position_recall[level] = std::move(bins_for_level);
                }
            }
            if (m.contains("recall_gap")) {
                for (const auto& [level, value] : m["recall_gap"].items()) {
                    metrics.gap[level] = optional_from_json(value);
                }
            }
            metrics.mean_sentences = m.value("mean_sentences", 0.0);
            metrics.mean_tokens = m.value("mean_tokens", 0.0);
            if (m.contains("pearson_length_recall")) {
                for (const auto& [level, value] : m["pearson_length_recall"].items()) {
                    metrics.pearson_length_recall[level] = optional_from_json(value);
                }
            }
            if (m.contains("error_histogram")) {
                for (const auto& [category, count] : m["error_histogram"].items()) {
                    metrics.error_histogram[category] = count.get<std::size_t>();
                }
            }
            report.models[model][perspective] = std::move(metrics);
        }
    }
    if (j.contains("summary_level")) {
        for (const auto& [model, coarse] : j["summary_level"].items()) {
            report.summary_level[model] = {coarse.value("recall", 0.0),
                                           coarse.value("faithfulness", 0.0),
                                           coarse.value("mean", 0.0)};
        }
    }
    if (j.contains("agreement")) {
        for (const auto& [task, value] : j["agreement"].items()) {
            report.agreement[task] = optional_from_json(value);
        }
    }
    return report;
}

} // namespace qfs
