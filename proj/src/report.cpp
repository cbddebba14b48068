#include "qfs/report.hpp"

#include "qfs/errors.hpp"

#include <cstdio>
#include <cstdlib>
#include <sstream>

namespace qfs {

namespace {

std::string fixed3(double value) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.3f", value);
    return buffer;
}

std::string exact(double value) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.17g", value);
    return buffer;
}

std::string cell_or_dash(const std::optional<double>& value) {
    return value ? fixed3(*value) : "-";
}

std::string bin_label(int bin, int bins) {
    int lo = bin * 100 / bins;
    int hi = (bin + 1) * 100 / bins;
    return std::to_string(lo) + "-" + std::to_string(hi) + "%";
}

void check_field(const std::string& field) {
    if (field.find(',') != std::string::npos || field.find('\n') != std::string::npos) {
        throw StageError("report field contains a delimiter: " + field);
    }
}

constexpr const char* kRecallLevels[] = {"root", "branch", "leaf", "all"};
constexpr const char* kFaithfulnessLevels[] = {"root", "branch", "leaf", "none", "all"};

} // namespace

std::string render_markdown_report(const MetricsReport& report) {
    std::ostringstream out;
    out << "# Benchmark report\n";

    out << "\n## Recall by position\n";
    for (const auto& [model, perspectives] : report.models) {
        for (const auto& [perspective, metrics] : perspectives) {
            if (metrics.position_recall.empty()) continue;
            out << "\n### " << model << " / " << perspective << "\n\n";
            out << "| Level |";
            for (int b = 0; b < report.bins; ++b) out << " " << bin_label(b, report.bins) << " |";
            out << " Gap |\n";
            out << "|---|";
            for (int b = 0; b < report.bins; ++b) out << "---|";
            out << "---|\n";
            for (const char* level : kRecallLevels) {
                auto it = metrics.position_recall.find(level);
                if (it == metrics.position_recall.end()) continue;
                out << "| " << level << " |";
                for (const auto& value : it->second) out << " " << cell_or_dash(value) << " |";
                auto gap_it = metrics.gap.find(level);
                out << " "
                    << cell_or_dash(gap_it != metrics.gap.end() ? gap_it->second : std::nullopt)
                    << " |\n";
            }
        }
    }

    out << "\n## Recall\n\n";
    out << "| Model | Perspective |";
    for (const char* level : kRecallLevels) out << " " << level << " |";
    out << "\n|---|---|";
    for (std::size_t i = 0; i < std::size(kRecallLevels); ++i) out << "---|";
    out << "\n";
    for (const auto& [model, perspectives] : report.models) {
        for (const auto& [perspective, metrics] : perspectives) {
            out << "| " << model << " | " << perspective << " |";
            for (const char* level : kRecallLevels) {
                auto it = metrics.recall.find(level);
                out << " "
                    << cell_or_dash(it != metrics.recall.end() ? it->second : std::nullopt)
                    << " |";
            }
            out << "\n";
        }
    }

    out << "\n## Faithfulness by sentence category\n\n";
    out << "| Model | Perspective |";
    for (const char* level : kFaithfulnessLevels) out << " " << level << " |";
    out << "\n|---|---|";
    for (std::size_t i = 0; i < std::size(kFaithfulnessLevels); ++i) out << "---|";
    out << "\n";
    for (const auto& [model, perspectives] : report.models) {
        for (const auto& [perspective, metrics] : perspectives) {
            out << "| " << model << " | " << perspective << " |";
            for (const char* level : kFaithfulnessLevels) {
                auto it = metrics.faithfulness.find(level);
                out << " "
                    << cell_or_dash(it != metrics.faithfulness.end() ? it->second : std::nullopt)
                    << " |";
            }
            out << "\n";
        }
    }

    out << "\n## Summary-level scores\n\n";
    out << "| Model | Recall | Faithfulness | Mean |\n|---|---|---|---|\n";
    for (const auto& [model, coarse] : report.summary_level) {
        out << "| " << model << " | " << fixed3(coarse.recall) << " | "
            << fixed3(coarse.faithfulness) << " | " << fixed3(coarse.mean) << " |\n";
    }

    if (!report.agreement.empty()) {
        out << "\n## Judge agreement (bACC)\n\n| Task | bACC |\n|---|---|\n";
        for (const auto& [task, value] : report.agreement) {
            out << "| " << task << " | " << cell_or_dash(value) << " |\n";
        }
    }

    return out.str();
}

std::vector<CsvCell> report_cells(const MetricsReport& report) {
    std::vector<CsvCell> cells;
    for (const auto& [model, perspectives] : report.models) {
        for (const auto& [perspective, metrics] : perspectives) {
            cells.push_back({"volume", model, perspective, "", "", "summaries",
                             static_cast<double>(metrics.summaries)});
            for (const auto& [level, value] : metrics.recall) {
                if (value) cells.push_back({"recall", model, perspective, level, "", "recall", *value});
            }
            for (const auto& [level, value] : metrics.faithfulness) {
                if (value) {
                    cells.push_back(
                        {"faithfulness", model, perspective, level, "", "faithfulness", *value});
                }
            }
            for (const auto& [level, bins] : metrics.position_recall) {
                for (std::size_t b = 0; b < bins.size(); ++b) {
                    if (bins[b]) {
                        cells.push_back({"position_recall", model, perspective, level,
                                         std::to_string(b), "recall", *bins[b]});
                    }
                }
            }
            for (const auto& [level, value] : metrics.gap) {
                if (value) {
                    cells.push_back({"recall_gap", model, perspective, level, "", "gap", *value});
                }
            }
            cells.push_back(
                {"length", model, perspective, "", "", "mean_sentences", metrics.mean_sentences});
            cells.push_back(
                {"length", model, perspective, "", "", "mean_tokens", metrics.mean_tokens});
            for (const auto& [level, value] : metrics.pearson_length_recall) {
                if (value) {
                    cells.push_back(
                        {"correlation", model, perspective, level, "", "pearson", *value});
                }
            }
            for (const auto& [category, count] : metrics.error_histogram) {
                cells.push_back({"errors", model, perspective, category, "", "count",
                                 static_cast<double>(count)});
            }
        }
    }
    for (const auto& [model, coarse] : report.summary_level) {
        cells.push_back({"summary_level", model, "", "", "", "recall", coarse.recall});
        cells.push_back({"summary_level", model, "", "", "", "faithfulness", coarse.faithfulness});
        cells.push_back({"summary_level", model, "", "", "", "mean", coarse.mean});
    }
    for (const auto& [task, value] : report.agreement) {
        if (value) cells.push_back({"agreement", "", "", "", "", task, *value});
    }
    return cells;
}

std::string render_csv_report(const MetricsReport& report) {
    std::string out = "table,model,perspective,level,bin,metric,value\n";
    for (const auto& cell : report_cells(report)) {
        for (const auto* field :
             {&cell.table, &cell.model, &cell.perspective, &cell.level, &cell.bin, &cell.metric}) {
            check_field(*field);
        }
        out += cell.table + "," + cell.model + "," + cell.perspective + "," + cell.level + "," +
               cell.bin + "," + cell.metric + "," + exact(cell.value) + "\n";
    }
    return out;
}

std::vector<CsvCell> parse_csv_report(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || line != "table,model,perspective,level,bin,metric,value") {
        throw ParseError("unexpected CSV header");
    }
    std::vector<CsvCell> cells;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string field;
        std::istringstream fs(line);
        while (std::getline(fs, field, ',')) fields.push_back(field);
        if (fields.size() != 7) {
            throw ParseError("CSV line " + std::to_string(lineno) + " has " +
                             std::to_string(fields.size()) + " fields, expected 7");
        }
        CsvCell cell;
        cell.table = fields[0];
        cell.model = fields[1];
        cell.perspective = fields[2];
        cell.level = fields[3];
        cell.bin = fields[4];
        cell.metric = fields[5];
        char* end = nullptr;
        cell.value = std::strtod(fields[6].c_str(), &end);
        if (end == fields[6].c_str() || *end != '\0') {
            throw ParseError("CSV line " + std::to_string(lineno) + " has a malformed value");
        }
        cells.push_back(std::move(cell));
    }
    return cells;
}

} // namespace qfs
