#pragma once

#include "qfs/metrics.hpp"

#include <string>
#include <vector>

namespace qfs {

// Markdown rendering of the report tables: recall by position, recall gaps,
// faithfulness by sentence category, and the summary-level comparison.
// Rendering is a pure function of the report; nothing is recomputed.
std::string render_markdown_report(const MetricsReport& report);

// Flat CSV: table,model,perspective,level,bin,metric,value. Values use
// max-precision formatting so a parse round-trip is value-identical.
std::string render_csv_report(const MetricsReport& report);

struct CsvCell {
    std::string table;
    std::string model;
    std::string perspective;
    std::string level;
    std::string bin;
    std::string metric;
    double value = 0.0;

    bool operator==(const CsvCell&) const = default;
};

std::vector<CsvCell> parse_csv_report(const std::string& csv);

// Every numeric cell present in the report, in rendering order; the CSV is
// exactly these rows.
std::vector<CsvCell> report_cells(const MetricsReport& report);

} // namespace qfs
