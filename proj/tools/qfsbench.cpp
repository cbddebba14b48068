#include "qfs/config.hpp"
#include "qfs/pipeline.hpp"
#include "qfs/report.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

namespace {

struct RunOptions {
    std::string config;
    std::string only;
    std::string out_dir;
    bool mock = false;
    bool resume = true;
    bool has_seed = false;
    std::uint64_t seed = 0;
};

void force_mock(qfs::ModelSpec& spec) {
    if (spec.kind != qfs::ProviderKind::mock) {
        spec.kind = qfs::ProviderKind::mock;
        spec.endpoint.clear();
    }
}

int run_pipeline(const RunOptions& options) {
    qfs::RunManifest manifest = qfs::load_manifest(options.config);
    if (options.mock) {
        force_mock(manifest.judge);
        for (auto& model : manifest.models) force_mock(model);
    }
    if (options.has_seed) manifest.seed = options.seed;
    if (!options.out_dir.empty()) manifest.output_dir = options.out_dir;
    qfs::validate_manifest(manifest);

    if (!options.resume && std::filesystem::exists(manifest.output_dir)) {
        std::filesystem::remove_all(manifest.output_dir);
    }

    auto tokenizer = qfs::make_tokenizer(manifest.tokenizer);
    qfs::Gateway gateway(*tokenizer, manifest.gateway_config(), manifest.prices);
    qfs::Pipeline pipeline(manifest, gateway, qfs::PromptLibrary::builtin(), *tokenizer);

    if (options.only.empty()) {
        pipeline.run_all();
    } else {
        pipeline.run_stage(options.only);
    }

    if (!pipeline.issues().empty()) {
        std::cerr << pipeline.issues().size() << " stage error(s):\n";
        for (const auto& issue : pipeline.issues()) {
            std::cerr << "  [" << issue.stage << "] " << issue.item << ": " << issue.detail
                      << "\n";
        }
        return 1;
    }
    std::cout << "run complete: " << pipeline.store().root().string() << "\n";
    return 0;
}

int emit_report(const std::string& metrics_path, const std::string& format,
                const std::string& out_path) {
    std::ifstream in(metrics_path, std::ios::binary);
    if (!in) {
        std::cerr << "error: cannot read " << metrics_path << "\n";
        return 2;
    }
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(in, nullptr, false);
    if (j.is_discarded()) {
        std::cerr << "error: " << metrics_path << " is not valid JSON\n";
        return 2;
    }
    qfs::MetricsReport report = qfs::MetricsReport::from_json(j);
    std::string rendered =
        format == "csv" ? qfs::render_csv_report(report) : qfs::render_markdown_report(report);
    if (out_path.empty()) {
        std::cout << rendered;
    } else {
        std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
        out << rendered;
        if (!out) {
            std::cerr << "error: cannot write " << out_path << "\n";
            return 2;
        }
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Query-focused summarization benchmark over key-fact trees"};
    app.require_subcommand(1);

    RunOptions options;
    std::string stage_name;
    std::string metrics_path;
    std::string format = "md";
    std::string report_out;

    auto* run = app.add_subcommand("run", "Run the pipeline end to end (resumable)");
    run->add_option("--config", options.config, "Run manifest (JSON)")->required();
    run->add_flag("--mock", options.mock, "Force every provider to the offline mock");
    run->add_flag("!--no-resume", options.resume, "Discard existing artifacts first");
    run->add_option("--only", options.only, "Run a single stage");
    auto* seed_opt = run->add_option("--seed", options.seed, "Override the manifest seed");
    run->add_option("--out", options.out_dir, "Override the output directory");

    auto* stage = app.add_subcommand("stage", "Run exactly one stage");
    stage->add_option("name", stage_name, "ingest|trees|validate|queries|summarize|evaluate|metrics|report|audit")
        ->required();
    stage->add_option("--config", options.config, "Run manifest (JSON)")->required();
    stage->add_flag("--mock", options.mock, "Force every provider to the offline mock");
    auto* stage_seed_opt = stage->add_option("--seed", options.seed, "Override the manifest seed");
    stage->add_option("--out", options.out_dir, "Override the output directory");

    auto* report = app.add_subcommand("report", "Render tables from a metrics file");
    report->add_option("--metrics", metrics_path, "Path to metrics.json")->required();
    report->add_option("--format", format, "md or csv")
        ->check(CLI::IsMember({"md", "csv"}));
    report->add_option("--out", report_out, "Output file (stdout when omitted)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            options.has_seed = seed_opt->count() > 0;
            return run_pipeline(options);
        }
        if (stage->parsed()) {
            options.has_seed = stage_seed_opt->count() > 0;
            options.only = stage_name;
            return run_pipeline(options);
        }
        if (report->parsed()) {
            return emit_report(metrics_path, format, report_out);
        }
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    }
    return 0;
}
