#pragma once

#include "qfs/gateway.hpp"
#include "qfs/keyfact.hpp"
#include "qfs/tokenizer.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace qfs {

struct DocumentRef {
    std::string id;
    std::string path;
};

// Declarative description of a full benchmark run. Paths are resolved
// relative to the manifest file's directory at load time.
struct RunManifest {
    std::vector<DocumentRef> documents;
    std::vector<Perspective> perspectives{Perspective::analytical, Perspective::narrative};
    std::vector<ModelSpec> models; // summarizers under evaluation
    ModelSpec judge;               // tree generation, validation, queries, evaluation
    std::size_t chunk_max_tokens = 4000;
    int bins = 5;
    int reprompt_limit = 3;
    int transport_retries = 5;
    int backoff_initial_ms = 1000;
    int concurrency = 4;
    std::uint64_t seed = 0;
    std::map<std::string, std::size_t> query_subset; // model_id -> sample size
    TokenizerSpec tokenizer;
    PriceTable prices;
    std::map<std::string, std::size_t> stage_max_tokens; // overrides per stage
    std::string gold_labels; // optional path for agreement scoring
    std::string output_dir = "out";

    GatewayConfig gateway_config() const;
};

// Output-token budget for a pipeline stage, from the manifest override or a
// generous default.
std::size_t stage_output_tokens(const RunManifest& manifest, const std::string& stage);

RunManifest manifest_from_json(const nlohmann::ordered_json& j,
                               const std::filesystem::path& base_dir);
RunManifest load_manifest(const std::filesystem::path& path);

// Throws ConfigError unless the manifest has >= 1 document, model and
// perspective and every model id is unique.
void validate_manifest(const RunManifest& manifest);

} // namespace qfs
