#include "qfs/config.hpp"

#include "qfs/errors.hpp"

#include <fstream>
#include <set>

namespace qfs {

using nlohmann::ordered_json;

namespace {

std::string resolve(const std::filesystem::path& base, const std::string& path) {
    if (path.empty()) return path;
    std::filesystem::path p(path);
    if (p.is_absolute()) return p.string();
    return (base / p).lexically_normal().string();
}

ModelSpec model_from_json(const ordered_json& j, const std::filesystem::path& base) {
    ModelSpec spec;
    if (!j.contains("model_id")) throw ConfigError("model entry missing \"model_id\"");
    spec.model_id = j["model_id"].get<std::string>();
    spec.kind = provider_kind_from_string(j.value("provider", "mock"));
    spec.context_window = j.value("context_window", std::size_t{128000});
    spec.max_output_tokens = j.value("max_output_tokens", std::size_t{4096});
    spec.endpoint = j.value("endpoint", "");
    if (spec.kind == ProviderKind::mock) spec.endpoint = resolve(base, spec.endpoint);
    if (spec.max_output_tokens == 0 || spec.context_window < spec.max_output_tokens) {
        throw ConfigError("model " + spec.model_id +
                          ": context_window must be >= max_output_tokens > 0");
    }
    return spec;
}

} // namespace

GatewayConfig RunManifest::gateway_config() const {
    GatewayConfig config;
    config.transport_retries = transport_retries;
    config.backoff_initial_ms = backoff_initial_ms;
    config.reprompt_limit = reprompt_limit;
    config.concurrency = concurrency;
    return config;
}

std::size_t stage_output_tokens(const RunManifest& manifest, const std::string& stage) {
    if (auto it = manifest.stage_max_tokens.find(stage); it != manifest.stage_max_tokens.end()) {
        return it->second;
    }
    static const std::map<std::string, std::size_t> defaults = {
        {"trees", 4096},    {"validate", 4096}, {"queries", 512},
        {"summarize", 2048}, {"evaluate", 4096}, {"audit", 512},
    };
    auto it = defaults.find(stage);
    return it != defaults.end() ? it->second : 2048;
}

RunManifest manifest_from_json(const ordered_json& j, const std::filesystem::path& base_dir) {
    RunManifest m;
    if (j.contains("documents")) {
        for (const auto& d : j["documents"]) {
            if (!d.contains("id") || !d.contains("path")) {
                throw ConfigError("document entries need \"id\" and \"path\"");
            }
            m.documents.push_back(
                {d["id"].get<std::string>(), resolve(base_dir, d["path"].get<std::string>())});
        }
    }
    if (j.contains("perspectives")) {
        m.perspectives.clear();
        for (const auto& p : j["perspectives"]) {
            m.perspectives.push_back(perspective_from_string(p.get<std::string>()));
        }
    }
    if (j.contains("models")) {
        for (const auto& entry : j["models"]) m.models.push_back(model_from_json(entry, base_dir));
    }
    if (j.contains("judge")) m.judge = model_from_json(j["judge"], base_dir);
    m.chunk_max_tokens = j.value("chunk_max_tokens", std::size_t{4000});
    m.bins = j.value("bins", 5);
    m.reprompt_limit = j.value("reprompt_limit", 3);
    m.transport_retries = j.value("transport_retries", 5);
    m.backoff_initial_ms = j.value("backoff_initial_ms", 1000);
    m.concurrency = j.value("concurrency", 4);
    m.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("query_subset")) {
        for (const auto& [model, size] : j["query_subset"].items()) {
            m.query_subset[model] = size.get<std::size_t>();
        }
    }
    if (j.contains("tokenizer")) {
        const auto& t = j["tokenizer"];
        std::string kind = t.value("kind", "whitespace-fallback");
        if (kind == "whitespace-fallback") {
            m.tokenizer.kind = TokenizerSpec::Kind::whitespace_fallback;
        } else if (kind == "bpe-vocabulary") {
            m.tokenizer.kind = TokenizerSpec::Kind::bpe_vocabulary;
            m.tokenizer.vocabulary_source = resolve(base_dir, t.value("vocabulary", ""));
            if (m.tokenizer.vocabulary_source.empty()) {
                throw ConfigError("bpe-vocabulary tokenizer needs a \"vocabulary\" path");
            }
        } else {
            throw ConfigError("unknown tokenizer kind: " + kind);
        }
    }
    if (j.contains("prices")) {
        for (const auto& [model, entry] : j["prices"].items()) {
            m.prices[model] = {entry.value("prompt_per_1k", 0.0),
                               entry.value("completion_per_1k", 0.0)};
        }
    }
    if (j.contains("stage_max_tokens")) {
        for (const auto& [stage, tokens] : j["stage_max_tokens"].items()) {
            m.stage_max_tokens[stage] = tokens.get<std::size_t>();
        }
    }
    m.gold_labels = resolve(base_dir, j.value("gold_labels", ""));
    m.output_dir = resolve(base_dir, j.value("output_dir", "out"));
    return m;
}

RunManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read manifest: " + path.string());
    ordered_json j = ordered_json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("manifest is not valid JSON: " + path.string());
    return manifest_from_json(j, path.parent_path());
}

void validate_manifest(const RunManifest& manifest) {
    if (manifest.documents.empty()) throw ConfigError("manifest declares no documents");
    if (manifest.models.empty()) throw ConfigError("manifest declares no models");
    if (manifest.perspectives.empty()) throw ConfigError("manifest declares no perspectives");
    if (manifest.judge.model_id.empty()) throw ConfigError("manifest declares no judge model");
    if (manifest.bins < 1) throw ConfigError("bins must be >= 1");
    if (manifest.chunk_max_tokens == 0) throw ConfigError("chunk_max_tokens must be >= 1");

    std::set<std::string> ids;
    for (const auto& doc : manifest.documents) {
        if (!ids.insert("doc:" + doc.id).second) {
            throw ConfigError("duplicate document id: " + doc.id);
        }
    }
    for (const auto& model : manifest.models) {
        if (!ids.insert("model:" + model.model_id).second) {
            throw ConfigError("duplicate model id: " + model.model_id);
        }
    }
    std::set<Perspective> perspectives(manifest.perspectives.begin(),
                                       manifest.perspectives.end());
    if (perspectives.size() != manifest.perspectives.size()) {
        throw ConfigError("duplicate perspectives in manifest");
    }
}

} // namespace qfs
