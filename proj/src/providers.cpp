#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "qfs/providers.hpp"

#include "qfs/hash.hpp"

#include <cstdlib>
#include <optional>
#include <tuple>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace qfs {

using nlohmann::ordered_json;

namespace {

std::optional<std::string> read_file_if_exists(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::size_t binding_count(const ChatRequest& request, const char* key) {
    auto it = request.bindings.find(key);
    if (it == request.bindings.end()) {
        throw PermanentError(std::string("mock synthesis needs the {") + key + "} binding");
    }
    try {
        return static_cast<std::size_t>(std::stoull(it->second));
    } catch (const std::exception&) {
        throw PermanentError(std::string("mock synthesis: {") + key + "} is not a number");
    }
}

std::size_t count_lines(const std::string& text) {
    std::size_t lines = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) ++lines;
    }
    return lines;
}

std::string synthesize_tree(SplitMix64& rng, const std::string& tag) {
    ordered_json roots = ordered_json::array();
    std::size_t n_roots = 1 + rng.below(2);
    for (std::size_t r = 0; r < n_roots; ++r) {
        ordered_json branches = ordered_json::array();
        std::size_t n_branches = 2 + rng.below(2);
        for (std::size_t b = 0; b < n_branches; ++b) {
            ordered_json leaves = ordered_json::array();
            std::size_t n_leaves = 1 + rng.below(3);
            for (std::size_t l = 0; l < n_leaves; ++l) {
                leaves.push_back("Fact " + tag + "-r" + std::to_string(r) + "b" +
                                 std::to_string(b) + "l" + std::to_string(l) + ".");
            }
            branches.push_back({{"text", "Fact " + tag + "-r" + std::to_string(r) + "b" +
                                             std::to_string(b) + "."},
                                {"leaves", std::move(leaves)}});
        }
        roots.push_back(
            {{"text", "Fact " + tag + "-r" + std::to_string(r) + "."},
             {"branches", std::move(branches)}});
    }
    return ordered_json{{"roots", std::move(roots)}}.dump();
}

// Mirrors the tree from the {key-fact tree} binding with per-node labels.
// Roots and branches always pass; leaves fail occasionally so pruning has
// something to do. Deterministic in the request digest.
std::string synthesize_verdicts(SplitMix64& rng, const ChatRequest& request) {
    auto it = request.bindings.find("key-fact tree");
    if (it == request.bindings.end()) {
        throw PermanentError("mock synthesis needs the {key-fact tree} binding");
    }
    ordered_json tree = ordered_json::parse(it->second, nullptr, false);
    if (tree.is_discarded() || !tree.contains("roots")) {
        throw PermanentError("mock synthesis: {key-fact tree} binding is not a tree");
    }
    ordered_json roots = ordered_json::array();
    for (const auto& root : tree["roots"]) {
        ordered_json branches = ordered_json::array();
        for (const auto& branch : root["branches"]) {
            ordered_json leaves = ordered_json::array();
            for (std::size_t l = 0; l < branch["leaves"].size(); ++l) {
                bool pass = rng.below(6) != 0;
                leaves.push_back({{"label", pass ? 1 : 0},
                                  {"justification", pass ? "Supported by the excerpt."
                                                         : "Too minor to keep."}});
            }
            branches.push_back({{"label", 1},
                                {"justification", "Supported by the excerpt."},
                                {"leaves", std::move(leaves)}});
        }
        roots.push_back({{"label", 1},
                         {"justification", "Supported by the excerpt."},
                         {"branches", std::move(branches)}});
    }
    return ordered_json{{"roots", std::move(roots)}}.dump();
}

std::string synthesize_summary(SplitMix64& rng, const std::string& tag) {
    std::size_t n = 4 + rng.below(4);
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0) out += " ";
        out += "Point " + std::to_string(i + 1) + " of answer " + tag + " covers item " +
               std::to_string(rng.below(100)) + ".";
    }
    return out;
}

std::string synthesize_fact_verdicts(SplitMix64& rng, const ChatRequest& request) {
    std::size_t n = binding_count(request, "# sentences");
    ordered_json out = ordered_json::array();
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t roll = rng.below(10);
        const char* category = roll == 0   ? "Out-of-article error"
                               : roll == 1 ? "Relation error"
                                           : "No error";
        out.push_back({{"sentence", "sentence " + std::to_string(i + 1)},
                       {"reason", roll <= 1 ? "Not grounded in the excerpt."
                                            : "Consistent with the excerpt."},
                       {"category", category}});
    }
    return out.dump();
}

std::string synthesize_alignment(SplitMix64& rng, const ChatRequest& request) {
    std::size_t n_facts = binding_count(request, "# key-facts");
    auto summary_it = request.bindings.find("summary");
    if (summary_it == request.bindings.end()) {
        throw PermanentError("mock synthesis needs the {summary} binding");
    }
    std::size_t n_lines = count_lines(summary_it->second);
    if (n_lines == 0) n_lines = 1;
    ordered_json out = ordered_json::array();
    for (std::size_t i = 0; i < n_facts; ++i) {
        bool matched = rng.below(3) != 0;
        ordered_json lines = ordered_json::array();
        if (matched) {
            std::size_t first = 1 + rng.below(n_lines);
            lines.push_back(first);
            if (n_lines > 1 && rng.below(4) == 0) {
                std::size_t second = 1 + rng.below(n_lines);
                if (second != first) lines.push_back(second);
            }
        }
        out.push_back({{"key-fact", "fact " + std::to_string(i + 1)},
                       {"response", matched ? "Yes" : "No"},
                       {"line number", std::move(lines)}});
    }
    return out.dump();
}

std::string synthesize_audit(SplitMix64& rng) {
    return ordered_json{{"HKF_validity", 4 + rng.below(2)},
                        {"Content_coherence", 4 + rng.below(2)},
                        {"Cross_content_reasoning", 5},
                        {"explanation", "Deterministic audit response."}}
        .dump();
}

} // namespace

std::string synthesize_mock_response(const ChatRequest& request, const std::string& digest) {
    SplitMix64 rng(fnv1a64(digest));
    const std::string tag = digest.substr(0, 8);
    const std::string& id = request.template_id;

    if (id == templates::tree_analytical || id == templates::tree_narrative) {
        return synthesize_tree(rng, tag);
    }
    if (id == templates::validate_faithfulness || id == templates::validate_objectivity ||
        id == templates::validate_significance) {
        return synthesize_verdicts(rng, request);
    }
    if (id == templates::query_analytical || id == templates::query_narrative) {
        return "How do the described developments in passage " + tag +
               " fit together, from the overall arc down to the specific details?";
    }
    if (id == templates::summarize) {
        return synthesize_summary(rng, tag);
    }
    if (id == templates::fact_verify) {
        return synthesize_fact_verdicts(rng, request);
    }
    if (id == templates::keyfact_align) {
        return synthesize_alignment(rng, request);
    }
    if (id == templates::chunk_audit) {
        return synthesize_audit(rng);
    }
    // Unknown template: echo something deterministic.
    return "mock response " + tag;
}

MockProvider::MockProvider(std::string fixture_dir, const Tokenizer& tokenizer,
                           bool allow_synthetic)
    : fixture_dir_(std::move(fixture_dir)), tokenizer_(tokenizer),
      allow_synthetic_(allow_synthetic) {}

ChatResponse MockProvider::send(const ChatRequest& request) {
    if (delay_.count() > 0) std::this_thread::sleep_for(delay_);

    std::string digest =
        request_digest(request.template_id, request.bindings, request.model.model_id);

    std::optional<std::string> text;
    if (!fixture_dir_.empty()) {
        std::filesystem::path dir(fixture_dir_);
        if (request.structured_attempt > 1) {
            text = read_file_if_exists(
                dir / (digest + ".attempt" + std::to_string(request.structured_attempt) + ".txt"));
        }
        if (!text) text = read_file_if_exists(dir / (digest + ".txt"));
    }
    if (!text && allow_synthetic_) text = synthesize_mock_response(request, digest);
    if (!text) {
        throw PermanentError("no mock fixture for request digest " + digest + " under " +
                             fixture_dir_);
    }

    ChatResponse response;
    response.text = std::move(*text);
    std::size_t prompt_tokens = 0;
    for (const auto& message : request.messages) prompt_tokens += tokenizer_.count(message.content);
    response.prompt_tokens = prompt_tokens;
    response.completion_tokens = tokenizer_.count(response.text);
    return response;
}

namespace {

struct EndpointParts {
    std::string origin; // scheme://host[:port]
    std::string path;   // possibly empty prefix
};

EndpointParts split_endpoint(const std::string& endpoint) {
    auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("endpoint must include a scheme: " + endpoint);
    }
    auto path_start = endpoint.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {endpoint, ""};
    std::string path = endpoint.substr(path_start);
    while (!path.empty() && path.back() == '/') path.pop_back();
    return {endpoint.substr(0, path_start), path};
}

std::string env_or_empty(const std::string& name) {
    const char* value = std::getenv(name.c_str());
    return value ? value : "";
}

ChatResponse post_json(const std::string& endpoint, const std::string& path,
                       const httplib::Headers& headers, const ordered_json& body,
                       std::tuple<std::string, std::size_t, std::size_t> (*parse)(
                           const ordered_json&)) {
    EndpointParts parts = split_endpoint(endpoint);
    httplib::Client client(parts.origin);
    client.set_read_timeout(300, 0);
    client.set_write_timeout(300, 0);

    auto result = client.Post(parts.path + path, headers, body.dump(), "application/json");
    if (!result) {
        throw TransientError("transport failure talking to " + parts.origin + ": " +
                             httplib::to_string(result.error()));
    }
    if (result->status == 408 || result->status == 409 || result->status == 429 ||
        result->status >= 500) {
        throw TransientError("HTTP " + std::to_string(result->status) + " from " + parts.origin);
    }
    if (result->status != 200) {
        throw PermanentError("HTTP " + std::to_string(result->status) + " from " + parts.origin +
                             ": " + result->body);
    }
    ordered_json parsed = ordered_json::parse(result->body, nullptr, false);
    if (parsed.is_discarded()) {
        throw PermanentError("provider returned a non-JSON body from " + parts.origin);
    }
    auto [text, prompt_tokens, completion_tokens] = parse(parsed);
    ChatResponse response;
    response.text = std::move(text);
    response.prompt_tokens = prompt_tokens;
    response.completion_tokens = completion_tokens;
    return response;
}

} // namespace

OpenAiProvider::OpenAiProvider(std::string endpoint, std::string api_key_env)
    : endpoint_(std::move(endpoint)), api_key_env_(std::move(api_key_env)) {}

nlohmann::ordered_json OpenAiProvider::build_body(const ChatRequest& request) {
    ordered_json messages = ordered_json::array();
    for (const auto& message : request.messages) {
        messages.push_back({{"role", message.role}, {"content", message.content}});
    }
    return {{"model", request.model.model_id},
            {"messages", std::move(messages)},
            {"temperature", request.temperature},
            {"max_tokens", request.max_tokens}};
}

std::tuple<std::string, std::size_t, std::size_t>
OpenAiProvider::parse_body(const nlohmann::ordered_json& body) {
    try {
        std::string text = body.at("choices").at(0).at("message").at("content").get<std::string>();
        std::size_t prompt_tokens = 0;
        std::size_t completion_tokens = 0;
        if (body.contains("usage")) {
            prompt_tokens = body["usage"].value("prompt_tokens", 0u);
            completion_tokens = body["usage"].value("completion_tokens", 0u);
        }
        return {std::move(text), prompt_tokens, completion_tokens};
    } catch (const ordered_json::exception& err) {
        throw PermanentError(std::string("unexpected completion response shape: ") + err.what());
    }
}

ChatResponse OpenAiProvider::send(const ChatRequest& request) {
    httplib::Headers headers;
    std::string key = env_or_empty(api_key_env_);
    if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
    return post_json(endpoint_, "/chat/completions", headers, build_body(request), &parse_body);
}

AnthropicProvider::AnthropicProvider(std::string endpoint, std::string api_key_env)
    : endpoint_(std::move(endpoint)), api_key_env_(std::move(api_key_env)) {}

nlohmann::ordered_json AnthropicProvider::build_body(const ChatRequest& request) {
    std::string system;
    ordered_json messages = ordered_json::array();
    for (const auto& message : request.messages) {
        if (message.role == "system") {
            if (!system.empty()) system += "\n";
            system += message.content;
        } else {
            messages.push_back({{"role", message.role}, {"content", message.content}});
        }
    }
    ordered_json body = {{"model", request.model.model_id},
                         {"max_tokens", request.max_tokens},
                         {"temperature", request.temperature},
                         {"messages", std::move(messages)}};
    if (!system.empty()) body["system"] = system;
    return body;
}

std::tuple<std::string, std::size_t, std::size_t>
AnthropicProvider::parse_body(const nlohmann::ordered_json& body) {
    try {
        std::string text;
        for (const auto& block : body.at("content")) {
            if (block.value("type", "text") == "text") text += block.at("text").get<std::string>();
        }
        std::size_t prompt_tokens = 0;
        std::size_t completion_tokens = 0;
        if (body.contains("usage")) {
            prompt_tokens = body["usage"].value("input_tokens", 0u);
            completion_tokens = body["usage"].value("output_tokens", 0u);
        }
        return {std::move(text), prompt_tokens, completion_tokens};
    } catch (const ordered_json::exception& err) {
        throw PermanentError(std::string("unexpected message response shape: ") + err.what());
    }
}

ChatResponse AnthropicProvider::send(const ChatRequest& request) {
    httplib::Headers headers;
    std::string key = env_or_empty(api_key_env_);
    if (!key.empty()) headers.emplace("x-api-key", key);
    headers.emplace("anthropic-version", "2023-06-01");
    return post_json(endpoint_, "/messages", headers, build_body(request), &parse_body);
}

} // namespace qfs
