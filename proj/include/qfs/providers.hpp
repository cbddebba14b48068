#pragma once

#include "qfs/gateway.hpp"

#include <chrono>
#include <string>
#include <tuple>

namespace qfs {

// Offline deterministic provider. Responses come from a fixture directory of
// digest-named text files ("<digest>.txt", with optional per-re-prompt
// variants "<digest>.attempt<k>.txt"). With no fixture directory configured,
// responses are synthesized deterministically from the request digest, so
// full pipeline runs work offline and rerun byte-identically.
class MockProvider final : public Provider {
public:
    MockProvider(std::string fixture_dir, const Tokenizer& tokenizer,
                 bool allow_synthetic = true);

    ChatResponse send(const ChatRequest& request) override;

    // Test hook: artificial latency, for observing concurrency bounds.
    void set_delay(std::chrono::milliseconds delay) { delay_ = delay; }

private:
    std::string fixture_dir_;
    const Tokenizer& tokenizer_;
    bool allow_synthetic_;
    std::chrono::milliseconds delay_{0};
};

// Deterministic schema-valid response for a template id, keyed by digest.
// Exposed for tests that need to predict the mock's output.
std::string synthesize_mock_response(const ChatRequest& request, const std::string& digest);

// POST {endpoint}/chat/completions with the familiar JSON body. Credentials
// come from the OPENAI_API_KEY environment variable.
class OpenAiProvider final : public Provider {
public:
    explicit OpenAiProvider(std::string endpoint, std::string api_key_env = "OPENAI_API_KEY");

    ChatResponse send(const ChatRequest& request) override;

    static nlohmann::ordered_json build_body(const ChatRequest& request);
    // Returns (text, prompt_tokens, completion_tokens); throws ParseError.
    static std::tuple<std::string, std::size_t, std::size_t>
    parse_body(const nlohmann::ordered_json& body);

private:
    std::string endpoint_;
    std::string api_key_env_;
};

// POST {endpoint}/messages with x-api-key auth. Credentials come from the
// ANTHROPIC_API_KEY environment variable.
class AnthropicProvider final : public Provider {
public:
    explicit AnthropicProvider(std::string endpoint,
                               std::string api_key_env = "ANTHROPIC_API_KEY");

    ChatResponse send(const ChatRequest& request) override;

    static nlohmann::ordered_json build_body(const ChatRequest& request);
    static std::tuple<std::string, std::size_t, std::size_t>
    parse_body(const nlohmann::ordered_json& body);

private:
    std::string endpoint_;
    std::string api_key_env_;
};

} // namespace qfs
