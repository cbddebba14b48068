#pragma once

#include "qfs/errors.hpp"
#include "qfs/prompts.hpp"
#include "qfs/tokenizer.hpp"

#include <atomic>
#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace qfs {

enum class ProviderKind { openai_compatible, anthropic_compatible, mock };

std::string_view to_string(ProviderKind kind);
ProviderKind provider_kind_from_string(std::string_view s);

struct ModelSpec {
    std::string model_id;
    ProviderKind kind = ProviderKind::mock;
    std::size_t context_window = 128000;
    std::size_t max_output_tokens = 4096;
    // URL base for HTTP providers; fixture directory (or empty) for mock.
    std::string endpoint;
};

struct ChatRequest {
    ModelSpec model;
    std::vector<ChatMessage> messages;
    double temperature = 0.0; // pipeline runs keep this at 0
    std::size_t max_tokens = 1024;
    std::string stage; // ledger label
    // Set when the request was rendered from a template; keys the mock cache.
    std::string template_id;
    Bindings bindings;
    int structured_attempt = 1;
};

struct ChatResponse {
    std::string text;
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
    std::chrono::milliseconds latency{0};
    int attempt = 1; // transport attempt that succeeded
};

class Provider {
public:
    virtual ~Provider() = default;
    // Throws TransientError for retryable failures, PermanentError otherwise.
    virtual ChatResponse send(const ChatRequest& request) = 0;
};

// Stable cache key for a rendered request: digest of the template id, the
// bindings and the model id, deliberately not the raw prompt bytes.
std::string request_digest(std::string_view template_id, const Bindings& bindings,
                           std::string_view model_id);

struct PriceEntry {
    double prompt_per_1k = 0.0;
    double completion_per_1k = 0.0;
};

using PriceTable = std::map<std::string, PriceEntry>;

struct LedgerEntry {
    std::string model;
    std::string stage;
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
    std::size_t requests = 0;
    double est_cost = 0.0;
};

// Per-(model, stage) accumulators of token usage and estimated spend.
// Internally synchronized; totals equal the sum of recorded responses.
class CostLedger {
public:
    explicit CostLedger(PriceTable prices = {}) : prices_(std::move(prices)) {}

    void record(const std::string& model, const std::string& stage, std::size_t prompt_tokens,
                std::size_t completion_tokens);

    // Folds an already-aggregated entry in; used to carry totals across
    // resumed runs.
    void merge(const LedgerEntry& entry);

    std::vector<LedgerEntry> entries() const; // sorted by (model, stage)
    LedgerEntry totals() const;
    nlohmann::ordered_json to_json() const;

private:
    mutable std::mutex mutex_;
    PriceTable prices_;
    std::map<std::pair<std::string, std::string>, LedgerEntry> entries_;
};

struct GatewayConfig {
    int transport_retries = 5;       // total attempts per request
    int backoff_initial_ms = 1000;   // doubled per attempt, with jitter
    int reprompt_limit = 3;          // schema re-prompts after the first ask
    int concurrency = 4;             // max in-flight requests per provider
};

// Provider-agnostic chat-completion access with deterministic settings,
// transport retries, bounded concurrency, overflow pre-checks and a cost
// ledger. Safe for concurrent use by many pipeline workers.
class Gateway {
public:
    Gateway(const Tokenizer& tokenizer, GatewayConfig config, PriceTable prices = {});
    ~Gateway();
    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    // Installs a provider for a model id, replacing any default.
    void register_provider(const std::string& model_id, std::unique_ptr<Provider> provider);

    ChatResponse complete(const ChatRequest& request);

    // Renders, asks, validates; on a ParseError from `parse`, appends the
    // model's reply plus a corrective user message quoting the failure reason
    // and re-asks, up to reprompt_limit times. Returns the parsed value and
    // the ask count. Throws StructuredOutputError when re-prompts run out.
    template <class Parse>
    auto complete_structured(ChatRequest request, Parse&& parse)
        -> std::pair<decltype(parse(std::string{})), int> {
        std::string last_reason;
        for (int ask = 1; ask <= config_.reprompt_limit + 1; ++ask) {
            request.structured_attempt = ask;
            ChatResponse response = complete(request);
            try {
                return {parse(response.text), ask};
            } catch (const ParseError& err) {
                last_reason = err.what();
                if (ask == config_.reprompt_limit + 1) {
                    throw StructuredOutputError("structured output still invalid after " +
                                                    std::to_string(config_.reprompt_limit) +
                                                    " re-prompts: " + last_reason,
                                                response.text);
                }
                request.messages.push_back({"assistant", response.text});
                request.messages.push_back(
                    {"user", "Your previous response could not be used: " + last_reason +
                                 ". Please answer again, following the required format exactly."});
            }
        }
        throw StructuredOutputError("unreachable", "");
    }

    CostLedger& ledger() { return ledger_; }
    const CostLedger& ledger() const { return ledger_; }
    const Tokenizer& tokenizer() const { return tokenizer_; }
    const GatewayConfig& config() const { return config_; }

    std::size_t estimate_tokens(const ChatRequest& request) const;

    // Test probe: the highest number of simultaneously in-flight provider
    // calls observed so far.
    int max_observed_inflight() const { return max_inflight_.load(); }

private:
    struct ProviderSlot;
    ProviderSlot& slot_for(const ModelSpec& model);
    static std::unique_ptr<Provider> make_default_provider(const ModelSpec& model,
                                                           const Tokenizer& tokenizer);

    const Tokenizer& tokenizer_;
    GatewayConfig config_;
    CostLedger ledger_;

    std::mutex slots_mutex_;
    std::map<std::string, std::unique_ptr<ProviderSlot>> slots_;

    std::atomic<int> max_inflight_{0};
};

} // namespace qfs
