#include "qfs/gateway.hpp"

#include "qfs/hash.hpp"
#include "qfs/providers.hpp"

#include <semaphore>
#include <thread>

namespace qfs {

std::string_view to_string(ProviderKind kind) {
    switch (kind) {
    case ProviderKind::openai_compatible: return "openai-compatible";
    case ProviderKind::anthropic_compatible: return "anthropic-compatible";
    case ProviderKind::mock: return "mock";
    }
    return "mock";
}

ProviderKind provider_kind_from_string(std::string_view s) {
    if (s == "openai-compatible") return ProviderKind::openai_compatible;
    if (s == "anthropic-compatible") return ProviderKind::anthropic_compatible;
    if (s == "mock") return ProviderKind::mock;
    throw ConfigError("unknown provider kind: " + std::string(s));
}

std::string request_digest(std::string_view template_id, const Bindings& bindings,
                           std::string_view model_id) {
    std::string canonical;
    canonical.append(template_id);
    canonical.push_back('\x1f');
    canonical.append(model_id);
    for (const auto& [key, value] : bindings) { // std::map: already sorted
        canonical.push_back('\x1e');
        canonical.append(key);
        canonical.push_back('\x1f');
        canonical.append(value);
    }
    return sha256_hex(canonical);
}

void CostLedger::record(const std::string& model, const std::string& stage,
                        std::size_t prompt_tokens, std::size_t completion_tokens) {
    std::lock_guard lock(mutex_);
    LedgerEntry& entry = entries_[{model, stage}];
    entry.model = model;
    entry.stage = stage;
    entry.prompt_tokens += prompt_tokens;
    entry.completion_tokens += completion_tokens;
    entry.requests += 1;
    if (auto it = prices_.find(model); it != prices_.end()) {
        entry.est_cost += static_cast<double>(prompt_tokens) / 1000.0 * it->second.prompt_per_1k +
                          static_cast<double>(completion_tokens) / 1000.0 *
                              it->second.completion_per_1k;
    }
}

void CostLedger::merge(const LedgerEntry& entry) {
    std::lock_guard lock(mutex_);
    LedgerEntry& slot = entries_[{entry.model, entry.stage}];
    slot.model = entry.model;
    slot.stage = entry.stage;
    slot.prompt_tokens += entry.prompt_tokens;
    slot.completion_tokens += entry.completion_tokens;
    slot.requests += entry.requests;
    slot.est_cost += entry.est_cost;
}

std::vector<LedgerEntry> CostLedger::entries() const {
    std::lock_guard lock(mutex_);
    std::vector<LedgerEntry> out;
    out.reserve(entries_.size());
    for (const auto& [_, entry] : entries_) out.push_back(entry);
    return out;
}

LedgerEntry CostLedger::totals() const {
    LedgerEntry total;
    total.model = "*";
    total.stage = "*";
    for (const auto& entry : entries()) {
        total.prompt_tokens += entry.prompt_tokens;
        total.completion_tokens += entry.completion_tokens;
        total.requests += entry.requests;
        total.est_cost += entry.est_cost;
    }
    return total;
}

nlohmann::ordered_json CostLedger::to_json() const {
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (const auto& entry : this->entries()) {
        entries.push_back({{"model", entry.model},
                           {"stage", entry.stage},
                           {"prompt_tokens", entry.prompt_tokens},
                           {"completion_tokens", entry.completion_tokens},
                           {"requests", entry.requests},
                           {"est_cost", entry.est_cost}});
    }
    LedgerEntry total = totals();
    return {{"entries", std::move(entries)},
            {"totals",
             {{"prompt_tokens", total.prompt_tokens},
              {"completion_tokens", total.completion_tokens},
              {"requests", total.requests},
              {"est_cost", total.est_cost}}}};
}

struct Gateway::ProviderSlot {
    ProviderSlot(std::unique_ptr<Provider> p, int limit)
        : provider(std::move(p)), semaphore(limit) {}

    std::unique_ptr<Provider> provider;
    std::counting_semaphore<> semaphore;
    std::atomic<int> inflight{0};
};

Gateway::~Gateway() = default;

Gateway::Gateway(const Tokenizer& tokenizer, GatewayConfig config, PriceTable prices)
    : tokenizer_(tokenizer), config_(config), ledger_(std::move(prices)) {
    if (config_.transport_retries < 1) throw ConfigError("transport_retries must be >= 1");
    if (config_.concurrency < 1) throw ConfigError("concurrency must be >= 1");
    if (config_.reprompt_limit < 0) throw ConfigError("reprompt_limit must be >= 0");
}

void Gateway::register_provider(const std::string& model_id, std::unique_ptr<Provider> provider) {
    std::lock_guard lock(slots_mutex_);
    slots_[model_id] =
        std::make_unique<ProviderSlot>(std::move(provider), config_.concurrency);
}

std::unique_ptr<Provider> Gateway::make_default_provider(const ModelSpec& model,
                                                         const Tokenizer& tokenizer) {
    switch (model.kind) {
    case ProviderKind::mock:
        return std::make_unique<MockProvider>(model.endpoint, tokenizer,
                                              /*allow_synthetic=*/model.endpoint.empty());
    case ProviderKind::openai_compatible:
        return std::make_unique<OpenAiProvider>(model.endpoint);
    case ProviderKind::anthropic_compatible:
        return std::make_unique<AnthropicProvider>(model.endpoint);
    }
    throw ConfigError("unknown provider kind");
}

Gateway::ProviderSlot& Gateway::slot_for(const ModelSpec& model) {
    std::lock_guard lock(slots_mutex_);
    auto it = slots_.find(model.model_id);
    if (it == slots_.end()) {
        it = slots_
                 .emplace(model.model_id,
                          std::make_unique<ProviderSlot>(make_default_provider(model, tokenizer_),
                                                         config_.concurrency))
                 .first;
    }
    return *it->second;
}

std::size_t Gateway::estimate_tokens(const ChatRequest& request) const {
    std::size_t total = 0;
    for (const auto& message : request.messages) total += tokenizer_.count(message.content);
    return total + request.max_tokens;
}

ChatResponse Gateway::complete(const ChatRequest& request) {
    if (estimate_tokens(request) > request.model.context_window) {
        throw OverflowError("request estimate of " + std::to_string(estimate_tokens(request)) +
                            " tokens exceeds the " +
                            std::to_string(request.model.context_window) +
                            "-token context window of " + request.model.model_id);
    }

    ProviderSlot& slot = slot_for(request.model);
    slot.semaphore.acquire();
    int now_inflight = slot.inflight.fetch_add(1) + 1;
    int observed = max_inflight_.load();
    while (now_inflight > observed &&
           !max_inflight_.compare_exchange_weak(observed, now_inflight)) {
    }
    struct Release {
        ProviderSlot& slot;
        ~Release() {
            slot.inflight.fetch_sub(1);
            slot.semaphore.release();
        }
    } release{slot};

    std::string digest =
        request_digest(request.template_id, request.bindings, request.model.model_id);
    SplitMix64 jitter(fnv1a64(digest));

    for (int attempt = 1;; ++attempt) {
        auto started = std::chrono::steady_clock::now();
        try {
            ChatResponse response = slot.provider->send(request);
            response.attempt = attempt;
            response.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                std::chrono::steady_clock::now() - started);
            if (response.prompt_tokens == 0) {
                response.prompt_tokens = estimate_tokens(request) - request.max_tokens;
            }
            if (response.completion_tokens == 0) {
                response.completion_tokens = tokenizer_.count(response.text);
            }
            ledger_.record(request.model.model_id, request.stage, response.prompt_tokens,
                           response.completion_tokens);
            return response;
        } catch (const TransientError& err) {
            if (attempt >= config_.transport_retries) {
                throw TransportError("retries exhausted for " + request.model.model_id + ": " +
                                     err.what());
            }
            auto base = static_cast<std::uint64_t>(config_.backoff_initial_ms) << (attempt - 1);
            auto sleep_ms = base + (base > 0 ? jitter.below(base / 2 + 1) : 0);
            std::this_thread::sleep_for(std::chrono::milliseconds(sleep_ms));
        }
    }
}

} // namespace qfs
