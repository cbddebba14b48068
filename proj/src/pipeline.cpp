#include "qfs/pipeline.hpp"

#include "qfs/hash.hpp"
#include "qfs/report.hpp"
#include "qfs/sentences.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

namespace qfs {

using nlohmann::ordered_json;

namespace {

std::string item_key(const std::string& doc_id, std::size_t chunk_index,
                     Perspective perspective) {
    return doc_id + "/" + std::to_string(chunk_index) + "/" + std::string(to_string(perspective));
}

ordered_json chunk_to_json(const Chunk& chunk) {
    return {{"doc_id", chunk.doc_id},       {"index", chunk.index},
            {"token_count", chunk.token_count}, {"sentence_count", chunk.sentence_count},
            {"text", chunk.text},           {"oversized", chunk.oversized}};
}

Chunk chunk_from_json(const ordered_json& j) {
    Chunk chunk;
    chunk.doc_id = j.at("doc_id").get<std::string>();
    chunk.index = j.at("index").get<std::size_t>();
    chunk.token_count = j.at("token_count").get<std::size_t>();
    chunk.sentence_count = j.at("sentence_count").get<std::size_t>();
    chunk.text = j.at("text").get<std::string>();
    chunk.oversized = j.value("oversized", false);
    return chunk;
}

ordered_json query_to_json(const Query& query) {
    return {{"id", query.id},
            {"doc_id", query.chunk_ref.doc_id},
            {"chunk_index", query.chunk_ref.chunk_index},
            {"perspective", std::string(to_string(query.perspective))},
            {"text", query.text}};
}

Query query_from_json(const ordered_json& j) {
    Query query;
    query.id = j.at("id").get<std::string>();
    query.chunk_ref.doc_id = j.at("doc_id").get<std::string>();
    query.chunk_ref.chunk_index = j.at("chunk_index").get<std::size_t>();
    query.perspective = perspective_from_string(j.at("perspective").get<std::string>());
    query.text = j.at("text").get<std::string>();
    return query;
}

} // namespace

KeyFactTree generate_tree(const Chunk& chunk, Perspective perspective, const ModelSpec& judge,
                          Gateway& gateway, const PromptLibrary& prompts, std::size_t max_tokens) {
    if (chunk.text.empty()) throw StageError("cannot generate a tree for an empty chunk");
    std::string_view template_id = perspective == Perspective::analytical
                                       ? templates::tree_analytical
                                       : templates::tree_narrative;
    Bindings bindings = {{"excerpt", chunk.text}};
    ChatRequest request;
    request.model = judge;
    request.messages = prompts.render(template_id, bindings);
    request.max_tokens = max_tokens;
    request.stage = "trees";
    request.template_id = std::string(template_id);
    request.bindings = std::move(bindings);

    ChunkRef ref{chunk.doc_id, chunk.index};
    auto [tree, _] = gateway.complete_structured(std::move(request), [&](const std::string& raw) {
        return parse_tree(raw, ref, perspective);
    });
    return tree;
}

std::vector<ValidationVerdict> validate_tree(const Chunk& chunk, const KeyFactTree& tree,
                                             Dimension dimension, const ModelSpec& judge,
                                             Gateway& gateway, const PromptLibrary& prompts,
                                             std::size_t max_tokens) {
    if (tree.empty()) throw StageError("cannot validate an empty tree");
    std::string_view template_id = dimension == Dimension::faithfulness
                                       ? templates::validate_faithfulness
                                   : dimension == Dimension::objectivity
                                       ? templates::validate_objectivity
                                       : templates::validate_significance;
    Bindings bindings = {{"excerpt", chunk.text},
                         {"key-fact tree", tree_to_prompt_json(tree).dump()}};
    ChatRequest request;
    request.model = judge;
    request.messages = prompts.render(template_id, bindings);
    request.max_tokens = max_tokens;
    request.stage = "validate";
    request.template_id = std::string(template_id);
    request.bindings = std::move(bindings);

    auto [verdicts, _] = gateway.complete_structured(std::move(request), [&](const std::string& raw) {
        return parse_verdict_tree(raw, tree, dimension);
    });
    return verdicts;
}

ValidatedTree build_validated_tree(const Chunk& chunk, Perspective perspective,
                                   const ModelSpec& judge, Gateway& gateway,
                                   const PromptLibrary& prompts, std::size_t max_tokens) {
    ValidatedTree out;
    out.raw = generate_tree(chunk, perspective, judge, gateway, prompts, max_tokens);
    auto faithfulness = validate_tree(chunk, out.raw, Dimension::faithfulness, judge, gateway,
                                      prompts, max_tokens);
    auto objectivity = validate_tree(chunk, out.raw, Dimension::objectivity, judge, gateway,
                                     prompts, max_tokens);
    auto significance = validate_tree(chunk, out.raw, Dimension::significance, judge, gateway,
                                      prompts, max_tokens);
    auto merged = merge_verdicts(out.raw, faithfulness, objectivity, significance);
    out.pruned = prune(out.raw, merged);
    out.empty_after_prune = out.pruned.empty();
    out.verdicts.reserve(faithfulness.size() * 3);
    for (auto* pass : {&faithfulness, &objectivity, &significance}) {
        out.verdicts.insert(out.verdicts.end(), pass->begin(), pass->end());
    }
    return out;
}

Query generate_query(const Chunk& chunk, const KeyFactTree& validated_tree,
                     Perspective perspective, const ModelSpec& judge, Gateway& gateway,
                     const PromptLibrary& prompts, std::size_t max_tokens) {
    if (validated_tree.empty()) {
        throw StageError("cannot generate a query from an empty validated tree");
    }
    std::string_view template_id = perspective == Perspective::analytical
                                       ? templates::query_analytical
                                       : templates::query_narrative;
    Bindings bindings = {{"excerpt", chunk.text},
                         {"key-fact tree", tree_to_prompt_json(validated_tree).dump()}};
    ChatRequest request;
    request.model = judge;
    request.messages = prompts.render(template_id, bindings);
    request.max_tokens = max_tokens;
    request.stage = "queries";
    request.template_id = std::string(template_id);
    request.bindings = std::move(bindings);

    auto [text, _] = gateway.complete_structured(std::move(request), [](const std::string& raw) {
        std::string trimmed(trim_view(raw));
        if (trimmed.empty()) throw ParseError("query text is empty");
        return trimmed;
    });

    Query query;
    query.chunk_ref = ChunkRef{chunk.doc_id, chunk.index};
    query.perspective = perspective;
    query.id = item_key(chunk.doc_id, chunk.index, perspective);
    query.text = std::move(text);
    return query;
}

Summary generate_summary(const Document& doc, const Query& query, const ModelSpec& model,
                         Gateway& gateway, const PromptLibrary& prompts, std::size_t max_tokens) {
    Bindings bindings = {{"query", query.text}, {"book", doc.text}};
    ChatRequest request;
    request.model = model;
    request.messages = prompts.render(templates::summarize, bindings);
    request.max_tokens = std::min(max_tokens, model.max_output_tokens);
    request.stage = "summarize";
    request.template_id = std::string(templates::summarize);
    request.bindings = std::move(bindings);

    const Tokenizer& tokenizer = gateway.tokenizer();
    auto [summary, _] = gateway.complete_structured(std::move(request), [&](const std::string& raw) {
        Summary s = make_summary(query.id, model.model_id, raw, tokenizer);
        if (s.sentences.empty() || trim_view(s.text).empty()) {
            throw ParseError("summary is empty");
        }
        return s;
    });
    return summary;
}

ChunkAudit parse_chunk_audit(const std::string& raw, const ChunkRef& chunk_ref) {
    ordered_json j = ordered_json::parse(extract_json_payload(raw), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ParseError("audit output must be a JSON object");
    ChunkAudit audit;
    audit.chunk_ref = chunk_ref;
    auto score = [&](const char* key) {
        if (!j.contains(key) || !j[key].is_number_integer()) {
            throw ParseError(std::string("audit output is missing an integer \"") + key + "\"");
        }
        auto value = j[key].get<long long>();
        if (value < 1 || value > 5) {
            throw ParseError(std::string("audit score \"") + key + "\" must be within 1..5, got " +
                             std::to_string(value));
        }
        return static_cast<int>(value);
    };
    audit.hkf_validity = score("HKF_validity");
    audit.content_coherence = score("Content_coherence");
    audit.cross_content_reasoning = score("Cross_content_reasoning");
    if (j.contains("explanation") && j["explanation"].is_string()) {
        audit.explanation = j["explanation"].get<std::string>();
    }
    return audit;
}

ChunkAudit audit_chunk(const Chunk& chunk, const ModelSpec& judge, Gateway& gateway,
                       const PromptLibrary& prompts, std::size_t max_tokens) {
    Bindings bindings = {{"chunk", chunk.text}};
    ChatRequest request;
    request.model = judge;
    request.messages = prompts.render(templates::chunk_audit, bindings);
    request.max_tokens = max_tokens;
    request.stage = "audit";
    request.template_id = std::string(templates::chunk_audit);
    request.bindings = std::move(bindings);

    ChunkRef ref{chunk.doc_id, chunk.index};
    auto [audit, _] = gateway.complete_structured(std::move(request), [&](const std::string& raw) {
        return parse_chunk_audit(raw, ref);
    });
    return audit;
}

std::vector<std::size_t> seeded_sample(std::size_t total, std::size_t size, std::uint64_t seed) {
    std::vector<std::size_t> indices(total);
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (size >= total) return indices;
    SplitMix64 rng(seed);
    for (std::size_t i = 0; i < size; ++i) {
        std::size_t j = i + rng.below(total - i);
        std::swap(indices[i], indices[j]);
    }
    indices.resize(size);
    std::sort(indices.begin(), indices.end());
    return indices;
}

Pipeline::Pipeline(RunManifest manifest, Gateway& gateway, const PromptLibrary& prompts,
                   const Tokenizer& tokenizer)
    : manifest_(std::move(manifest)), store_(manifest_.output_dir), lock_(store_.root()),
      gateway_(gateway), prompts_(prompts), tokenizer_(tokenizer) {
    validate_manifest(manifest_);
    seed_ledger_from_store();
}

void Pipeline::require_artifact(const std::string& stage, const std::string& relative) const {
    if (!store_.exists(relative)) {
        throw StageError("stage " + stage + " is missing prerequisite artifact: " + relative);
    }
}

std::string Pipeline::raw_tree_file(Perspective p) const {
    return "trees/raw-" + std::string(to_string(p)) + ".jsonl";
}

std::string Pipeline::validated_tree_file(Perspective p) const {
    return "trees/validated-" + std::string(to_string(p)) + ".jsonl";
}

void Pipeline::ensure_file(const std::string& relative) {
    if (!store_.exists(relative)) store_.write_file(relative, "");
}

void Pipeline::note_issue(const std::string& stage, const std::string& item,
                          const std::string& detail) {
    std::lock_guard lock(issues_mutex_);
    issues_.push_back({stage, item, detail});
}

void Pipeline::write_ledger() {
    store_.write_file("ledger.json", gateway_.ledger().to_json().dump(2) + "\n");
}

void Pipeline::seed_ledger_from_store() {
    if (!store_.exists("ledger.json")) return;
    ordered_json j = ordered_json::parse(store_.read_file("ledger.json"), nullptr, false);
    if (j.is_discarded() || !j.contains("entries")) return;
    for (const auto& entry : j["entries"]) {
        LedgerEntry seed;
        seed.model = entry.value("model", "");
        seed.stage = entry.value("stage", "");
        seed.prompt_tokens = entry.value("prompt_tokens", std::size_t{0});
        seed.completion_tokens = entry.value("completion_tokens", std::size_t{0});
        seed.requests = entry.value("requests", std::size_t{0});
        seed.est_cost = entry.value("est_cost", 0.0);
        gateway_.ledger().merge(seed);
    }
}

void Pipeline::heal_orphans(const std::string& first_file, const std::string& last_file,
                            const std::function<std::string(const ordered_json&)>& key) {
    if (!store_.exists(first_file)) return;
    std::set<std::string> completed;
    for (const auto& record : store_.load(last_file)) completed.insert(key(record));
    auto records = store_.load(first_file);
    std::string healed;
    bool dropped = false;
    for (const auto& record : records) {
        if (completed.count(key(record)) > 0) {
            healed += record.dump();
            healed += '\n';
        } else {
            dropped = true;
        }
    }
    if (dropped) store_.write_file(first_file, healed);
}

const std::vector<Chunk>& Pipeline::chunks_for(const std::string& doc_id) {
    std::lock_guard lock(cache_mutex_);
    auto it = chunk_cache_.find(doc_id);
    if (it != chunk_cache_.end()) return it->second;
    if (chunk_cache_.empty()) {
        for (const auto& record : store_.load("chunks.jsonl")) {
            Chunk chunk = chunk_from_json(record);
            chunk_cache_[chunk.doc_id].push_back(std::move(chunk));
        }
    }
    it = chunk_cache_.find(doc_id);
    if (it == chunk_cache_.end()) {
        throw StageError("no chunks recorded for document " + doc_id);
    }
    return it->second;
}

std::map<std::string, std::vector<Chunk>> Pipeline::load_all_chunks() {
    std::map<std::string, std::vector<Chunk>> out;
    for (const auto& record : store_.load("chunks.jsonl")) {
        Chunk chunk = chunk_from_json(record);
        out[chunk.doc_id].push_back(std::move(chunk));
    }
    return out;
}

const Document& Pipeline::document_for(const std::string& doc_id) {
    {
        std::lock_guard lock(cache_mutex_);
        auto it = document_cache_.find(doc_id);
        if (it != document_cache_.end()) return *it->second;
    }
    for (const auto& ref : manifest_.documents) {
        if (ref.id == doc_id) {
            auto doc = std::make_shared<Document>(load_document(ref.path, ref.id, tokenizer_));
            std::lock_guard lock(cache_mutex_);
            auto [it, _] = document_cache_.emplace(doc_id, std::move(doc));
            return *it->second;
        }
    }
    throw StageError("document " + doc_id + " is not declared in the manifest");
}

std::vector<Query> Pipeline::load_queries() {
    std::vector<Query> out;
    for (const auto& record : store_.load("queries.jsonl")) {
        out.push_back(query_from_json(record));
    }
    return out;
}

std::optional<KeyFactTree> Pipeline::load_validated_tree(const ChunkRef& ref,
                                                         Perspective perspective) {
    std::lock_guard lock(cache_mutex_);
    if (validated_cache_loaded_.count(perspective) == 0) {
        for (const auto& record : store_.load(validated_tree_file(perspective))) {
            if (record.value("failed", false)) continue;
            ChunkRef record_ref{record.at("doc_id").get<std::string>(),
                                record.at("chunk_index").get<std::size_t>()};
            std::string key = item_key(record_ref.doc_id, record_ref.chunk_index, perspective);
            if (record.value("empty", false)) {
                validated_cache_[key] = nullptr;
            } else {
                validated_cache_[key] = std::make_shared<const KeyFactTree>(
                    tree_from_record_json(record.at("tree"), record_ref, perspective));
            }
        }
        validated_cache_loaded_.insert(perspective);
    }
    auto it = validated_cache_.find(item_key(ref.doc_id, ref.chunk_index, perspective));
    if (it == validated_cache_.end() || it->second == nullptr) return std::nullopt;
    return *it->second;
}

void Pipeline::run_ingest() {
    std::set<std::string> done;
    if (store_.exists("chunks.jsonl")) {
        for (const auto& record : store_.load("chunks.jsonl")) {
            done.insert(record.at("doc_id").get<std::string>());
        }
    }
    std::vector<DocumentRef> todo;
    for (const auto& ref : manifest_.documents) {
        if (done.count(ref.id) == 0) todo.push_back(ref);
    }
    std::vector<std::vector<ordered_json>> results(todo.size());
    run_ordered(
        todo.size(), static_cast<std::size_t>(manifest_.concurrency),
        [&](std::size_t i) {
            Document doc = load_document(todo[i].path, todo[i].id, tokenizer_);
            for (const auto& chunk : chunk_document(doc, manifest_.chunk_max_tokens, tokenizer_)) {
                results[i].push_back(chunk_to_json(chunk));
            }
            if (results[i].empty()) {
                throw StageError("document " + todo[i].id + " produced no chunks (empty text)");
            }
        },
        [&](std::size_t i) { store_.append("chunks.jsonl", results[i]); });
    {
        std::lock_guard lock(cache_mutex_);
        chunk_cache_.clear();
    }
}

void Pipeline::run_trees() {
    require_artifact("trees", "chunks.jsonl");

    std::set<std::string> done;
    for (Perspective p : manifest_.perspectives) {
        for (const auto& record : store_.load(raw_tree_file(p))) {
            std::string key = item_key(record.at("doc_id").get<std::string>(),
                                       record.at("chunk_index").get<std::size_t>(), p);
            done.insert(key);
            if (record.value("failed", false)) {
                note_issue("trees", key, record.value("error", "tree generation failed"));
            }
        }
    }

    struct Item {
        Chunk chunk;
        Perspective perspective;
    };
    std::vector<Item> items;
    for (const auto& doc : manifest_.documents) {
        for (const auto& chunk : chunks_for(doc.id)) {
            for (Perspective p : manifest_.perspectives) {
                if (done.count(item_key(chunk.doc_id, chunk.index, p)) == 0) {
                    items.push_back({chunk, p});
                }
            }
        }
    }

    std::size_t budget = stage_output_tokens(manifest_, "trees");
    std::vector<ordered_json> results(items.size());
    run_ordered(
        items.size(), static_cast<std::size_t>(manifest_.concurrency),
        [&](std::size_t i) {
            const Item& item = items[i];
            ordered_json record = {{"doc_id", item.chunk.doc_id},
                                   {"chunk_index", item.chunk.index},
                                   {"perspective", std::string(to_string(item.perspective))}};
            try {
                KeyFactTree tree = generate_tree(item.chunk, item.perspective, manifest_.judge,
                                                 gateway_, prompts_, budget);
                record["failed"] = false;
                record["tree"] = tree_to_record_json(tree);
            } catch (const Error& err) {
                record["failed"] = true;
                record["error"] = err.what();
                note_issue("trees", item_key(item.chunk.doc_id, item.chunk.index, item.perspective),
                           err.what());
            }
            results[i] = std::move(record);
        },
        [&](std::size_t i) { store_.append(raw_tree_file(items[i].perspective), results[i]); });
}

void Pipeline::run_validate() {
    for (Perspective p : manifest_.perspectives) require_artifact("validate", raw_tree_file(p));
    ensure_file("validations.jsonl");
    for (Perspective p : manifest_.perspectives) ensure_file(validated_tree_file(p));

    // Validations are appended before the validated-tree record; drop
    // validation records whose item has no validated-tree record yet.
    std::set<std::string> validated;
    std::set<std::string> done;
    for (Perspective p : manifest_.perspectives) {
        for (const auto& record : store_.load(validated_tree_file(p))) {
            std::string key = item_key(record.at("doc_id").get<std::string>(),
                                       record.at("chunk_index").get<std::size_t>(), p);
            validated.insert(key);
            done.insert(key);
            if (record.value("failed", false)) {
                note_issue("validate", key, record.value("error", "validation failed"));
            }
        }
    }
    if (store_.exists("validations.jsonl")) {
        std::string healed;
        bool dropped = false;
        for (const auto& record : store_.load("validations.jsonl")) {
            std::string key = item_key(
                record.at("doc_id").get<std::string>(),
                record.at("chunk_index").get<std::size_t>(),
                perspective_from_string(record.at("perspective").get<std::string>()));
            if (validated.count(key) > 0) {
                healed += record.dump();
                healed += '\n';
            } else {
                dropped = true;
            }
        }
        if (dropped) store_.write_file("validations.jsonl", healed);
    }

    struct Item {
        ChunkRef ref;
        Perspective perspective;
        KeyFactTree raw;
    };
    std::vector<Item> items;
    for (const auto& doc : manifest_.documents) {
        (void)chunks_for(doc.id);
    }
    // Canonical order: document, chunk, perspective as declared.
    std::map<std::string, std::size_t> doc_rank;
    for (const auto& doc : manifest_.documents) doc_rank[doc.id] = doc_rank.size();
    std::map<Perspective, std::size_t> perspective_rank;
    for (Perspective p : manifest_.perspectives) perspective_rank[p] = perspective_rank.size();

    for (Perspective p : manifest_.perspectives) {
        for (const auto& record : store_.load(raw_tree_file(p))) {
            if (record.value("failed", false)) continue;
            ChunkRef ref{record.at("doc_id").get<std::string>(),
                         record.at("chunk_index").get<std::size_t>()};
            if (done.count(item_key(ref.doc_id, ref.chunk_index, p)) > 0) continue;
            items.push_back({ref, p, tree_from_record_json(record.at("tree"), ref, p)});
        }
    }
    std::sort(items.begin(), items.end(), [&](const Item& a, const Item& b) {
        auto ka = std::tuple(doc_rank.at(a.ref.doc_id), a.ref.chunk_index,
                             perspective_rank.at(a.perspective));
        auto kb = std::tuple(doc_rank.at(b.ref.doc_id), b.ref.chunk_index,
                             perspective_rank.at(b.perspective));
        return ka < kb;
    });

    struct Result {
        std::vector<ordered_json> validations;
        ordered_json validated;
    };
    std::size_t budget = stage_output_tokens(manifest_, "validate");
    std::vector<Result> results(items.size());
    run_ordered(
        items.size(), static_cast<std::size_t>(manifest_.concurrency),
        [&](std::size_t i) {
            const Item& item = items[i];
            const Chunk& chunk = chunks_for(item.ref.doc_id).at(item.ref.chunk_index);
            ordered_json validated = {{"doc_id", item.ref.doc_id},
                                      {"chunk_index", item.ref.chunk_index},
                                      {"perspective", std::string(to_string(item.perspective))}};
            try {
                auto faithfulness = validate_tree(chunk, item.raw, Dimension::faithfulness,
                                                  manifest_.judge, gateway_, prompts_, budget);
                auto objectivity = validate_tree(chunk, item.raw, Dimension::objectivity,
                                                 manifest_.judge, gateway_, prompts_, budget);
                auto significance = validate_tree(chunk, item.raw, Dimension::significance,
                                                  manifest_.judge, gateway_, prompts_, budget);
                auto merged = merge_verdicts(item.raw, faithfulness, objectivity, significance);
                KeyFactTree pruned = prune(item.raw, merged);

                for (const auto* pass : {&faithfulness, &objectivity, &significance}) {
                    for (const auto& verdict : *pass) {
                        results[i].validations.push_back(
                            {{"doc_id", item.ref.doc_id},
                             {"chunk_index", item.ref.chunk_index},
                             {"perspective", std::string(to_string(item.perspective))},
                             {"key_fact_id", verdict.key_fact_id},
                             {"dimension", std::string(to_string(verdict.dimension))},
                             {"label", verdict.pass ? "pass" : "fail"},
                             {"justification", verdict.justification}});
                    }
                }
                validated["failed"] = false;
                validated["empty"] = pruned.empty();
                validated["tree"] = tree_to_record_json(pruned);
            } catch (const Error& err) {
                validated["failed"] = true;
                validated["error"] = err.what();
                note_issue("validate",
                           item_key(item.ref.doc_id, item.ref.chunk_index, item.perspective),
                           err.what());
            }
            results[i].validated = std::move(validated);
        },
        [&](std::size_t i) {
            if (!results[i].validations.empty()) {
                store_.append("validations.jsonl", results[i].validations);
            }
            store_.append(validated_tree_file(items[i].perspective), results[i].validated);
        });
    {
        std::lock_guard lock(cache_mutex_);
        validated_cache_.clear();
        validated_cache_loaded_.clear();
    }
}

void Pipeline::run_queries() {
    for (Perspective p : manifest_.perspectives) {
        require_artifact("queries", validated_tree_file(p));
    }
    ensure_file("queries.jsonl");

    std::set<std::string> done;
    if (store_.exists("queries.jsonl")) {
        for (const auto& record : store_.load("queries.jsonl")) {
            done.insert(record.at("id").get<std::string>());
        }
    }

    struct Item {
        ChunkRef ref;
        Perspective perspective;
        KeyFactTree tree;
    };
    std::map<std::string, std::size_t> doc_rank;
    for (const auto& doc : manifest_.documents) doc_rank[doc.id] = doc_rank.size();
    std::map<Perspective, std::size_t> perspective_rank;
    for (Perspective p : manifest_.perspectives) perspective_rank[p] = perspective_rank.size();

    std::vector<Item> items;
    for (Perspective p : manifest_.perspectives) {
        for (const auto& record : store_.load(validated_tree_file(p))) {
            if (record.value("failed", false)) continue;
            if (record.value("empty", false)) continue; // flagged: no query for this chunk
            ChunkRef ref{record.at("doc_id").get<std::string>(),
                         record.at("chunk_index").get<std::size_t>()};
            if (done.count(item_key(ref.doc_id, ref.chunk_index, p)) > 0) continue;
            items.push_back({ref, p, tree_from_record_json(record.at("tree"), ref, p)});
        }
    }
    std::sort(items.begin(), items.end(), [&](const Item& a, const Item& b) {
        auto ka = std::tuple(doc_rank.at(a.ref.doc_id), a.ref.chunk_index,
                             perspective_rank.at(a.perspective));
        auto kb = std::tuple(doc_rank.at(b.ref.doc_id), b.ref.chunk_index,
                             perspective_rank.at(b.perspective));
        return ka < kb;
    });

    std::size_t budget = stage_output_tokens(manifest_, "queries");
    std::vector<std::optional<ordered_json>> results(items.size());
    run_ordered(
        items.size(), static_cast<std::size_t>(manifest_.concurrency),
        [&](std::size_t i) {
            const Item& item = items[i];
            const Chunk& chunk = chunks_for(item.ref.doc_id).at(item.ref.chunk_index);
            try {
                Query query = generate_query(chunk, item.tree, item.perspective, manifest_.judge,
                                             gateway_, prompts_, budget);
                results[i] = query_to_json(query);
            } catch (const Error& err) {
                note_issue("queries",
                           item_key(item.ref.doc_id, item.ref.chunk_index, item.perspective),
                           err.what());
            }
        },
        [&](std::size_t i) {
            if (results[i]) store_.append("queries.jsonl", *results[i]);
        });
}

void Pipeline::run_summaries() {
    require_artifact("summarize", "queries.jsonl");
    for (const auto& model : manifest_.models) {
        ensure_file("summaries/" + model.model_id + ".jsonl");
    }
    std::vector<Query> queries = load_queries();

    struct Item {
        ModelSpec model;
        Query query;
    };
    std::vector<Item> items;
    for (const auto& model : manifest_.models) {
        std::vector<std::size_t> selected;
        if (auto it = manifest_.query_subset.find(model.model_id);
            it != manifest_.query_subset.end()) {
            selected = seeded_sample(queries.size(), it->second,
                                     manifest_.seed ^ fnv1a64(model.model_id));
        } else {
            selected.resize(queries.size());
            std::iota(selected.begin(), selected.end(), std::size_t{0});
        }

        std::set<std::string> done;
        std::string file = "summaries/" + model.model_id + ".jsonl";
        if (store_.exists(file)) {
            for (const auto& record : store_.load(file)) {
                std::string id = record.at("query_id").get<std::string>();
                done.insert(id);
                if (record.value("failed", false)) {
                    note_issue("summarize", model.model_id + ":" + id,
                               record.value("error", "summary generation failed"));
                }
            }
        }
        for (std::size_t index : selected) {
            if (done.count(queries[index].id) == 0) items.push_back({model, queries[index]});
        }
    }

    std::size_t budget = stage_output_tokens(manifest_, "summarize");
    std::vector<ordered_json> results(items.size());
    run_ordered(
        items.size(), static_cast<std::size_t>(manifest_.concurrency),
        [&](std::size_t i) {
            const Item& item = items[i];
            ordered_json record = {{"query_id", item.query.id},
                                   {"model_id", item.model.model_id}};
            try {
                const Document& doc = document_for(item.query.chunk_ref.doc_id);
                Summary summary =
                    generate_summary(doc, item.query, item.model, gateway_, prompts_, budget);
                record["failed"] = false;
                record["text"] = summary.text;
                record["token_count"] = summary.token_count;
                record["sentences"] = summary.sentences;
            } catch (const Error& err) {
                record["failed"] = true;
                record["error"] = err.what();
                note_issue("summarize", item.model.model_id + ":" + item.query.id, err.what());
            }
            results[i] = std::move(record);
        },
        [&](std::size_t i) {
            store_.append("summaries/" + items[i].model.model_id + ".jsonl", results[i]);
        });
}

void Pipeline::run_evaluate() {
    require_artifact("evaluate", "chunks.jsonl");
    require_artifact("evaluate", "queries.jsonl");
    for (const auto& model : manifest_.models) {
        require_artifact("evaluate", "summaries/" + model.model_id + ".jsonl");
    }

    for (const auto& model : manifest_.models) {
        ensure_file("verdicts/facts-" + model.model_id + ".jsonl");
        ensure_file("verdicts/align-" + model.model_id + ".jsonl");
    }
    std::map<std::string, Query> queries_by_id;
    for (const auto& query : load_queries()) queries_by_id[query.id] = query;

    struct Item {
        ModelSpec model;
        Summary summary;
    };
    std::vector<Item> items;
    for (const auto& model : manifest_.models) {
        std::string facts_file = "verdicts/facts-" + model.model_id + ".jsonl";
        std::string align_file = "verdicts/align-" + model.model_id + ".jsonl";

        // facts is written last, so it marks completion; orphaned align
        // records from an interrupted commit are dropped.
        heal_orphans(align_file, facts_file, [](const ordered_json& record) {
            return record.at("query_id").get<std::string>();
        });

        std::set<std::string> done;
        if (store_.exists(facts_file)) {
            for (const auto& record : store_.load(facts_file)) {
                std::string id = record.at("query_id").get<std::string>();
                done.insert(id);
                if (record.value("failed", false)) {
                    note_issue("evaluate", model.model_id + ":" + id,
                               record.value("error", "evaluation failed"));
                }
            }
        }
        for (const auto& record : store_.load("summaries/" + model.model_id + ".jsonl")) {
            if (record.value("failed", false)) continue;
            std::string id = record.at("query_id").get<std::string>();
            if (done.count(id) > 0) continue;
            Summary summary;
            summary.query_id = id;
            summary.model_id = model.model_id;
            summary.text = record.at("text").get<std::string>();
            summary.token_count = record.at("token_count").get<std::size_t>();
            for (const auto& sentence : record.at("sentences")) {
                summary.sentences.push_back(sentence.get<std::string>());
            }
            items.push_back({model, std::move(summary)});
        }
    }

    struct Result {
        std::vector<ordered_json> facts;
        std::vector<ordered_json> align;
    };
    std::size_t budget = stage_output_tokens(manifest_, "evaluate");
    std::vector<Result> results(items.size());
    run_ordered(
        items.size(), static_cast<std::size_t>(manifest_.concurrency),
        [&](std::size_t i) {
            const Item& item = items[i];
            const std::string& query_id = item.summary.query_id;
            try {
                auto query_it = queries_by_id.find(query_id);
                if (query_it == queries_by_id.end()) {
                    throw StageError("summary references unknown query " + query_id);
                }
                const Query& query = query_it->second;
                const Chunk& chunk =
                    chunks_for(query.chunk_ref.doc_id).at(query.chunk_ref.chunk_index);
                auto tree = load_validated_tree(query.chunk_ref, query.perspective);
                if (!tree) {
                    throw StageError("no validated tree behind query " + query_id);
                }
                std::vector<KeyFact> facts = linearize(*tree);

                auto fact_verdicts = verify_facts(chunk, item.summary, manifest_.judge, gateway_,
                                                  prompts_, budget);
                auto align_verdicts = align_keyfacts(item.summary, facts, manifest_.judge,
                                                     gateway_, prompts_, budget);

                for (const auto& verdict : fact_verdicts) {
                    results[i].facts.push_back({{"query_id", query_id},
                                                {"model_id", item.model.model_id},
                                                {"sentence_index", verdict.sentence_index},
                                                {"faithful", verdict.faithful},
                                                {"category", std::string(to_string(verdict.category))},
                                                {"reason", verdict.reason}});
                }
                for (const auto& verdict : align_verdicts) {
                    results[i].align.push_back({{"query_id", query_id},
                                                {"model_id", item.model.model_id},
                                                {"key_fact_id", verdict.key_fact_id},
                                                {"matched", verdict.matched},
                                                {"line_numbers", verdict.line_numbers}});
                }
            } catch (const Error& err) {
                ordered_json failed = {{"query_id", query_id},
                                       {"model_id", item.model.model_id},
                                       {"failed", true},
                                       {"error", err.what()}};
                results[i].facts = {failed};
                results[i].align = {failed};
                note_issue("evaluate", item.model.model_id + ":" + query_id, err.what());
            }
        },
        [&](std::size_t i) {
            const std::string& model_id = items[i].model.model_id;
            store_.append("verdicts/align-" + model_id + ".jsonl", results[i].align);
            store_.append("verdicts/facts-" + model_id + ".jsonl", results[i].facts);
        });
}

void Pipeline::run_metrics() {
    require_artifact("metrics", "chunks.jsonl");
    require_artifact("metrics", "queries.jsonl");
    for (const auto& model : manifest_.models) {
        require_artifact("metrics", "summaries/" + model.model_id + ".jsonl");
        require_artifact("metrics", "verdicts/facts-" + model.model_id + ".jsonl");
        require_artifact("metrics", "verdicts/align-" + model.model_id + ".jsonl");
    }

    auto chunks = load_all_chunks();
    std::map<std::string, Query> queries_by_id;
    for (const auto& query : load_queries()) queries_by_id[query.id] = query;

    std::vector<EvaluatedSummary> evaluated;
    for (const auto& model : manifest_.models) {
        std::map<std::string, std::vector<FactVerdict>> facts_by_query;
        std::set<std::string> failed;
        for (const auto& record : store_.load("verdicts/facts-" + model.model_id + ".jsonl")) {
            std::string id = record.at("query_id").get<std::string>();
            if (record.value("failed", false)) {
                failed.insert(id);
                continue;
            }
            FactVerdict verdict;
            verdict.summary_ref = {id, model.model_id};
            verdict.sentence_index = record.at("sentence_index").get<std::size_t>();
            verdict.faithful = record.at("faithful").get<bool>();
            verdict.category = error_category_from_label(record.at("category").get<std::string>());
            verdict.reason = record.value("reason", "");
            facts_by_query[id].push_back(std::move(verdict));
        }
        std::map<std::string, std::vector<AlignmentVerdict>> align_by_query;
        for (const auto& record : store_.load("verdicts/align-" + model.model_id + ".jsonl")) {
            if (record.value("failed", false)) continue;
            std::string id = record.at("query_id").get<std::string>();
            AlignmentVerdict verdict;
            verdict.summary_ref = {id, model.model_id};
            verdict.key_fact_id = record.at("key_fact_id").get<std::string>();
            verdict.matched = record.at("matched").get<bool>();
            for (const auto& line : record.at("line_numbers")) {
                verdict.line_numbers.push_back(line.get<std::size_t>());
            }
            align_by_query[id].push_back(std::move(verdict));
        }

        for (const auto& record : store_.load("summaries/" + model.model_id + ".jsonl")) {
            if (record.value("failed", false)) continue;
            std::string id = record.at("query_id").get<std::string>();
            if (failed.count(id) > 0) continue;
            auto facts_it = facts_by_query.find(id);
            auto align_it = align_by_query.find(id);
            if (facts_it == facts_by_query.end() || align_it == align_by_query.end()) continue;
            auto query_it = queries_by_id.find(id);
            if (query_it == queries_by_id.end()) {
                throw StageError("verdicts reference unknown query " + id);
            }
            const Query& query = query_it->second;
            auto tree = load_validated_tree(query.chunk_ref, query.perspective);
            if (!tree) throw StageError("no validated tree behind query " + id);

            EvaluatedSummary item;
            item.query_id = id;
            item.model_id = model.model_id;
            item.perspective = query.perspective;
            item.chunk = query.chunk_ref;
            auto chunk_it = chunks.find(query.chunk_ref.doc_id);
            if (chunk_it == chunks.end()) {
                throw StageError("no chunks for document " + query.chunk_ref.doc_id);
            }
            item.num_chunks = chunk_it->second.size();
            item.sentence_count = record.at("sentences").size();
            item.summary_tokens = record.at("token_count").get<std::size_t>();
            item.tree = std::move(*tree);
            item.alignment = std::move(align_it->second);
            item.facts = std::move(facts_it->second);
            evaluated.push_back(std::move(item));
        }
    }

    std::vector<GoldLabel> gold;
    if (!manifest_.gold_labels.empty()) {
        std::ifstream in(manifest_.gold_labels, std::ios::binary);
        if (!in) throw StageError("cannot read gold labels: " + manifest_.gold_labels);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            ordered_json record = ordered_json::parse(line, nullptr, false);
            if (record.is_discarded()) {
                throw StageError("corrupt gold label line in " + manifest_.gold_labels);
            }
            gold.push_back({record.at("task").get<std::string>(),
                            record.at("instance_id").get<std::string>(),
                            record.at("gold").get<int>()});
        }
    }

    MetricsReport report = aggregate(evaluated, manifest_.bins, gold);
    store_.write_file("metrics.json", report.to_json().dump(2) + "\n");
}

void Pipeline::run_audit() {
    require_artifact("audit", "chunks.jsonl");

    std::set<std::string> done;
    if (store_.exists("audits.jsonl")) {
        for (const auto& record : store_.load("audits.jsonl")) {
            done.insert(record.at("doc_id").get<std::string>() + "/" +
                        std::to_string(record.at("chunk_index").get<std::size_t>()));
        }
    }
    std::vector<Chunk> items;
    for (const auto& doc : manifest_.documents) {
        for (const auto& chunk : chunks_for(doc.id)) {
            if (done.count(chunk.doc_id + "/" + std::to_string(chunk.index)) == 0) {
                items.push_back(chunk);
            }
        }
    }
    std::size_t budget = stage_output_tokens(manifest_, "audit");
    std::vector<std::optional<ordered_json>> results(items.size());
    run_ordered(
        items.size(), static_cast<std::size_t>(manifest_.concurrency),
        [&](std::size_t i) {
            try {
                ChunkAudit audit =
                    audit_chunk(items[i], manifest_.judge, gateway_, prompts_, budget);
                results[i] = ordered_json{{"doc_id", audit.chunk_ref.doc_id},
                                          {"chunk_index", audit.chunk_ref.chunk_index},
                                          {"hkf_validity", audit.hkf_validity},
                                          {"content_coherence", audit.content_coherence},
                                          {"cross_content_reasoning", audit.cross_content_reasoning},
                                          {"explanation", audit.explanation}};
            } catch (const Error& err) {
                note_issue("audit",
                           items[i].doc_id + "/" + std::to_string(items[i].index), err.what());
            }
        },
        [&](std::size_t i) {
            if (results[i]) store_.append("audits.jsonl", *results[i]);
        });
}

void Pipeline::run_report() {
    require_artifact("report", "metrics.json");
    MetricsReport report = MetricsReport::from_json(
        ordered_json::parse(store_.read_file("metrics.json")));
    store_.write_file("report.md", render_markdown_report(report));
    store_.write_file("report.csv", render_csv_report(report));
}

void Pipeline::run_all() {
    run_ingest();
    write_ledger();
    run_trees();
    write_ledger();
    run_validate();
    write_ledger();
    run_queries();
    write_ledger();
    run_summaries();
    write_ledger();
    run_evaluate();
    write_ledger();
    run_metrics();
    run_report();
    write_ledger();
}

void Pipeline::run_stage(const std::string& name) {
    if (name == "ingest") {
        run_ingest();
    } else if (name == "trees") {
        run_trees();
    } else if (name == "validate") {
        run_validate();
    } else if (name == "queries") {
        run_queries();
    } else if (name == "summarize") {
        run_summaries();
    } else if (name == "evaluate") {
        run_evaluate();
    } else if (name == "metrics") {
        run_metrics();
    } else if (name == "report") {
        run_report();
    } else if (name == "audit") {
        run_audit();
    } else {
        throw ConfigError("unknown stage: " + name);
    }
    write_ledger();
}

} // namespace qfs
