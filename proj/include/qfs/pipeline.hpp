#pragma once

#include "qfs/config.hpp"
#include "qfs/document.hpp"
#include "qfs/evaluator.hpp"
#include "qfs/gateway.hpp"
#include "qfs/keyfact.hpp"
#include "qfs/metrics.hpp"
#include "qfs/store.hpp"

#include <map>
#include <memory>
#include <set>
#include <optional>
#include <string>
#include <vector>

namespace qfs {

// A perspective-tagged question anchored to one chunk.
struct Query {
    std::string id; // "<doc_id>/<chunk_index>/<perspective>"
    ChunkRef chunk_ref;
    Perspective perspective = Perspective::analytical;
    std::string text;
};

struct ChunkAudit {
    ChunkRef chunk_ref;
    int hkf_validity = 0;
    int content_coherence = 0;
    int cross_content_reasoning = 0;
    std::string explanation;
};

struct ValidatedTree {
    KeyFactTree raw;
    KeyFactTree pruned;
    std::vector<ValidationVerdict> verdicts;
    bool empty_after_prune = false;
};

// Per-item operations. Each talks to the gateway through the shipped
// templates and validates the structured output before returning.

KeyFactTree generate_tree(const Chunk& chunk, Perspective perspective, const ModelSpec& judge,
                          Gateway& gateway, const PromptLibrary& prompts, std::size_t max_tokens);

std::vector<ValidationVerdict> validate_tree(const Chunk& chunk, const KeyFactTree& tree,
                                             Dimension dimension, const ModelSpec& judge,
                                             Gateway& gateway, const PromptLibrary& prompts,
                                             std::size_t max_tokens);

// generate_tree, three validation passes, merge and prune.
ValidatedTree build_validated_tree(const Chunk& chunk, Perspective perspective,
                                   const ModelSpec& judge, Gateway& gateway,
                                   const PromptLibrary& prompts, std::size_t max_tokens);

// Requires a non-empty validated tree; empty trees are skipped by callers.
Query generate_query(const Chunk& chunk, const KeyFactTree& validated_tree,
                     Perspective perspective, const ModelSpec& judge, Gateway& gateway,
                     const PromptLibrary& prompts, std::size_t max_tokens);

// Full-document, query-focused summary. The gateway rejects the request
// before any call when the document plus budget exceeds the model's window.
Summary generate_summary(const Document& doc, const Query& query, const ModelSpec& model,
                         Gateway& gateway, const PromptLibrary& prompts, std::size_t max_tokens);

ChunkAudit audit_chunk(const Chunk& chunk, const ModelSpec& judge, Gateway& gateway,
                       const PromptLibrary& prompts, std::size_t max_tokens);

ChunkAudit parse_chunk_audit(const std::string& raw, const ChunkRef& chunk_ref);

// An item-level failure recorded into the artifact store; the run continues.
struct StageIssue {
    std::string stage;
    std::string item;
    std::string detail;
};

// Seeded uniform sample of `size` elements out of 0..total-1, returned in
// ascending order. Fisher-Yates over splitmix64 so every platform draws the
// same subset.
std::vector<std::size_t> seeded_sample(std::size_t total, std::size_t size, std::uint64_t seed);

// Orchestrates the stages over a resumable artifact store. Already-persisted
// items are never re-asked; commit order is canonical, so a finished store is
// byte-identical no matter how the run was scheduled or interrupted.
class Pipeline {
public:
    Pipeline(RunManifest manifest, Gateway& gateway, const PromptLibrary& prompts,
             const Tokenizer& tokenizer);

    void run_ingest();
    void run_trees();
    void run_validate();
    void run_queries();
    void run_summaries();
    void run_evaluate();
    void run_metrics();
    void run_report();
    void run_audit();

    // ingest -> trees -> validate -> queries -> summarize -> evaluate ->
    // metrics -> report; writes ledger.json after every stage.
    void run_all();

    void run_stage(const std::string& name);

    const std::vector<StageIssue>& issues() const { return issues_; }
    ArtifactStore& store() { return store_; }
    const RunManifest& manifest() const { return manifest_; }

private:
    void require_artifact(const std::string& stage, const std::string& relative) const;
    std::string raw_tree_file(Perspective p) const;
    std::string validated_tree_file(Perspective p) const;

    const std::vector<Chunk>& chunks_for(const std::string& doc_id);
    const Document& document_for(const std::string& doc_id);
    std::map<std::string, std::vector<Chunk>> load_all_chunks();
    std::vector<Query> load_queries();
    std::optional<KeyFactTree> load_validated_tree(const ChunkRef& ref, Perspective perspective);

    void ensure_file(const std::string& relative);
    void note_issue(const std::string& stage, const std::string& item, const std::string& detail);
    void write_ledger();
    void seed_ledger_from_store();

    // Drops records in `first_file` whose key is missing from `last_file`;
    // repairs the window where a two-file commit was interrupted.
    void heal_orphans(const std::string& first_file, const std::string& last_file,
                      const std::function<std::string(const nlohmann::ordered_json&)>& key);

    RunManifest manifest_;
    ArtifactStore store_;
    DirectoryLock lock_;
    Gateway& gateway_;
    const PromptLibrary& prompts_;
    const Tokenizer& tokenizer_;

    std::vector<StageIssue> issues_;
    std::mutex issues_mutex_;

    std::mutex cache_mutex_;
    std::map<std::string, std::vector<Chunk>> chunk_cache_;
    std::map<std::string, std::shared_ptr<Document>> document_cache_;
    // (perspective, doc, chunk) -> validated tree; nullptr marks empty-after-prune.
    std::map<std::string, std::shared_ptr<const KeyFactTree>> validated_cache_;
    std::set<Perspective> validated_cache_loaded_;
};

} // namespace qfs
