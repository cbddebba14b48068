#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace qfs {

// The interpretive mode a key-fact tree was extracted under.
enum class Perspective { analytical, narrative };

std::string_view to_string(Perspective p);
Perspective perspective_from_string(std::string_view s);

enum class FactLevel { root, branch, leaf };

std::string_view to_string(FactLevel level);
FactLevel fact_level_from_string(std::string_view s);

// Level encoded by id depth: "r0" -> root, "r0.b1" -> branch, "r0.b1.l2" -> leaf.
FactLevel level_of_id(std::string_view id);

struct ChunkRef {
    std::string doc_id;
    std::size_t chunk_index = 0;

    bool operator==(const ChunkRef&) const = default;
};

// One node of the hierarchy in flat form, as produced by linearize().
struct KeyFact {
    std::string id;
    FactLevel level = FactLevel::root;
    std::string text;
    std::string parent_id; // empty for roots
};

enum class Dimension { faithfulness, objectivity, significance };

std::string_view to_string(Dimension d);
Dimension dimension_from_string(std::string_view s);

struct ValidationVerdict {
    std::string key_fact_id;
    Dimension dimension = Dimension::faithfulness;
    bool pass = false;
    std::string justification;
};

// Three-level hierarchy of validated facts for one chunk under one
// perspective. Nodes keep the ids assigned at parse time, so verdicts and
// alignment records join against a pruned tree without text matching.
class KeyFactTree {
public:
    struct Leaf {
        std::string id;
        std::string text;
    };
    struct Branch {
        std::string id;
        std::string text;
        std::vector<Leaf> leaves;
    };
    struct Root {
        std::string id;
        std::string text;
        std::vector<Branch> branches;
    };

    ChunkRef chunk_ref;
    Perspective perspective = Perspective::analytical;
    std::vector<Root> roots;

    bool empty() const { return roots.empty(); }
    std::size_t node_count() const;
};

struct LevelCounts {
    std::size_t roots = 0;
    std::size_t branches = 0;
    std::size_t leaves = 0;

    std::size_t total() const { return roots + branches + leaves; }
    bool operator==(const LevelCounts&) const = default;
};

// Parses the generator's structured output:
//   {"roots": [{"text": ..., "branches": [{"text": ..., "leaves": [...]}]}]}
// Ids are assigned deterministically from traversal order. Throws ParseError
// with a reason suitable for re-prompting on any schema violation (missing
// arrays, wrong nesting, empty texts, zero roots).
KeyFactTree parse_tree(const std::string& structured_output, const ChunkRef& chunk_ref,
                       Perspective perspective);

// Parses a validator's structured output, which must mirror the shape of
// `tree` with {"label": 0|1, "justification": ...} per node. Returns one
// verdict per node for `dimension`. Labels other than 0/1 are a ParseError.
std::vector<ValidationVerdict> parse_verdict_tree(const std::string& structured_output,
                                                  const KeyFactTree& tree, Dimension dimension);

// Merges the three validation passes into a per-node pass/fail map: a node
// passes iff all three dimensions pass. Throws CoverageError unless the
// passes jointly cover every node exactly once per dimension.
std::map<std::string, bool> merge_verdicts(const KeyFactTree& tree,
                                           const std::vector<ValidationVerdict>& faithfulness,
                                           const std::vector<ValidationVerdict>& objectivity,
                                           const std::vector<ValidationVerdict>& significance);

// Keeps exactly the nodes that pass and whose every ancestor passes; sibling
// order and node ids are preserved. A tree whose roots all fail comes back
// empty (callers flag it).
KeyFactTree prune(const KeyFactTree& tree, const std::map<std::string, bool>& merged);

// Depth-first pre-order: each root, then each of its branches, each branch
// followed by its leaves.
std::vector<KeyFact> linearize(const KeyFactTree& tree);

LevelCounts level_counts(const KeyFactTree& tree);

// Serialization without ids, matching the generation prompts' tree schema;
// used as the {key-fact tree} prompt binding.
nlohmann::ordered_json tree_to_prompt_json(const KeyFactTree& tree);

// Serialization with ids for the artifact store, and its inverse.
nlohmann::ordered_json tree_to_record_json(const KeyFactTree& tree);
KeyFactTree tree_from_record_json(const nlohmann::ordered_json& record, const ChunkRef& chunk_ref,
                                  Perspective perspective);

// Strips an optional Markdown code fence and surrounding noise so that the
// payload between the first '{' or '[' and its matching end is parsed.
std::string extract_json_payload(const std::string& raw);

} // namespace qfs
