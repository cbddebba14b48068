#include "qfs/keyfact.hpp"

#include "qfs/errors.hpp"

#include <algorithm>
#include <array>
#include <cctype>

namespace qfs {

using nlohmann::ordered_json;

std::string_view to_string(Perspective p) {
    return p == Perspective::analytical ? "analytical" : "narrative";
}

Perspective perspective_from_string(std::string_view s) {
    if (s == "analytical") return Perspective::analytical;
    if (s == "narrative") return Perspective::narrative;
    throw ParseError("unknown perspective: " + std::string(s));
}

std::string_view to_string(FactLevel level) {
    switch (level) {
    case FactLevel::root: return "root";
    case FactLevel::branch: return "branch";
    case FactLevel::leaf: return "leaf";
    }
    return "root";
}

FactLevel fact_level_from_string(std::string_view s) {
    if (s == "root") return FactLevel::root;
    if (s == "branch") return FactLevel::branch;
    if (s == "leaf") return FactLevel::leaf;
    throw ParseError("unknown fact level: " + std::string(s));
}

FactLevel level_of_id(std::string_view id) {
    std::size_t dots = static_cast<std::size_t>(std::count(id.begin(), id.end(), '.'));
    switch (dots) {
    case 0: return FactLevel::root;
    case 1: return FactLevel::branch;
    case 2: return FactLevel::leaf;
    default: throw ParseError("malformed key-fact id: " + std::string(id));
    }
}

std::string_view to_string(Dimension d) {
    switch (d) {
    case Dimension::faithfulness: return "faithfulness";
    case Dimension::objectivity: return "objectivity";
    case Dimension::significance: return "significance";
    }
    return "faithfulness";
}

Dimension dimension_from_string(std::string_view s) {
    if (s == "faithfulness") return Dimension::faithfulness;
    if (s == "objectivity") return Dimension::objectivity;
    if (s == "significance") return Dimension::significance;
    throw ParseError("unknown validation dimension: " + std::string(s));
}

std::size_t KeyFactTree::node_count() const {
    std::size_t n = 0;
    for (const auto& root : roots) {
        ++n;
        for (const auto& branch : root.branches) {
            ++n;
            n += branch.leaves.size();
        }
    }
    return n;
}

std::string extract_json_payload(const std::string& raw) {
    std::string_view s = raw;
    // Trim whitespace.
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    // Unwrap a ``` fence if present.
    if (s.substr(0, 3) == "```") {
        std::size_t nl = s.find('\n');
        std::size_t end = s.rfind("```");
        if (nl != std::string_view::npos && end != std::string_view::npos && end > nl) {
            s = s.substr(nl + 1, end - nl - 1);
        }
    }
    // Fall back to the outermost {...} or [...] region.
    std::size_t open = s.find_first_of("{[");
    if (open == std::string_view::npos) return std::string(s);
    char close = s[open] == '{' ? '}' : ']';
    std::size_t last = s.rfind(close);
    if (last == std::string_view::npos || last < open) return std::string(s);
    return std::string(s.substr(open, last - open + 1));
}

namespace {

ordered_json parse_json_or_throw(const std::string& raw, const char* what) {
    ordered_json j = ordered_json::parse(extract_json_payload(raw), nullptr, false);
    if (j.is_discarded()) throw ParseError(std::string("output is not valid JSON (") + what + ")");
    return j;
}

std::string node_label(std::string_view kind, std::size_t index) {
    return std::string(kind) + " " + std::to_string(index + 1);
}

const ordered_json& require_field(const ordered_json& obj, const char* key,
                                  const std::string& where) {
    if (!obj.is_object()) throw ParseError(where + ": expected a JSON object");
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(where + ": missing \"" + key + "\"");
    return *it;
}

std::string require_text(const ordered_json& obj, const std::string& where) {
    const ordered_json& t = require_field(obj, "text", where);
    if (!t.is_string()) throw ParseError(where + ": \"text\" must be a string");
    std::string text = t.get<std::string>();
    if (text.empty()) throw ParseError(where + ": \"text\" must be non-empty");
    return text;
}

const ordered_json& require_array(const ordered_json& obj, const char* key,
                                  const std::string& where) {
    const ordered_json& a = require_field(obj, key, where);
    if (!a.is_array()) throw ParseError(where + ": \"" + key + "\" must be an array");
    return a;
}

} // namespace

KeyFactTree parse_tree(const std::string& structured_output, const ChunkRef& chunk_ref,
                       Perspective perspective) {
    ordered_json j = parse_json_or_throw(structured_output, "key-fact tree");

    KeyFactTree tree;
    tree.chunk_ref = chunk_ref;
    tree.perspective = perspective;

    const ordered_json& roots = require_array(j, "roots", "tree");
    if (roots.empty()) throw ParseError("tree: \"roots\" must contain at least one root");

    for (std::size_t r = 0; r < roots.size(); ++r) {
        const std::string where_r = node_label("root", r);
        KeyFactTree::Root root;
        root.id = "r" + std::to_string(r);
        root.text = require_text(roots[r], where_r);
        const ordered_json& branches = require_array(roots[r], "branches", where_r);
        for (std::size_t b = 0; b < branches.size(); ++b) {
            const std::string where_b = where_r + ", " + node_label("branch", b);
            KeyFactTree::Branch branch;
            branch.id = root.id + ".b" + std::to_string(b);
            branch.text = require_text(branches[b], where_b);
            const ordered_json& leaves = require_array(branches[b], "leaves", where_b);
            for (std::size_t l = 0; l < leaves.size(); ++l) {
                const std::string where_l = where_b + ", " + node_label("leaf", l);
                if (!leaves[l].is_string()) {
                    throw ParseError(where_l + ": leaves must be strings");
                }
                std::string text = leaves[l].get<std::string>();
                if (text.empty()) throw ParseError(where_l + ": leaf text must be non-empty");
                branch.leaves.push_back({branch.id + ".l" + std::to_string(l), std::move(text)});
            }
            root.branches.push_back(std::move(branch));
        }
        tree.roots.push_back(std::move(root));
    }
    return tree;
}

namespace {

void parse_label_node(const ordered_json& node, const std::string& where, const std::string& id,
                      Dimension dimension, std::vector<ValidationVerdict>& out) {
    const ordered_json& label = require_field(node, "label", where);
    bool pass = false;
    if (label.is_number_integer()) {
        auto v = label.get<long long>();
        if (v != 0 && v != 1) throw ParseError(where + ": label must be 0 or 1");
        pass = v == 1;
    } else {
        throw ParseError(where + ": label must be the integer 0 or 1");
    }
    std::string justification;
    if (auto it = node.find("justification"); it != node.end() && it->is_string()) {
        justification = it->get<std::string>();
    }
    out.push_back({id, dimension, pass, std::move(justification)});
}

} // namespace

std::vector<ValidationVerdict> parse_verdict_tree(const std::string& structured_output,
                                                  const KeyFactTree& tree, Dimension dimension) {
    ordered_json j = parse_json_or_throw(structured_output, "verdict tree");
    const ordered_json& roots = require_array(j, "roots", "verdict tree");
    if (roots.size() != tree.roots.size()) {
        throw ParseError("verdict tree: expected " + std::to_string(tree.roots.size()) +
                         " roots, got " + std::to_string(roots.size()));
    }
    std::vector<ValidationVerdict> verdicts;
    for (std::size_t r = 0; r < tree.roots.size(); ++r) {
        const auto& troot = tree.roots[r];
        const std::string where_r = node_label("root", r);
        parse_label_node(roots[r], where_r, troot.id, dimension, verdicts);
        const ordered_json& branches = require_array(roots[r], "branches", where_r);
        if (branches.size() != troot.branches.size()) {
            throw ParseError(where_r + ": expected " + std::to_string(troot.branches.size()) +
                             " branches, got " + std::to_string(branches.size()));
        }
        for (std::size_t b = 0; b < troot.branches.size(); ++b) {
            const auto& tbranch = troot.branches[b];
            const std::string where_b = where_r + ", " + node_label("branch", b);
            parse_label_node(branches[b], where_b, tbranch.id, dimension, verdicts);
            const ordered_json& leaves = require_array(branches[b], "leaves", where_b);
            if (leaves.size() != tbranch.leaves.size()) {
                throw ParseError(where_b + ": expected " + std::to_string(tbranch.leaves.size()) +
                                 " leaves, got " + std::to_string(leaves.size()));
            }
            for (std::size_t l = 0; l < tbranch.leaves.size(); ++l) {
                const std::string where_l = where_b + ", " + node_label("leaf", l);
                parse_label_node(leaves[l], where_l, tbranch.leaves[l].id, dimension, verdicts);
            }
        }
    }
    return verdicts;
}

std::map<std::string, bool> merge_verdicts(const KeyFactTree& tree,
                                           const std::vector<ValidationVerdict>& faithfulness,
                                           const std::vector<ValidationVerdict>& objectivity,
                                           const std::vector<ValidationVerdict>& significance) {
    const std::vector<const std::vector<ValidationVerdict>*> passes = {&faithfulness, &objectivity,
                                                                       &significance};
    const Dimension expected[] = {Dimension::faithfulness, Dimension::objectivity,
                                  Dimension::significance};

    std::map<std::string, std::array<std::optional<bool>, 3>> by_node;
    for (const auto& fact : linearize(tree)) by_node[fact.id] = {};

    for (std::size_t p = 0; p < passes.size(); ++p) {
        for (const auto& verdict : *passes[p]) {
            if (verdict.dimension != expected[p]) {
                throw CoverageError("verdict for " + verdict.key_fact_id +
                                    " carries the wrong dimension");
            }
            auto it = by_node.find(verdict.key_fact_id);
            if (it == by_node.end()) {
                throw CoverageError("verdict references unknown node " + verdict.key_fact_id);
            }
            auto& slot = it->second[p];
            if (slot.has_value()) {
                throw CoverageError("duplicate " + std::string(to_string(expected[p])) +
                                    " verdict for node " + verdict.key_fact_id);
            }
            slot = verdict.pass;
        }
    }

    std::map<std::string, bool> merged;
    for (const auto& [id, slots] : by_node) {
        for (std::size_t p = 0; p < 3; ++p) {
            if (!slots[p].has_value()) {
                throw CoverageError("node " + id + " is missing a " +
                                    std::string(to_string(expected[p])) + " verdict");
            }
        }
        merged[id] = *slots[0] && *slots[1] && *slots[2];
    }
    return merged;
}

KeyFactTree prune(const KeyFactTree& tree, const std::map<std::string, bool>& merged) {
    auto passes = [&](const std::string& id) {
        auto it = merged.find(id);
        if (it == merged.end()) throw CoverageError("prune: no merged verdict for node " + id);
        return it->second;
    };

    KeyFactTree out;
    out.chunk_ref = tree.chunk_ref;
    out.perspective = tree.perspective;
    for (const auto& root : tree.roots) {
        if (!passes(root.id)) continue;
        KeyFactTree::Root kept_root{root.id, root.text, {}};
        for (const auto& branch : root.branches) {
            if (!passes(branch.id)) continue;
            KeyFactTree::Branch kept_branch{branch.id, branch.text, {}};
            for (const auto& leaf : branch.leaves) {
                if (!passes(leaf.id)) continue;
                kept_branch.leaves.push_back(leaf);
            }
            kept_root.branches.push_back(std::move(kept_branch));
        }
        out.roots.push_back(std::move(kept_root));
    }
    return out;
}

std::vector<KeyFact> linearize(const KeyFactTree& tree) {
    std::vector<KeyFact> facts;
    facts.reserve(tree.node_count());
    for (const auto& root : tree.roots) {
        facts.push_back({root.id, FactLevel::root, root.text, ""});
        for (const auto& branch : root.branches) {
            facts.push_back({branch.id, FactLevel::branch, branch.text, root.id});
            for (const auto& leaf : branch.leaves) {
                facts.push_back({leaf.id, FactLevel::leaf, leaf.text, branch.id});
            }
        }
    }
    return facts;
}

LevelCounts level_counts(const KeyFactTree& tree) {
    LevelCounts counts;
    counts.roots = tree.roots.size();
    for (const auto& root : tree.roots) {
        counts.branches += root.branches.size();
        for (const auto& branch : root.branches) counts.leaves += branch.leaves.size();
    }
    return counts;
}

nlohmann::ordered_json tree_to_prompt_json(const KeyFactTree& tree) {
    ordered_json roots = ordered_json::array();
    for (const auto& root : tree.roots) {
        ordered_json branches = ordered_json::array();
        for (const auto& branch : root.branches) {
            ordered_json leaves = ordered_json::array();
            for (const auto& leaf : branch.leaves) leaves.push_back(leaf.text);
            branches.push_back({{"text", branch.text}, {"leaves", std::move(leaves)}});
        }
        roots.push_back({{"text", root.text}, {"branches", std::move(branches)}});
    }
    return ordered_json{{"roots", std::move(roots)}};
}

nlohmann::ordered_json tree_to_record_json(const KeyFactTree& tree) {
    ordered_json roots = ordered_json::array();
    for (const auto& root : tree.roots) {
        ordered_json branches = ordered_json::array();
        for (const auto& branch : root.branches) {
            ordered_json leaves = ordered_json::array();
            for (const auto& leaf : branch.leaves) {
                leaves.push_back({{"id", leaf.id}, {"text", leaf.text}});
            }
            branches.push_back(
                {{"id", branch.id}, {"text", branch.text}, {"leaves", std::move(leaves)}});
        }
        roots.push_back({{"id", root.id}, {"text", root.text}, {"branches", std::move(branches)}});
    }
    return ordered_json{{"roots", std::move(roots)}};
}

KeyFactTree tree_from_record_json(const nlohmann::ordered_json& record, const ChunkRef& chunk_ref,
                                  Perspective perspective) {
    KeyFactTree tree;
    tree.chunk_ref = chunk_ref;
    tree.perspective = perspective;
    const ordered_json& roots = require_array(record, "roots", "tree record");
    for (const auto& jroot : roots) {
        KeyFactTree::Root root;
        root.id = require_field(jroot, "id", "tree record root").get<std::string>();
        root.text = require_text(jroot, "tree record root");
        for (const auto& jbranch : require_array(jroot, "branches", "tree record root")) {
            KeyFactTree::Branch branch;
            branch.id = require_field(jbranch, "id", "tree record branch").get<std::string>();
            branch.text = require_text(jbranch, "tree record branch");
            for (const auto& jleaf : require_array(jbranch, "leaves", "tree record branch")) {
                KeyFactTree::Leaf leaf;
                leaf.id = require_field(jleaf, "id", "tree record leaf").get<std::string>();
                leaf.text = require_text(jleaf, "tree record leaf");
                branch.leaves.push_back(std::move(leaf));
            }
            root.branches.push_back(std::move(branch));
        }
        tree.roots.push_back(std::move(root));
    }
    return tree;
}

} // namespace qfs
