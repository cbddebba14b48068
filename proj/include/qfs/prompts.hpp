#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace qfs {

struct ChatMessage {
    std::string role; // "system", "user" or "assistant"
    std::string content;
};

struct PromptTemplate {
    std::string id;
    std::string text;
    std::vector<std::string> placeholders; // names without braces
};

// Template ids understood by the pipeline.
namespace templates {
inline constexpr std::string_view tree_analytical = "tree_analytical";
inline constexpr std::string_view tree_narrative = "tree_narrative";
inline constexpr std::string_view validate_faithfulness = "validate_faithfulness";
inline constexpr std::string_view validate_objectivity = "validate_objectivity";
inline constexpr std::string_view validate_significance = "validate_significance";
inline constexpr std::string_view query_analytical = "query_analytical";
inline constexpr std::string_view query_narrative = "query_narrative";
inline constexpr std::string_view fact_verify = "fact_verify";
inline constexpr std::string_view keyfact_align = "keyfact_align";
inline constexpr std::string_view chunk_audit = "chunk_audit";
inline constexpr std::string_view summarize = "summarize";
} // namespace templates

using Bindings = std::map<std::string, std::string>;

// Holds the shipped prompt templates and performs bit-exact placeholder
// substitution. Each template declares the placeholders it takes; rendering
// requires exactly those bindings, no more and no fewer.
class PromptLibrary {
public:
    // Templates embedded at build time from prompts/*.txt.
    static const PromptLibrary& builtin();

    // Loads <id>.txt for every known template id from a directory instead.
    static PromptLibrary from_directory(const std::string& dir);

    const PromptTemplate& get(std::string_view id) const; // throws TemplateError
    std::vector<std::string> ids() const;

    std::string render_text(std::string_view id, const Bindings& bindings) const;
    std::vector<ChatMessage> render(std::string_view id, const Bindings& bindings) const;

private:
    std::map<std::string, PromptTemplate, std::less<>> templates_;
};

} // namespace qfs
