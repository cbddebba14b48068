#include "qfs/prompts.hpp"

#include "qfs/errors.hpp"
#include "qfs/prompts_data.hpp"

#include <fstream>
#include <sstream>

namespace qfs {

namespace {

struct TemplateInfo {
    std::string_view id;
    std::vector<std::string> placeholders;
};

const std::vector<TemplateInfo>& registry() {
    static const std::vector<TemplateInfo> infos = {
        {templates::tree_analytical, {"excerpt"}},
        {templates::tree_narrative, {"excerpt"}},
        {templates::validate_faithfulness, {"excerpt", "key-fact tree"}},
        {templates::validate_objectivity, {"excerpt", "key-fact tree"}},
        {templates::validate_significance, {"excerpt", "key-fact tree"}},
        {templates::query_analytical, {"excerpt", "key-fact tree"}},
        {templates::query_narrative, {"excerpt", "key-fact tree"}},
        {templates::fact_verify, {"excerpt", "# sentences", "summary sentences"}},
        {templates::keyfact_align, {"summary", "# key-facts", "key-fact list"}},
        {templates::chunk_audit, {"chunk"}},
        {templates::summarize, {"query", "book"}},
    };
    return infos;
}

void replace_all(std::string& text, const std::string& needle, const std::string& value) {
    std::size_t pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        text.replace(pos, needle.size(), value);
        pos += value.size();
    }
}

} // namespace

const PromptLibrary& PromptLibrary::builtin() {
    static const PromptLibrary lib = [] {
        PromptLibrary out;
        for (const auto& info : registry()) {
            std::string_view text;
            for (const auto& [id, body] : detail::kEmbeddedPrompts) {
                if (id == info.id) {
                    text = body;
                    break;
                }
            }
            if (text.empty()) {
                throw TemplateError("embedded template missing: " + std::string(info.id));
            }
            out.templates_.emplace(std::string(info.id),
                                   PromptTemplate{std::string(info.id), std::string(text),
                                                  info.placeholders});
        }
        return out;
    }();
    return lib;
}

PromptLibrary PromptLibrary::from_directory(const std::string& dir) {
    PromptLibrary out;
    for (const auto& info : registry()) {
        std::string path = dir + "/" + std::string(info.id) + ".txt";
        std::ifstream in(path, std::ios::binary);
        if (!in) throw TemplateError("cannot read template file: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        out.templates_.emplace(std::string(info.id),
                               PromptTemplate{std::string(info.id), buf.str(), info.placeholders});
    }
    return out;
}

const PromptTemplate& PromptLibrary::get(std::string_view id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw TemplateError("unknown template id: " + std::string(id));
    return it->second;
}

std::vector<std::string> PromptLibrary::ids() const {
    std::vector<std::string> out;
    out.reserve(templates_.size());
    for (const auto& [id, _] : templates_) out.push_back(id);
    return out;
}

std::string PromptLibrary::render_text(std::string_view id, const Bindings& bindings) const {
    const PromptTemplate& tpl = get(id);
    for (const auto& [name, _] : bindings) {
        bool known = false;
        for (const auto& placeholder : tpl.placeholders) {
            if (placeholder == name) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw TemplateError("template " + tpl.id + " does not take a {" + name +
                                "} placeholder");
        }
    }
    std::string text = tpl.text;
    for (const auto& placeholder : tpl.placeholders) {
        auto it = bindings.find(placeholder);
        if (it == bindings.end()) {
            throw TemplateError("unbound placeholder {" + placeholder + "} in template " + tpl.id);
        }
        replace_all(text, "{" + placeholder + "}", it->second);
    }
    return text;
}

std::vector<ChatMessage> PromptLibrary::render(std::string_view id, const Bindings& bindings) const {
    return {ChatMessage{"user", render_text(id, bindings)}};
}

} // namespace qfs
