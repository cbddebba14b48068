#include "qfs/document.hpp"

#include "qfs/errors.hpp"
#include "qfs/sentences.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace qfs {

bool is_valid_utf8(std::string_view text) {
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        std::size_t len = 0;
        unsigned cp_min = 0;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xe0) == 0xc0) {
            len = 1;
            cp_min = 0x80;
        } else if ((c & 0xf0) == 0xe0) {
            len = 2;
            cp_min = 0x800;
        } else if ((c & 0xf8) == 0xf0) {
            len = 3;
            cp_min = 0x10000;
        } else {
            return false;
        }
        if (i + len >= n) return false;
        unsigned cp = c & (0x3f >> len);
        for (std::size_t k = 1; k <= len; ++k) {
            unsigned char cc = static_cast<unsigned char>(text[i + k]);
            if ((cc & 0xc0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3f);
        }
        if (cp < cp_min || cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) return false;
        i += len + 1;
    }
    return true;
}

std::string normalize_line_endings(std::string text) {
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (c == '\r') {
            out.push_back('\n');
            if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
        } else {
            out.push_back(c);
        }
    }
    return out;
}

Document load_document(const std::string& path, const std::string& id,
                       const Tokenizer& tokenizer) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read document file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw IoError("error while reading document file: " + path);
    std::string text = buf.str();
    if (!is_valid_utf8(text)) throw EncodingError("document is not valid UTF-8: " + path);

    Document doc;
    doc.id = id;
    doc.title = std::filesystem::path(path).stem().string();
    doc.text = normalize_line_endings(std::move(text));
    doc.token_count = tokenizer.count(doc.text);
    return doc;
}

namespace {

Chunk make_chunk(const Document& doc, std::size_t index, std::string text,
                 std::size_t sentence_count, bool oversized, const Tokenizer& tokenizer) {
    Chunk chunk;
    chunk.doc_id = doc.id;
    chunk.index = index;
    chunk.token_count = tokenizer.count(text);
    chunk.text = std::move(text);
    chunk.sentence_count = sentence_count;
    chunk.oversized = oversized;
    return chunk;
}

} // namespace

std::vector<Chunk> chunk_document(const Document& doc, std::size_t max_tokens,
                                  const Tokenizer& tokenizer) {
    if (max_tokens == 0) throw ConfigError("max_tokens must be >= 1");
    std::vector<Chunk> chunks;
    if (doc.text.empty()) return chunks;

    std::string current;
    std::size_t current_tokens = 0;
    std::size_t current_sentences = 0;

    auto flush = [&] {
        if (current_sentences == 0) return;
        chunks.push_back(
            make_chunk(doc, chunks.size(), std::move(current), current_sentences, false, tokenizer));
        current.clear();
        current_tokens = 0;
        current_sentences = 0;
    };

    for (const auto& span : split_sentences(doc.text)) {
        std::string_view sentence(doc.text.data() + span.offset, span.length);
        std::size_t tokens = tokenizer.count(sentence);
        if (tokens > max_tokens) {
            // Pathological single sentence: hard-split at token boundaries.
            flush();
            std::string_view rest = sentence;
            while (!rest.empty()) {
                std::size_t cut = tokenizer.prefix_bytes(rest, max_tokens);
                if (cut == 0 || cut >= rest.size()) cut = rest.size();
                chunks.push_back(
                    make_chunk(doc, chunks.size(), std::string(rest.substr(0, cut)), 1, true,
                               tokenizer));
                rest.remove_prefix(cut);
            }
            continue;
        }
        if (current_sentences > 0 && current_tokens + tokens > max_tokens) flush();
        current.append(sentence);
        current_tokens += tokens;
        ++current_sentences;
    }
    flush();
    return chunks;
}

} // namespace qfs
