#pragma once

#include "qfs/evaluator.hpp"
#include "qfs/hash.hpp"
#include "qfs/keyfact.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

namespace qfs::test {

inline std::filesystem::path source_dir() { return std::filesystem::path(QFS_SOURCE_DIR); }

inline std::filesystem::path fixture(const std::string& name) {
    return source_dir() / "tests" / "fixtures" / name;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& contents) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << contents;
    REQUIRE(out.good());
}

// Fresh scratch directory per test, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<unsigned> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("qfs-" + tag + "-" + std::to_string(::getpid()) + "-" +
                 std::to_string(counter.fetch_add(1)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

// Random tree with <= max_roots * max_branches * (1 + max_leaves) nodes.
inline KeyFactTree random_tree(SplitMix64& rng, std::size_t max_roots = 2,
                               std::size_t max_branches = 3, std::size_t max_leaves = 3) {
    KeyFactTree tree;
    tree.chunk_ref = {"doc", 0};
    tree.perspective = Perspective::analytical;
    std::size_t n_roots = 1 + rng.below(max_roots);
    for (std::size_t r = 0; r < n_roots; ++r) {
        KeyFactTree::Root root;
        root.id = "r" + std::to_string(r);
        root.text = "root " + std::to_string(r);
        std::size_t n_branches = rng.below(max_branches + 1);
        for (std::size_t b = 0; b < n_branches; ++b) {
            KeyFactTree::Branch branch;
            branch.id = root.id + ".b" + std::to_string(b);
            branch.text = "branch " + std::to_string(r) + "." + std::to_string(b);
            std::size_t n_leaves = rng.below(max_leaves + 1);
            for (std::size_t l = 0; l < n_leaves; ++l) {
                branch.leaves.push_back({branch.id + ".l" + std::to_string(l),
                                         "leaf " + std::to_string(r) + "." + std::to_string(b) +
                                             "." + std::to_string(l)});
            }
            root.branches.push_back(std::move(branch));
        }
        tree.roots.push_back(std::move(root));
    }
    return tree;
}

// Per-dimension random verdicts covering every node exactly once.
inline std::vector<ValidationVerdict> random_pass(const KeyFactTree& tree, Dimension dimension,
                                                  SplitMix64& rng, double fail_rate = 0.3) {
    std::vector<ValidationVerdict> verdicts;
    for (const auto& fact : linearize(tree)) {
        bool pass = rng.unit() >= fail_rate;
        verdicts.push_back({fact.id, dimension, pass, ""});
    }
    return verdicts;
}

} // namespace qfs::test
