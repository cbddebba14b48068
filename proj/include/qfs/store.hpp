#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"

namespace qfs {

// Line-delimited JSON artifact store rooted at one output directory. Writes
// are serialized per file; records from one logical work item are written as
// a single atomic append so a resumed run sees either all or none of them.
class ArtifactStore {
public:
    explicit ArtifactStore(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path path(const std::string& relative) const { return root_ / relative; }

    bool exists(const std::string& relative) const;

    // Appends records as JSONL in one buffered write.
    void append(const std::string& relative, const std::vector<nlohmann::ordered_json>& records);
    void append(const std::string& relative, const nlohmann::ordered_json& record);

    std::vector<nlohmann::ordered_json> load(const std::string& relative) const;

    // Whole-file write (metrics.json, ledger.json, report.md).
    void write_file(const std::string& relative, const std::string& contents);
    std::string read_file(const std::string& relative) const;

    std::vector<std::string> list_files() const; // relative paths, sorted

private:
    std::mutex& mutex_for(const std::string& relative);

    std::filesystem::path root_;
    std::mutex map_mutex_;
    std::map<std::string, std::unique_ptr<std::mutex>> file_mutexes_;
};

// Advisory exclusive lock on an output directory; at most one pipeline
// process may own a store at a time. Released on destruction (and by the OS
// if the process dies).
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path& dir);
    ~DirectoryLock();

    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    int fd_ = -1;
    std::filesystem::path path_;
};

// Runs `compute` over items 0..count-1 on a bounded worker pool and invokes
// `commit` for each item strictly in index order. Commit order is therefore
// deterministic no matter how the pool schedules, which keeps artifact files
// byte-identical across runs and concurrency levels.
void run_ordered(std::size_t count, std::size_t workers,
                 const std::function<void(std::size_t)>& compute,
                 const std::function<void(std::size_t)>& commit);

} // namespace qfs
