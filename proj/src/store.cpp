#include "qfs/store.hpp"

#include "qfs/errors.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <fstream>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

namespace qfs {

ArtifactStore::ArtifactStore(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
}

std::mutex& ArtifactStore::mutex_for(const std::string& relative) {
    std::lock_guard lock(map_mutex_);
    auto& slot = file_mutexes_[relative];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
}

bool ArtifactStore::exists(const std::string& relative) const {
    return std::filesystem::exists(root_ / relative);
}

void ArtifactStore::append(const std::string& relative,
                           const std::vector<nlohmann::ordered_json>& records) {
    if (records.empty()) return;
    std::string buffer;
    for (const auto& record : records) {
        buffer += record.dump();
        buffer += '\n';
    }
    std::lock_guard lock(mutex_for(relative));
    std::filesystem::path full = root_ / relative;
    std::filesystem::create_directories(full.parent_path());
    std::ofstream out(full, std::ios::binary | std::ios::app);
    if (!out) throw StoreError("cannot open for append: " + full.string());
    out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    out.flush();
    if (!out) throw StoreError("write failed: " + full.string());
}

void ArtifactStore::append(const std::string& relative, const nlohmann::ordered_json& record) {
    append(relative, std::vector<nlohmann::ordered_json>{record});
}

std::vector<nlohmann::ordered_json> ArtifactStore::load(const std::string& relative) const {
    std::vector<nlohmann::ordered_json> records;
    std::ifstream in(root_ / relative, std::ios::binary);
    if (!in) return records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::ordered_json record = nlohmann::ordered_json::parse(line, nullptr, false);
        if (record.is_discarded()) {
            throw StoreError("corrupt record at " + relative + ":" + std::to_string(lineno));
        }
        records.push_back(std::move(record));
    }
    return records;
}

void ArtifactStore::write_file(const std::string& relative, const std::string& contents) {
    std::lock_guard lock(mutex_for(relative));
    std::filesystem::path full = root_ / relative;
    std::filesystem::create_directories(full.parent_path());
    std::ofstream out(full, std::ios::binary | std::ios::trunc);
    if (!out) throw StoreError("cannot open for write: " + full.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw StoreError("write failed: " + full.string());
}

std::string ArtifactStore::read_file(const std::string& relative) const {
    std::ifstream in(root_ / relative, std::ios::binary);
    if (!in) throw StoreError("cannot read: " + (root_ / relative).string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::string> ArtifactStore::list_files() const {
    std::vector<std::string> out;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(root_)) {
        if (entry.is_regular_file()) {
            out.push_back(std::filesystem::relative(entry.path(), root_).generic_string());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

DirectoryLock::DirectoryLock(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    path_ = dir / ".lock";
    fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw StoreError("cannot open lock file: " + path_.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw StoreError("output directory is locked by another process: " + dir.string());
    }
}

DirectoryLock::~DirectoryLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

void run_ordered(std::size_t count, std::size_t workers,
                 const std::function<void(std::size_t)>& compute,
                 const std::function<void(std::size_t)>& commit) {
    if (count == 0) return;
    workers = std::max<std::size_t>(1, std::min(workers, count));

    std::vector<std::exception_ptr> errors(count);
    std::vector<char> ready(count, 0);
    std::mutex mutex;
    std::condition_variable cv;
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                compute(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
            {
                std::lock_guard lock(mutex);
                ready[i] = 1;
            }
            cv.notify_all();
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);

    std::exception_ptr first_error;
    for (std::size_t i = 0; i < count; ++i) {
        {
            std::unique_lock lock(mutex);
            cv.wait(lock, [&] { return ready[i] != 0; });
        }
        if (first_error) continue;
        if (errors[i]) {
            first_error = errors[i];
            continue;
        }
        try {
            commit(i);
        } catch (...) {
            first_error = std::current_exception();
        }
    }
    for (auto& thread : pool) thread.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace qfs
