#pragma once

// Line-oriented append-only files, atomic whole-file replacement, and a
// fault injector used to simulate process death between writes.

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

namespace counselflow {

// Thrown by FaultInjector to model the process dying. Deliberately not a
// std::exception so ordinary error handlers cannot swallow it.
struct SimulatedCrash {
    std::string where;
};

class FaultInjector {
public:
    // Crash on the write with zero-based ordinal `crash_at`. With `torn`, a
    // prefix of that write reaches the disk first.
    FaultInjector(long crash_at, bool torn) : crash_at_(crash_at), torn_(torn) {}

    // Returns how many bytes of `size` may be written; throws after a partial
    // write has been flushed by the caller (see AppendFile).
    std::size_t admit(std::size_t size);
    void check_crash(std::string_view where);
    long writes() const { return writes_; }
    bool fired() const { return fired_; }

private:
    long crash_at_;
    bool torn_;
    long writes_ = 0;
    bool fired_ = false;
    bool pending_ = false;
};

class AppendFile {
public:
    explicit AppendFile(std::filesystem::path path, FaultInjector* faults = nullptr);

    void append_line(std::string_view line);
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    FaultInjector* faults_;
    std::mutex mutex_;
};

// Writes through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view content,
                       FaultInjector* faults = nullptr);

std::string read_file(const std::filesystem::path& path);

struct LineRead {
    std::vector<std::string> lines;
    // The final line lacked its newline terminator and was dropped.
    bool torn_tail = false;
};

// Reads newline-terminated lines; an unterminated trailing fragment is
// reported as torn and excluded.
LineRead read_lines(const std::filesystem::path& path);

// Rewrites `path` to exactly `lines` (atomic).
void rewrite_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

}  // namespace counselflow
