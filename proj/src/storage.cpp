#include "counselflow/storage.hpp"

#include <fstream>
#include <sstream>

#include "counselflow/errors.hpp"

namespace counselflow {

std::size_t FaultInjector::admit(std::size_t size) {
    const long ordinal = writes_++;
    if (fired_ || ordinal != crash_at_) return size;
    fired_ = true;
    pending_ = true;
    return torn_ ? size / 2 : 0;
}

void FaultInjector::check_crash(std::string_view where) {
    if (pending_) {
        pending_ = false;
        throw SimulatedCrash{std::string(where)};
    }
}

AppendFile::AppendFile(std::filesystem::path path, FaultInjector* faults)
    : path_(std::move(path)), faults_(faults) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
}

void AppendFile::append_line(std::string_view line) {
    std::lock_guard lock(mutex_);
    std::string data(line);
    data.push_back('\n');
    std::size_t n = faults_ ? faults_->admit(data.size()) : data.size();
    {
        std::ofstream out(path_, std::ios::binary | std::ios::app);
        if (!out) throw Error("cannot open " + path_.string() + " for append");
        out.write(data.data(), static_cast<std::streamsize>(n));
        out.flush();
        if (!out) throw Error("write to " + path_.string() + " failed");
    }
    if (faults_) faults_->check_crash(path_.string());
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content,
                       FaultInjector* faults) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    std::size_t n = faults ? faults->admit(content.size()) : content.size();
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(n));
        if (!out) throw Error("write to " + tmp.string() + " failed");
    }
    // A crash before the rename leaves the previous file intact.
    if (faults) faults->check_crash(tmp.string());
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

LineRead read_lines(const std::filesystem::path& path) {
    LineRead out;
    if (!std::filesystem::exists(path)) return out;
    const std::string data = read_file(path);
    std::size_t start = 0;
    while (start < data.size()) {
        auto nl = data.find('\n', start);
        if (nl == std::string::npos) {
            out.torn_tail = true;
            break;
        }
        out.lines.emplace_back(data.substr(start, nl - start));
        start = nl + 1;
    }
    return out;
}

void rewrite_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
    std::string content;
    for (const auto& l : lines) {
        content += l;
        content.push_back('\n');
    }
    write_file_atomic(path, content);
}

}  // namespace counselflow
