#pragma once

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>

#include "counselflow/backends.hpp"
#include "counselflow/bench.hpp"
#include "counselflow/domain.hpp"
#include "counselflow/evaluator.hpp"
#include "counselflow/gateway.hpp"
#include "counselflow/prompts.hpp"

namespace cft {

using namespace counselflow;
namespace fs = std::filesystem;

inline ClientProfile profile(const std::string& id = "c1", ProblemCategory cat = ProblemCategory::StressAdaptation) {
    ClientProfile p;
    p.client_id = id;
    p.age = 31;
    p.occupation = "teacher";
    p.gender = "female";
    p.chief_complaint = "I keep thinking I am failing at work and it keeps me up at night";
    p.background = "Lives alone, moved cities last year for the job";
    p.problem_category = cat;
    return p;
}

inline const PromptLibrary& prompts() {
    static const PromptLibrary lib = PromptLibrary::load_default();
    return lib;
}

inline const RubricLibrary& rubrics() {
    static const RubricLibrary lib = RubricLibrary::load_default();
    return lib;
}

inline std::shared_ptr<Gateway> offline(std::uint64_t seed = 7) {
    return std::make_shared<Gateway>(std::make_shared<OfflineBackend>(seed));
}

inline const std::vector<BenchCase>& sample_cases() {
    static const auto cases = load_bench(fs::path(COUNSELFLOW_SOURCE_DIR) / "data" / "sample.cases.jsonl");
    return cases;
}

// One full offline session against a persona-mode simulated client.
struct MockSession {
    SessionRun run;
    std::shared_ptr<MemoryStore> memory;
};

inline MockSession mock_session(const BenchCase& bc, std::uint64_t seed = 7, EngineConfig config = {},
                                const std::string& session_id = "s1") {
    auto gw = offline(seed);
    LogicalClock clock;
    MockSession m;
    m.memory = std::make_shared<MemoryStore>(bc.profile.client_id);
    MemorySink sink;
    SimulatedClient client(bc, *gw, prompts());
    m.run = run_session({*gw, prompts(), m.memory, clock, &sink}, config, session_id, bc.profile, client);
    return m;
}

inline fs::path data_dir() { return fs::path(COUNSELFLOW_SOURCE_DIR) / "data"; }
inline fs::path golden_dir() { return fs::path(COUNSELFLOW_SOURCE_DIR) / "tests" / "golden"; }

// Fresh directory under the build tree, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = fs::temp_directory_path() / ("cf-" + tag + "-" + std::to_string(rng()));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

inline void write_text(const fs::path& p, const std::string& s) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << s;
}

inline std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace cft
