// Serial vs OpenMP top-k retrieval over synthetic stores.
//   retrieval_bench [--rows 1000,10000,100000] [--dim 256] [--queries 50] [--k 5] [--json]

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <random>
#include <sstream>

#include "counselflow/retrieval_kernels.hpp"

using namespace counselflow::kernels;

namespace {

UnitMatrix synthetic(std::size_t rows, std::size_t dim, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_int_distribution<std::uint32_t> topic(0, 8);
    UnitMatrix m;
    std::vector<double> v(dim);
    for (std::size_t r = 0; r < rows; ++r) {
        for (auto& x : v) x = g(rng);
        m.append(r + 1, (1u << topic(rng)) | (1u << topic(rng)), v);
    }
    return m;
}

template <class F>
double time_ms(F&& f) {
    auto t0 = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"retrieval top-k benchmark"};
    std::vector<std::size_t> rows{1000, 10000, 100000};
    std::size_t dim = 256, queries = 50, k = 5;
    std::uint64_t seed = 42;
    bool json = false;
    app.add_option("--rows", rows)->delimiter(',');
    app.add_option("--dim", dim);
    app.add_option("--queries", queries);
    app.add_option("--k", k);
    app.add_option("--seed", seed);
    app.add_flag("--json", json);
    CLI11_PARSE(app, argc, argv);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_int_distribution<int> topic(0, 8);
    nlohmann::json out = nlohmann::json::array();
    bool all_match = true;
    if (!json) std::printf("%10s %5s %8s %12s %12s %8s %6s\n", "rows", "dim", "queries", "serial_ms", "parallel_ms", "speedup", "match");
    for (auto n : rows) {
        auto m = synthetic(n, dim, rng);
        std::vector<std::vector<double>> qs(queries, std::vector<double>(dim));
        std::vector<std::uint32_t> masks(queries);
        for (std::size_t i = 0; i < queries; ++i) {
            for (auto& x : qs[i]) x = g(rng);
            masks[i] = 1u << topic(rng);
        }
        std::vector<std::vector<Candidate>> a(queries), b(queries);
        double ts = time_ms([&] {
            for (std::size_t i = 0; i < queries; ++i) a[i] = topk_serial(m, qs[i], masks[i], k);
        });
        double tp = time_ms([&] {
            for (std::size_t i = 0; i < queries; ++i) b[i] = topk_parallel(m, qs[i], masks[i], k);
        });
        const bool match = a == b;
        all_match = all_match && match;
        const double speedup = tp > 0 ? ts / tp : 0.0;
        out.push_back({{"rows", n}, {"dim", dim}, {"queries", queries}, {"k", k}, {"threads", max_threads()},
                       {"serial_ms", ts}, {"parallel_ms", tp}, {"speedup", speedup}, {"match", match}});
        if (!json)
            std::printf("%10zu %5zu %8zu %12.2f %12.2f %8.2f %6s\n", n, dim, queries, ts, tp, speedup,
                        match ? "yes" : "NO");
    }
    if (json) {
        std::cout << nlohmann::json{{"threads", max_threads()}, {"runs", out}}.dump(2) << "\n";
    } else {
        std::printf("threads: %d\n", max_threads());
    }
    return all_match ? 0 : 1;
}
