#pragma once

// Topic-filtered top-k cosine scan over a packed embedding matrix. The
// OpenMP kernel is what the memory store runs; the serial kernel is kept as
// the reference it is tested and benchmarked against.

#include <cstdint>
#include <span>
#include <vector>

namespace counselflow::kernels {

struct Candidate {
    std::uint64_t id = 0;
    double score = 0.0;
    std::size_t row = 0;

    bool operator==(const Candidate&) const = default;
};

// Higher score first; equal scores go to the smaller id.
inline bool ranks_before(const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
}

struct UnitMatrix {
    std::size_t dimension = 0;
    std::vector<double> embeddings;  // row-major
    std::vector<std::uint64_t> ids;
    std::vector<std::uint32_t> topic_masks;

    std::size_t rows() const { return ids.size(); }
    std::span<const double> row(std::size_t r) const {
        return {embeddings.data() + r * dimension, dimension};
    }
    void append(std::uint64_t id, std::uint32_t topic_mask, std::span<const double> embedding);
    void clear();
};

// dot/(|a||b|) accumulated in index order, clamped to [-1,1].
double cosine_row(std::span<const double> a, std::span<const double> b);

// Rows whose mask intersects `topic_mask`, ranked by cosine to `query`,
// first `k` under ranks_before.
std::vector<Candidate> topk_serial(const UnitMatrix& m, std::span<const double> query,
                                   std::uint32_t topic_mask, std::size_t k);
std::vector<Candidate> topk_parallel(const UnitMatrix& m, std::span<const double> query,
                                     std::uint32_t topic_mask, std::size_t k);

int max_threads();

}  // namespace counselflow::kernels
