#include "counselflow/retrieval_kernels.hpp"

#include <algorithm>
#include <cmath>

#include "counselflow/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace counselflow::kernels {
namespace {

// Keeps `best` sorted under ranks_before with at most k entries.
void offer(std::vector<Candidate>& best, const Candidate& c, std::size_t k) {
    if (best.size() == k && !ranks_before(c, best.back())) return;
    auto pos = std::upper_bound(best.begin(), best.end(), c, ranks_before);
    best.insert(pos, c);
    if (best.size() > k) best.pop_back();
}

void check_query(const UnitMatrix& m, std::span<const double> query) {
    if (m.rows() != 0 && query.size() != m.dimension) {
        throw PreconditionError("query dimension " + std::to_string(query.size()) +
                                " differs from store dimension " + std::to_string(m.dimension));
    }
    // Rows are checked on append; the query is checked here so the parallel
    // region never throws.
    if (std::all_of(query.begin(), query.end(), [](double v) { return v == 0.0; })) {
        throw PreconditionError("cosine: zero-norm query");
    }
}

}  // namespace

void UnitMatrix::append(std::uint64_t id, std::uint32_t topic_mask, std::span<const double> embedding) {
    if (rows() == 0) {
        dimension = embedding.size();
    } else if (embedding.size() != dimension) {
        throw PreconditionError("embedding dimension mismatch in unit matrix");
    }
    if (std::all_of(embedding.begin(), embedding.end(), [](double v) { return v == 0.0; })) {
        throw PreconditionError("zero-norm embedding in unit matrix");
    }
    embeddings.insert(embeddings.end(), embedding.begin(), embedding.end());
    ids.push_back(id);
    topic_masks.push_back(topic_mask);
}

void UnitMatrix::clear() {
    dimension = 0;
    embeddings.clear();
    ids.clear();
    topic_masks.clear();
}

double cosine_row(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw PreconditionError("cosine: zero-norm input");
    double c = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::clamp(c, -1.0, 1.0);
}

std::vector<Candidate> topk_serial(const UnitMatrix& m, std::span<const double> query,
                                   std::uint32_t topic_mask, std::size_t k) {
    check_query(m, query);
    std::vector<Candidate> best;
    if (k == 0) return best;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        if ((m.topic_masks[r] & topic_mask) == 0) continue;
        offer(best, {m.ids[r], cosine_row(query, m.row(r)), r}, k);
    }
    return best;
}

std::vector<Candidate> topk_parallel(const UnitMatrix& m, std::span<const double> query,
                                     std::uint32_t topic_mask, std::size_t k) {
    check_query(m, query);
    std::vector<Candidate> merged;
    if (k == 0 || m.rows() == 0) return merged;
    const auto rows = static_cast<long>(m.rows());
#pragma omp parallel
    {
        std::vector<Candidate> local;
#pragma omp for schedule(static) nowait
        for (long r = 0; r < rows; ++r) {
            const auto row = static_cast<std::size_t>(r);
            if ((m.topic_masks[row] & topic_mask) == 0) continue;
            offer(local, {m.ids[row], cosine_row(query, m.row(row)), row}, k);
        }
#pragma omp critical(counselflow_topk_merge)
        merged.insert(merged.end(), local.begin(), local.end());
    }
    std::sort(merged.begin(), merged.end(), ranks_before);
    if (merged.size() > k) merged.resize(k);
    return merged;
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace counselflow::kernels
