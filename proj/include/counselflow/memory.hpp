#pragma once

// Atomic memory units and the per-client store they live in. Units are
// appended to a journal (one canonical document per line) and indexed in a
// packed matrix for topic-filtered top-k cosine retrieval.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "counselflow/domain.hpp"
#include "counselflow/gateway.hpp"
#include "counselflow/retrieval_kernels.hpp"
#include "counselflow/storage.hpp"

namespace counselflow {

inline constexpr std::size_t kDefaultRetrievalK = 5;

struct MemoryUnit {
    std::uint64_t id = 0;
    std::string client_id;
    std::string session_id;
    std::string structured_info;
    std::vector<Topic> topics;          // sorted, unique, nonempty
    std::vector<std::string> keywords;  // sorted, unique
    EmbeddingVector embedding;
    std::vector<int> source_turns;
    Instant created_at = 0;
    ArtifactKind artifact_kind = ArtifactKind::CaseForm;

    bool has_topic(Topic t) const;
    bool operator==(const MemoryUnit&) const = default;
};

// Text the encoder sees: structured info, then sorted topic tags, then sorted
// keywords, joined by single spaces.
std::string embedding_text(const std::string& info, const std::vector<Topic>& topics,
                           const std::vector<std::string>& keywords);
std::string embedding_text(const MemoryUnit& u);

std::uint32_t topic_bit(Topic t);
std::uint32_t topic_mask(const std::vector<Topic>& topics);

void to_json(Json& j, const MemoryUnit& u);
void from_json(const Json& j, MemoryUnit& u);

struct RetrievalQuery {
    std::string text;
    Topic topic = Topic::Intervention;
    std::size_t k = kDefaultRetrievalK;
};

struct RetrievalHit {
    MemoryUnit unit;
    double score = 0.0;
};

struct RetrievalResult {
    std::vector<RetrievalHit> hits;
};

// Everything about a unit except what the store assigns (id, embedding,
// timestamp).
struct MemoryDraft {
    std::string session_id;
    std::string structured_info;
    std::vector<Topic> topics;
    std::vector<std::string> keywords;
    std::vector<int> source_turns;
    ArtifactKind artifact_kind = ArtifactKind::CaseForm;
};

class MemoryStore {
public:
    explicit MemoryStore(std::string client_id);

    // Loads the journal at `journal` (tolerating a torn final line, which is
    // cut off) and appends new units to it.
    static std::shared_ptr<MemoryStore> open(std::string client_id,
                                             const std::filesystem::path& journal,
                                             FaultInjector* faults = nullptr);

    // Normalizes topics/keywords, embeds, assigns the next id and appends.
    MemoryUnit add(MemoryDraft draft, Gateway& gateway, Instant created_at);
    // Inserts a fully formed unit (id must exceed every stored id).
    void insert(MemoryUnit unit);

    RetrievalResult retrieve(const RetrievalQuery& q, Gateway& gateway) const;
    RetrievalResult retrieve_embedded(const EmbeddingVector& query, Topic topic, std::size_t k) const;

    std::vector<MemoryUnit> units() const;
    std::vector<MemoryUnit> units_for(const std::string& session_id, ArtifactKind kind) const;
    std::optional<MemoryUnit> find(std::uint64_t id) const;
    bool contains(std::uint64_t id) const;
    std::uint64_t high_water() const;
    std::size_t size() const;
    const std::string& client_id() const { return client_id_; }

    // Drops this session's units newer than `high_water` (crash recovery) and
    // rewrites the journal accordingly.
    std::size_t discard_after(const std::string& session_id, std::uint64_t high_water);

private:
    void index_locked(MemoryUnit unit);

    std::string client_id_;
    mutable std::shared_mutex mutex_;
    std::vector<MemoryUnit> units_;
    kernels::UnitMatrix matrix_;
    std::uint64_t next_id_ = 1;
    std::unique_ptr<AppendFile> journal_;
};

// One store per client, optionally journaled under a root directory.
class MemoryRegistry {
public:
    MemoryRegistry() = default;
    explicit MemoryRegistry(std::filesystem::path root, FaultInjector* faults = nullptr);

    std::shared_ptr<MemoryStore> store_for(const std::string& client_id);
    std::filesystem::path journal_path(const std::string& client_id) const;

private:
    std::optional<std::filesystem::path> root_;
    FaultInjector* faults_ = nullptr;
    std::mutex mutex_;
    std::map<std::string, std::shared_ptr<MemoryStore>> stores_;
};

// File-name-safe rendering of an identifier.
std::string safe_file_stem(const std::string& id);

}  // namespace counselflow
