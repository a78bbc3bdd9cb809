#include "counselflow/memory.hpp"

#include <algorithm>
#include <mutex>

#include "counselflow/errors.hpp"

namespace counselflow {
namespace {

template <typename T>
void sort_unique(std::vector<T>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
}

}  // namespace

bool MemoryUnit::has_topic(Topic t) const {
    return std::find(topics.begin(), topics.end(), t) != topics.end();
}

std::string embedding_text(const std::string& info, const std::vector<Topic>& topics,
                           const std::vector<std::string>& keywords) {
    std::vector<std::string> tags;
    tags.reserve(topics.size());
    for (auto t : topics) tags.emplace_back(to_string(t));
    std::sort(tags.begin(), tags.end());
    std::vector<std::string> keys = keywords;
    std::sort(keys.begin(), keys.end());

    std::string out = info;
    for (const auto& t : tags) out += " " + t;
    for (const auto& k : keys) out += " " + k;
    return out;
}

std::string embedding_text(const MemoryUnit& u) {
    return embedding_text(u.structured_info, u.topics, u.keywords);
}

std::uint32_t topic_bit(Topic t) { return 1u << static_cast<unsigned>(t); }

std::uint32_t topic_mask(const std::vector<Topic>& topics) {
    std::uint32_t m = 0;
    for (auto t : topics) m |= topic_bit(t);
    return m;
}

void to_json(Json& j, const MemoryUnit& u) {
    j = Json::object();
    j["id"] = u.id;
    j["client_id"] = u.client_id;
    j["session_id"] = u.session_id;
    j["structured_info"] = u.structured_info;
    j["topics"] = u.topics;
    j["keywords"] = u.keywords;
    j["embedding"] = u.embedding.values;
    j["source_turns"] = u.source_turns;
    j["created_at"] = u.created_at;
    j["artifact_kind"] = u.artifact_kind;
}

void from_json(const Json& j, MemoryUnit& u) {
    try {
        u.id = j.at("id").get<std::uint64_t>();
        u.client_id = j.at("client_id").get<std::string>();
        u.session_id = j.value("session_id", std::string{});
        u.structured_info = j.at("structured_info").get<std::string>();
        u.topics = j.at("topics").get<std::vector<Topic>>();
        u.keywords = j.value("keywords", std::vector<std::string>{});
        u.embedding.values = j.at("embedding").get<std::vector<double>>();
        u.source_turns = j.value("source_turns", std::vector<int>{});
        u.created_at = j.value("created_at", Instant{0});
        u.artifact_kind = j.at("artifact_kind").get<ArtifactKind>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed memory unit: ") + e.what());
    }
    if (u.topics.empty()) throw ValidationError("memory unit " + std::to_string(u.id) + " has no topics");
}

MemoryStore::MemoryStore(std::string client_id) : client_id_(std::move(client_id)) {}

std::shared_ptr<MemoryStore> MemoryStore::open(std::string client_id,
                                               const std::filesystem::path& journal,
                                               FaultInjector* faults) {
    auto store = std::make_shared<MemoryStore>(std::move(client_id));
    auto read = read_lines(journal);
    for (std::size_t i = 0; i < read.lines.size(); ++i) {
        Json doc = Json::parse(read.lines[i], nullptr, false);
        if (doc.is_discarded()) {
            throw ValidationError(journal.string() + ":" + std::to_string(i + 1) + ": not a document");
        }
        store->insert(doc.get<MemoryUnit>());
    }
    if (read.torn_tail) rewrite_lines(journal, read.lines);
    store->journal_ = std::make_unique<AppendFile>(journal, faults);
    return store;
}

void MemoryStore::index_locked(MemoryUnit unit) {
    matrix_.append(unit.id, topic_mask(unit.topics), unit.embedding.values);
    next_id_ = unit.id + 1;
    units_.push_back(std::move(unit));
}

MemoryUnit MemoryStore::add(MemoryDraft draft, Gateway& gateway, Instant created_at) {
    sort_unique(draft.topics);
    if (draft.topics.empty()) throw ValidationError("memory unit needs at least one topic");
    for (auto& k : draft.keywords) {
        auto b = k.find_first_not_of(' ');
        auto e = k.find_last_not_of(' ');
        k = b == std::string::npos ? std::string{} : k.substr(b, e - b + 1);
    }
    draft.keywords.erase(std::remove(draft.keywords.begin(), draft.keywords.end(), std::string{}),
                         draft.keywords.end());
    sort_unique(draft.keywords);
    if (draft.structured_info.empty()) throw ValidationError("memory unit needs structured info");

    MemoryUnit unit;
    unit.client_id = client_id_;
    unit.session_id = std::move(draft.session_id);
    unit.structured_info = std::move(draft.structured_info);
    unit.topics = std::move(draft.topics);
    unit.keywords = std::move(draft.keywords);
    unit.source_turns = std::move(draft.source_turns);
    unit.artifact_kind = draft.artifact_kind;
    unit.created_at = created_at;
    unit.embedding = gateway.embed(embedding_text(unit));

    std::unique_lock lock(mutex_);
    unit.id = next_id_;
    if (journal_) journal_->append_line(Json(unit).dump());
    index_locked(unit);
    return unit;
}

void MemoryStore::insert(MemoryUnit unit) {
    std::unique_lock lock(mutex_);
    if (unit.client_id != client_id_) {
        throw ValidationError("unit " + std::to_string(unit.id) + " belongs to another client");
    }
    if (!units_.empty() && unit.id <= units_.back().id) {
        throw ValidationError("memory ids must be strictly increasing (saw " +
                              std::to_string(unit.id) + ")");
    }
    if (journal_) journal_->append_line(Json(unit).dump());
    index_locked(std::move(unit));
}

RetrievalResult MemoryStore::retrieve(const RetrievalQuery& q, Gateway& gateway) const {
    if (q.k < 1) throw PreconditionError("retrieval k must be >= 1");
    return retrieve_embedded(gateway.embed(q.text), q.topic, q.k);
}

RetrievalResult MemoryStore::retrieve_embedded(const EmbeddingVector& query, Topic topic,
                                               std::size_t k) const {
    std::shared_lock lock(mutex_);
    RetrievalResult out;
    if (units_.empty()) return out;
    for (const auto& c : kernels::topk_parallel(matrix_, query.values, topic_bit(topic), k)) {
        out.hits.push_back({units_[c.row], c.score});
    }
    return out;
}

std::vector<MemoryUnit> MemoryStore::units() const {
    std::shared_lock lock(mutex_);
    return units_;
}

std::vector<MemoryUnit> MemoryStore::units_for(const std::string& session_id, ArtifactKind kind) const {
    std::shared_lock lock(mutex_);
    std::vector<MemoryUnit> out;
    for (const auto& u : units_) {
        if (u.session_id == session_id && u.artifact_kind == kind) out.push_back(u);
    }
    return out;
}

std::optional<MemoryUnit> MemoryStore::find(std::uint64_t id) const {
    std::shared_lock lock(mutex_);
    auto it = std::lower_bound(units_.begin(), units_.end(), id,
                               [](const MemoryUnit& u, std::uint64_t v) { return u.id < v; });
    if (it == units_.end() || it->id != id) return std::nullopt;
    return *it;
}

bool MemoryStore::contains(std::uint64_t id) const { return find(id).has_value(); }

std::uint64_t MemoryStore::high_water() const {
    std::shared_lock lock(mutex_);
    return units_.empty() ? 0 : units_.back().id;
}

std::size_t MemoryStore::size() const {
    std::shared_lock lock(mutex_);
    return units_.size();
}

std::size_t MemoryStore::discard_after(const std::string& session_id, std::uint64_t high_water) {
    std::unique_lock lock(mutex_);
    std::vector<MemoryUnit> kept;
    for (auto& u : units_) {
        if (u.session_id == session_id && u.id > high_water) continue;
        kept.push_back(std::move(u));
    }
    const std::size_t dropped = units_.size() - kept.size();
    units_.clear();
    matrix_.clear();
    next_id_ = 1;
    for (auto& u : kept) index_locked(std::move(u));
    if (dropped > 0 && journal_) {
        std::vector<std::string> lines;
        for (const auto& u : units_) lines.push_back(Json(u).dump());
        rewrite_lines(journal_->path(), lines);
    }
    return dropped;
}

MemoryRegistry::MemoryRegistry(std::filesystem::path root, FaultInjector* faults)
    : root_(std::move(root)), faults_(faults) {}

std::filesystem::path MemoryRegistry::journal_path(const std::string& client_id) const {
    if (!root_) return {};
    return *root_ / (safe_file_stem(client_id) + ".jsonl");
}

std::shared_ptr<MemoryStore> MemoryRegistry::store_for(const std::string& client_id) {
    std::lock_guard lock(mutex_);
    auto it = stores_.find(client_id);
    if (it != stores_.end()) return it->second;
    auto store = root_ ? MemoryStore::open(client_id, journal_path(client_id), faults_)
                       : std::make_shared<MemoryStore>(client_id);
    stores_.emplace(client_id, store);
    return store;
}

std::string safe_file_stem(const std::string& id) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned char c : id) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.') {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back('%');
            out.push_back(kHex[c >> 4]);
            out.push_back(kHex[c & 15]);
        }
    }
    if (out.empty() || out == "." || out == "..") out = "%" + out;
    return out;
}

}  // namespace counselflow
