#pragma once

#include "featret/corpus.hpp"
#include "featret/encoder.hpp"
#include "featret/heuristics.hpp"
#include "featret/tensor.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

// Per-channel nearest-neighbor search over training-set sentence embeddings.
namespace featret {

enum class IndexMode { exact, approximate };
std::string_view to_string(IndexMode m);
IndexMode parse_index_mode(std::string_view text);

// Construction and search parameters of the navigable small-world graph.
struct GraphParams {
    std::size_t max_links = 12;
    std::size_t ef_construction = 48;
    std::size_t ef_search = 48;

    void validate() const;
};

struct Exemplar {
    std::string record_id;
    Channel channel = Channel::avg;
    double distance = 0.0;

    friend bool operator==(const Exemplar&, const Exemplar&) = default;
};

using ExemplarSet = std::vector<Exemplar>;

struct RetrievalPolicy {
    // Indexed by Channel: lig, dom, sen, avg.
    std::array<std::size_t, 4> counts{1, 1, 1, 2};
    // Keep the fill order (Avg, Lig, Dom, Sen) instead of re-sorting by distance.
    bool keep_channel_order = false;

    std::size_t k() const { return counts[0] + counts[1] + counts[2] + counts[3]; }
    std::size_t count(Channel c) const { return counts[static_cast<std::size_t>(c)]; }
    void validate() const;
};

inline constexpr std::array<Channel, 4> kFillOrder{Channel::avg, Channel::lig, Channel::dom, Channel::sen};

class FeatureIndex {
public:
    FeatureIndex() = default;
    FeatureIndex(std::vector<std::string> ids, std::array<Tensor2, 4> vectors, IndexMode mode,
                 GraphParams graph = {}, std::string checkpoint_digest = {});

    std::size_t size() const noexcept { return ids_.size(); }
    std::size_t dim() const noexcept { return vectors_[0].cols(); }
    IndexMode mode() const noexcept { return mode_; }
    const GraphParams& graph_params() const noexcept { return graph_; }
    const std::vector<std::string>& ids() const noexcept { return ids_; }
    const Tensor2& vectors(Channel c) const { return vectors_[static_cast<std::size_t>(c)]; }
    const std::string& checkpoint_digest() const noexcept { return checkpoint_digest_; }
    std::optional<std::size_t> position(std::string_view id) const;

    // k closest rows by squared L2, ascending, ties by id. Rows whose id is in exclude are
    // skipped. Throws when fewer than k rows remain.
    std::vector<Exemplar> nearest(std::span<const double> query, Channel c, std::size_t k,
                                  const std::set<std::string>& exclude = {}) const;
    std::vector<Exemplar> nearest_exact(std::span<const double> query, Channel c, std::size_t k,
                                        const std::set<std::string>& exclude = {}) const;

    friend bool operator==(const FeatureIndex& a, const FeatureIndex& b) {
        return a.ids_ == b.ids_ && a.vectors_ == b.vectors_ && a.mode_ == b.mode_ &&
               a.checkpoint_digest_ == b.checkpoint_digest_;
    }

private:
    void build_graph();
    std::vector<std::size_t> graph_search(std::span<const double> query, Channel c, std::size_t ef) const;
    double distance(std::span<const double> query, Channel c, std::size_t row) const;

    std::vector<std::string> ids_;
    std::array<Tensor2, 4> vectors_;
    IndexMode mode_ = IndexMode::exact;
    GraphParams graph_;
    std::string checkpoint_digest_;
    std::map<std::string, std::size_t, std::less<>> by_id_;
    // Per channel, per row: neighbor rows.
    std::array<std::vector<std::vector<std::size_t>>, 4> links_;
};

double squared_l2(std::span<const double> a, std::span<const double> b);

// Encodes every training sentence once with the checkpoint's encoder.
FeatureIndex build_index(const Corpus& train, const Checkpoint& checkpoint, IndexMode mode = IndexMode::exact,
                         GraphParams graph = {});

// Fills quotas in Avg, Lig, Dom, Sen order; a candidate already chosen, or equal to
// query_id, is passed over for the channel's next-nearest row.
ExemplarSet retrieve_exemplars(const FeatureIndex& index, const FeatureEmbeddings& query, const std::string& query_id,
                               const RetrievalPolicy& policy = {});
ExemplarSet retrieve_exemplars(const FeatureIndex& index, const SentenceRecord& query, const EncoderModel& model,
                               const RetrievalPolicy& policy = {});

struct HitCounts {
    std::size_t queries = 0;
    std::array<std::size_t, 3> judged{};  // exemplars judged per feature
    std::array<std::size_t, 3> hits{};

    double rate(Feature f) const {
        const auto i = static_cast<std::size_t>(f);
        return judged[i] ? static_cast<double>(hits[i]) / static_cast<double>(judged[i]) : 0.0;
    }
};

struct HitRateReport {
    std::map<std::string, HitCounts> per_domain;
    HitCounts overall;
};

// A Lig/Dom/Sen exemplar hits when the heuristic label of (query, exemplar) has that
// feature's bit set. train must be the indexed corpus and share eval's registry lineage.
HitRateReport retrieval_hit_rate(const FeatureIndex& index, const Corpus& train, const Corpus& eval,
                                 const EncoderModel& model, const HeuristicConfig& cfg,
                                 const RetrievalPolicy& policy = {});

inline constexpr std::uint32_t kIndexVersion = 1;
std::string serialize_index(const FeatureIndex& index);
FeatureIndex parse_index(std::string_view bytes);
void save_index(const FeatureIndex& index, const std::filesystem::path& path);
FeatureIndex load_index(const std::filesystem::path& path);

} // namespace featret
