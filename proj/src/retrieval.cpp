#include "featret/retrieval.hpp"

#include "featret/error.hpp"
#include "featret/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <queue>

namespace featret {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(IndexMode m) { return m == IndexMode::exact ? "exact" : "approximate"; }

IndexMode parse_index_mode(std::string_view text) {
    if (text == "exact") return IndexMode::exact;
    if (text == "approximate") return IndexMode::approximate;
    throw ValidationError("unknown index mode '" + std::string(text) + "' (expected exact or approximate)");
}

void GraphParams::validate() const {
    if (max_links < 2) throw ValidationError("graph max_links must be at least 2");
    if (ef_construction < max_links) throw ValidationError("graph ef_construction must be at least max_links");
    if (ef_search == 0) throw ValidationError("graph ef_search must be positive");
}

void RetrievalPolicy::validate() const {
    if (k() < 3) throw ValidationError("retrieval policy must request at least 3 exemplars, got " + std::to_string(k()));
}

double squared_l2(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("squared_l2: length mismatch");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

FeatureIndex::FeatureIndex(std::vector<std::string> ids, std::array<Tensor2, 4> vectors, IndexMode mode,
                           GraphParams graph, std::string checkpoint_digest)
    : ids_(std::move(ids)), vectors_(std::move(vectors)), mode_(mode), graph_(graph),
      checkpoint_digest_(std::move(checkpoint_digest)) {
    if (ids_.empty()) throw ValidationError("cannot build an index over zero sentences");
    for (const auto& v : vectors_) {
        if (v.rows() != ids_.size() || v.cols() != vectors_[0].cols()) {
            throw ShapeError("index channel matrix has shape " + v.shape_str() + ", expected " +
                             std::to_string(ids_.size()) + "x" + std::to_string(vectors_[0].cols()));
        }
    }
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (!by_id_.emplace(ids_[i], i).second) throw ValidationError("duplicate index id '" + ids_[i] + "'");
    }
    if (mode_ == IndexMode::approximate) {
        graph_.validate();
        build_graph();
    }
}

std::optional<std::size_t> FeatureIndex::position(std::string_view id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
}

double FeatureIndex::distance(std::span<const double> query, Channel c, std::size_t row) const {
    return squared_l2(query, vectors(c).row_span(row));
}

namespace {

struct Candidate {
    double distance;
    const std::string* id;
    std::size_t row;
};

bool closer(const Candidate& a, const Candidate& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return *a.id < *b.id;
}

void check_query(std::span<const double> query, std::size_t dim) {
    if (query.size() != dim) {
        throw ShapeError("query has length " + std::to_string(query.size()) + ", index dimension is " +
                         std::to_string(dim));
    }
}

std::size_t available_rows(const std::vector<std::string>& ids, const std::set<std::string>& exclude) {
    std::size_t excluded = 0;
    for (const auto& id : ids) excluded += exclude.count(id);
    return ids.size() - excluded;
}

void check_k(std::size_t k, std::size_t available) {
    if (k > available) {
        throw ValidationError("requested " + std::to_string(k) + " neighbors but only " + std::to_string(available) +
                              " rows remain after exclusions");
    }
}

} // namespace

std::vector<Exemplar> FeatureIndex::nearest_exact(std::span<const double> query, Channel c, std::size_t k,
                                                  const std::set<std::string>& exclude) const {
    check_query(query, dim());
    check_k(k, available_rows(ids_, exclude));
    std::vector<Candidate> all;
    all.reserve(ids_.size());
    for (std::size_t r = 0; r < ids_.size(); ++r) {
        if (exclude.count(ids_[r])) continue;
        all.push_back({distance(query, c, r), &ids_[r], r});
    }
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), closer);
    std::vector<Exemplar> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back({*all[i].id, c, all[i].distance});
    return out;
}

std::vector<Exemplar> FeatureIndex::nearest(std::span<const double> query, Channel c, std::size_t k,
                                            const std::set<std::string>& exclude) const {
    if (mode_ == IndexMode::exact) return nearest_exact(query, c, k, exclude);
    check_query(query, dim());
    const std::size_t available = available_rows(ids_, exclude);
    check_k(k, available);
    const std::size_t want = k + (ids_.size() - available);
    const auto rows = graph_search(query, c, std::max(graph_.ef_search, want));
    std::vector<Candidate> found;
    for (std::size_t r : rows) {
        if (exclude.count(ids_[r])) continue;
        found.push_back({distance(query, c, r), &ids_[r], r});
    }
    // The beam can come back short when exclusions crowd it; exact search covers that case.
    if (found.size() < k) return nearest_exact(query, c, k, exclude);
    std::sort(found.begin(), found.end(), closer);
    std::vector<Exemplar> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back({*found[i].id, c, found[i].distance});
    return out;
}

std::vector<std::size_t> FeatureIndex::graph_search(std::span<const double> query, Channel c, std::size_t ef) const {
    const auto& links = links_[static_cast<std::size_t>(c)];
    const std::size_t n = links.size();
    if (n == 0) return {};
    auto cmp_far = [](const Candidate& a, const Candidate& b) { return closer(a, b); };    // max-heap on distance
    auto cmp_near = [](const Candidate& a, const Candidate& b) { return closer(b, a); };   // min-heap on distance
    std::priority_queue<Candidate, std::vector<Candidate>, decltype(cmp_near)> frontier(cmp_near);
    std::priority_queue<Candidate, std::vector<Candidate>, decltype(cmp_far)> best(cmp_far);
    std::vector<bool> seen(n, false);

    const Candidate entry{distance(query, c, 0), &ids_[0], 0};
    frontier.push(entry);
    best.push(entry);
    seen[0] = true;
    while (!frontier.empty()) {
        const Candidate cur = frontier.top();
        frontier.pop();
        if (best.size() >= ef && closer(best.top(), cur)) break;
        for (std::size_t nb : links[cur.row]) {
            if (seen[nb]) continue;
            seen[nb] = true;
            const Candidate cand{distance(query, c, nb), &ids_[nb], nb};
            if (best.size() < ef || closer(cand, best.top())) {
                frontier.push(cand);
                best.push(cand);
                if (best.size() > ef) best.pop();
            }
        }
    }
    std::vector<std::size_t> rows;
    while (!best.empty()) {
        rows.push_back(best.top().row);
        best.pop();
    }
    std::reverse(rows.begin(), rows.end());
    return rows;
}

void FeatureIndex::build_graph() {
    const std::size_t n = ids_.size();
    const std::size_t max_degree = 2 * graph_.max_links;
    for (Channel c : kChannels) {
        auto& links = links_[static_cast<std::size_t>(c)];
        links.assign(n, {});
        const Tensor2& v = vectors(c);
        auto prune = [&](std::size_t node) {
            auto& nb = links[node];
            if (nb.size() <= max_degree) return;
            std::sort(nb.begin(), nb.end(), [&](std::size_t a, std::size_t b) {
                return closer({squared_l2(v.row_span(node), v.row_span(a)), &ids_[a], a},
                              {squared_l2(v.row_span(node), v.row_span(b)), &ids_[b], b});
            });
            nb.resize(max_degree);
        };
        for (std::size_t i = 1; i < n; ++i) {
            // Search only among rows inserted so far: links of later rows are still empty,
            // and the entry point is row 0.
            auto found = graph_search(v.row_span(i), c, graph_.ef_construction);
            found.erase(std::remove_if(found.begin(), found.end(), [i](std::size_t r) { return r >= i; }),
                        found.end());
            if (found.size() > graph_.max_links) found.resize(graph_.max_links);
            for (std::size_t r : found) {
                links[i].push_back(r);
                links[r].push_back(i);
                prune(r);
            }
        }
    }
}

FeatureIndex build_index(const Corpus& train, const Checkpoint& checkpoint, IndexMode mode, GraphParams graph) {
    if (train.empty()) throw ValidationError("cannot build an index over an empty corpus");
    if (!checkpoint.registry_fingerprint.empty() && checkpoint.registry_fingerprint != train.registry().fingerprint()) {
        throw ValidationError("corpus relation registry does not match the checkpoint's registry fingerprint");
    }
    const std::size_t d = checkpoint.model.config.embed_dim;
    std::array<Tensor2, 4> vectors;
    for (auto& v : vectors) v = Tensor2(train.size(), d);
    std::vector<std::string> ids;
    ids.reserve(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto& rec = train.record(i);
        ids.push_back(rec.id);
        const auto enc = encode_sentence(rec, checkpoint.model);
        for (Channel c : kChannels) std::copy(enc[c].begin(), enc[c].end(), vectors[static_cast<std::size_t>(c)].row_span(i).begin());
    }
    return FeatureIndex(std::move(ids), std::move(vectors), mode, graph, checkpoint_digest(checkpoint));
}

ExemplarSet retrieve_exemplars(const FeatureIndex& index, const FeatureEmbeddings& query, const std::string& query_id,
                               const RetrievalPolicy& policy) {
    policy.validate();
    std::set<std::string> taken;
    if (!query_id.empty() && index.position(query_id)) taken.insert(query_id);
    const std::size_t available = index.size() - taken.size();
    if (available < policy.k()) {
        throw ValidationError("index holds " + std::to_string(available) + " candidates after exclusions but " +
                              std::to_string(policy.k()) + " exemplars are required");
    }
    ExemplarSet out;
    for (Channel c : kFillOrder) {
        const std::size_t quota = policy.count(c);
        if (quota == 0) continue;
        for (auto& ex : index.nearest(query[c], c, quota, taken)) {
            taken.insert(ex.record_id);
            out.push_back(std::move(ex));
        }
    }
    if (!policy.keep_channel_order) {
        std::stable_sort(out.begin(), out.end(), [](const Exemplar& a, const Exemplar& b) {
            if (a.distance != b.distance) return a.distance < b.distance;
            return a.record_id < b.record_id;
        });
    }
    return out;
}

ExemplarSet retrieve_exemplars(const FeatureIndex& index, const SentenceRecord& query, const EncoderModel& model,
                               const RetrievalPolicy& policy) {
    return retrieve_exemplars(index, encode_sentence(query, model), query.id, policy);
}

HitRateReport retrieval_hit_rate(const FeatureIndex& index, const Corpus& train, const Corpus& eval,
                                 const EncoderModel& model, const HeuristicConfig& cfg, const RetrievalPolicy& policy) {
    cfg.validate();
    if (train.registry().lineage() != eval.registry().lineage()) {
        throw ValidationError("evaluation corpus must be loaded against the training corpus registry");
    }
    HitRateReport report;
    for (std::size_t q = 0; q < eval.size(); ++q) {
        const auto& rec = eval.record(q);
        const auto exemplars = retrieve_exemplars(index, rec, model, policy);
        HitCounts& dom = report.per_domain[rec.domain];
        ++dom.queries;
        ++report.overall.queries;
        for (const auto& ex : exemplars) {
            if (ex.channel == Channel::avg) continue;
            const auto row = train.index_of(ex.record_id);
            if (!row) throw ValidationError("index id '" + ex.record_id + "' is not in the training corpus");
            const auto bits = label_pair(similarity_profile(view_of(eval, q), view_of(train, *row), cfg), cfg);
            const auto f = static_cast<std::size_t>(ex.channel);
            for (HitCounts* h : {&dom, &report.overall}) {
                ++h->judged[f];
                h->hits[f] += bits[f];
            }
        }
    }
    return report;
}

// Index container: 8-byte magic, u32 version, u64 manifest length, manifest JSON,
// then the four channel matrices (lig, dom, sen, avg) as little-endian f64.
namespace {
constexpr std::string_view kIndexMagic{"FTRINDX\n", 8};
} // namespace

std::string serialize_index(const FeatureIndex& index) {
    ordered_json manifest;
    manifest["mode"] = std::string(to_string(index.mode()));
    manifest["graph"] = {{"max_links", index.graph_params().max_links},
                         {"ef_construction", index.graph_params().ef_construction},
                         {"ef_search", index.graph_params().ef_search}};
    manifest["checkpoint_digest"] = index.checkpoint_digest();
    manifest["rows"] = index.size();
    manifest["dim"] = index.dim();
    manifest["ids"] = index.ids();
    const std::string text = manifest.dump();

    std::string out(kIndexMagic);
    put_u32(out, kIndexVersion);
    put_u64(out, text.size());
    out += text;
    for (Channel c : kChannels)
        for (double v : index.vectors(c).data()) put_f64(out, v);
    return out;
}

FeatureIndex parse_index(std::string_view bytes) {
    ByteReader in(bytes, "index file");
    if (in.take(kIndexMagic.size()) != kIndexMagic) throw ValidationError("not an index file (bad magic)");
    const auto version = in.u32();
    if (version != kIndexVersion) throw ValidationError("unsupported index version " + std::to_string(version));
    json manifest;
    try {
        manifest = json::parse(in.take(static_cast<std::size_t>(in.u64())));
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("index manifest: ") + e.what());
    }
    try {
        const auto mode = parse_index_mode(manifest.at("mode").get<std::string>());
        GraphParams graph;
        graph.max_links = manifest.at("graph").at("max_links").get<std::size_t>();
        graph.ef_construction = manifest.at("graph").at("ef_construction").get<std::size_t>();
        graph.ef_search = manifest.at("graph").at("ef_search").get<std::size_t>();
        const auto rows = manifest.at("rows").get<std::size_t>();
        const auto dim = manifest.at("dim").get<std::size_t>();
        auto ids = manifest.at("ids").get<std::vector<std::string>>();
        if (ids.size() != rows) throw ValidationError("index id list length does not match row count");
        std::array<Tensor2, 4> vectors;
        for (auto& v : vectors) {
            v = Tensor2(rows, dim);
            for (double& x : v.data()) x = in.f64();
        }
        if (!in.at_end()) throw ValidationError("index file has trailing bytes");
        return FeatureIndex(std::move(ids), std::move(vectors), mode, graph,
                            manifest.at("checkpoint_digest").get<std::string>());
    } catch (const json::exception& e) {
        throw ValidationError(std::string("index manifest: ") + e.what());
    }
}

void save_index(const FeatureIndex& index, const std::filesystem::path& path) {
    write_text_file(path, serialize_index(index));
}

FeatureIndex load_index(const std::filesystem::path& path) { return parse_index(read_text_file(path)); }

} // namespace featret
