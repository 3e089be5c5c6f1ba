#include "featret/heuristics.hpp"

#include "featret/error.hpp"
#include "featret/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <thread>
#include <unordered_set>

namespace featret {

std::string_view to_string(Feature f) {
    switch (f) {
    case Feature::lig: return "lig";
    case Feature::dom: return "dom";
    case Feature::sen: return "sen";
    }
    return "lig";
}

double HeuristicConfig::theta(Feature f) const {
    switch (f) {
    case Feature::lig: return theta_lig;
    case Feature::dom: return theta_dom;
    case Feature::sen: return theta_sen;
    }
    return theta_lig;
}

void HeuristicConfig::validate() const {
    if (!(sigma > 0)) throw ValidationError("sigma must be positive");
    for (Feature f : kFeatures) {
        const double t = theta(f);
        if (!(t >= 0.0 && t <= 1.0)) {
            throw ValidationError("theta_" + std::string(to_string(f)) + " must lie in [0, 1]");
        }
    }
}

double SimilarityProfile::operator[](Feature f) const {
    switch (f) {
    case Feature::lig: return lig;
    case Feature::dom: return dom;
    case Feature::sen: return sen;
    }
    return lig;
}

SentenceView view_of(const Corpus& corpus, std::size_t index) {
    return {&corpus.record(index), &corpus.matrices(index), corpus.centers(index)};
}

std::vector<double> gaussian_weights(std::size_t k, std::size_t n, double sigma) {
    if (k < 1 || k > n) {
        throw Error("gaussian_weights: center " + std::to_string(k) + " outside 1.." + std::to_string(n));
    }
    if (!(sigma > 0)) throw Error("gaussian_weights: sigma must be positive");
    std::vector<double> w(n);
    const double denom = 2.0 * sigma * sigma;
    for (std::size_t j = 1; j <= n; ++j) {
        const double d = static_cast<double>(j) - static_cast<double>(k);
        w[j - 1] = std::exp(-(d * d) / denom);
    }
    return w;
}

double weighted_hamming(const RelationMatrices& a, std::size_t center_a, const RelationMatrices& b,
                        std::size_t center_b, double sigma) {
    if (a.registry_lineage != b.registry_lineage) {
        throw Error("weighted_hamming: relation matrices were built against different registries");
    }
    if (center_a >= a.n || center_b >= b.n) throw Error("weighted_hamming: center index out of range");
    const auto w = gaussian_weights(center_a + 1, a.n, sigma);
    const std::size_t len = std::min(a.n, b.n);
    double num = 0, den = 0;
    for (std::size_t t = 0; t < len; ++t) {
        const int mismatch = (a.dep_at(center_a, t) != b.dep_at(center_b, t) ? 1 : 0) +
                             (a.pos_at(center_a, t) != b.pos_at(center_b, t) ? 1 : 0);
        num += w[t] * mismatch;
        den += w[t];
    }
    return num / (2.0 * den);
}

double center_distance(const SentenceView& a, const SentenceView& b, double sigma) {
    if (a.centers.empty() || b.centers.empty()) throw Error("linguistic similarity needs at least one center word");
    double sum = 0;
    for (std::size_t ca : a.centers)
        for (std::size_t cb : b.centers) sum += weighted_hamming(*a.matrices, ca, *b.matrices, cb, sigma);
    return sum / static_cast<double>(a.centers.size() * b.centers.size());
}

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

double linguistic_similarity(const SentenceView& a, const SentenceView& b, const HeuristicConfig& cfg) {
    const double ab = logistic(-center_distance(a, b, cfg.sigma));
    const double ba = logistic(-center_distance(b, a, cfg.sigma));
    return 0.5 * (ab + ba);
}

double domain_similarity(const SentenceRecord& a, const SentenceRecord& b) {
    return trim(a.domain) == trim(b.domain) ? 1.0 : 0.0;
}

std::array<std::size_t, 3> sentiment_vector(const SentenceRecord& rec) {
    std::array<std::size_t, 3> v{};
    for (const auto& p : rec.pairs) {
        switch (p.polarity) {
        case Polarity::positive: ++v[0]; break;
        case Polarity::neutral: ++v[1]; break;
        case Polarity::negative: ++v[2]; break;
        }
    }
    return v;
}

double sentiment_similarity(const SentenceRecord& a, const SentenceRecord& b) {
    const auto va = sentiment_vector(a);
    const auto vb = sentiment_vector(b);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        dot += static_cast<double>(va[i] * vb[i]);
        na += static_cast<double>(va[i] * va[i]);
        nb += static_cast<double>(vb[i] * vb[i]);
    }
    if (na == 0 || nb == 0) return 0.5;
    return 0.5 * dot / (std::sqrt(na) * std::sqrt(nb)) + 0.5;
}

SimilarityProfile similarity_profile(const SentenceView& a, const SentenceView& b, const HeuristicConfig& cfg) {
    return {linguistic_similarity(a, b, cfg), domain_similarity(*a.record, *b.record),
            sentiment_similarity(*a.record, *b.record)};
}

FeatureBits label_pair(const SimilarityProfile& profile, const HeuristicConfig& cfg) {
    FeatureBits bits{};
    for (Feature f : kFeatures) bits[static_cast<std::size_t>(f)] = profile[f] >= cfg.theta(f) ? 1 : 0;
    return bits;
}

void PairSet::recount() {
    counts = {};
    for (const auto& l : labels)
        for (std::size_t f = 0; f < 3; ++f) (l.bits[f] ? counts[f].positive : counts[f].negative)++;
}

namespace {

struct Candidate {
    std::size_t i = 0;
    std::size_t j = 0;
    SimilarityProfile profile;
    FeatureBits bits{};
};

// Unordered pair (i < j) for linear index k over the strict upper triangle of n x n.
std::pair<std::size_t, std::size_t> pair_from_linear(std::uint64_t k, std::size_t n) {
    std::size_t i = 0;
    std::uint64_t row_len = n - 1;
    while (k >= row_len) {
        k -= row_len;
        ++i;
        --row_len;
    }
    return {i, i + 1 + static_cast<std::size_t>(k)};
}

std::vector<std::uint64_t> sample_pairs(std::uint64_t total, std::uint64_t pool, std::mt19937_64& rng) {
    std::vector<std::uint64_t> picked;
    if (total <= 4'000'000) {
        std::vector<std::uint64_t> all(total);
        std::iota(all.begin(), all.end(), std::uint64_t{0});
        for (std::uint64_t k = 0; k < pool; ++k) {
            std::uniform_int_distribution<std::uint64_t> dist(k, total - 1);
            std::swap(all[k], all[dist(rng)]);
        }
        all.resize(pool);
        return all;
    }
    std::unordered_set<std::uint64_t> seen;
    std::uniform_int_distribution<std::uint64_t> dist(0, total - 1);
    while (picked.size() < pool) {
        const auto k = dist(rng);
        if (seen.insert(k).second) picked.push_back(k);
    }
    return picked;
}

std::size_t pattern_of(const FeatureBits& bits) {
    return static_cast<std::size_t>(bits[0]) | (static_cast<std::size_t>(bits[1]) << 1) |
           (static_cast<std::size_t>(bits[2]) << 2);
}

// How far feature f's kept counts are outside the 1:3 .. 3:1 band. Features whose
// candidate pool lacks one class cannot be balanced and count as satisfied.
std::size_t ratio_excess(const std::array<std::size_t, 8>& quota, const std::array<bool, 3>& both, std::size_t f) {
    if (!both[f]) return 0;
    std::size_t pos = 0, neg = 0;
    for (std::size_t p = 0; p < 8; ++p) ((p >> f) & 1 ? pos : neg) += quota[p];
    if (pos > 3 * neg) return pos - 3 * neg;
    if (neg > 3 * pos) return neg - 3 * pos;
    return 0;
}

std::size_t total_excess(const std::array<std::size_t, 8>& quota, const std::array<bool, 3>& both) {
    return ratio_excess(quota, both, 0) + ratio_excess(quota, both, 1) + ratio_excess(quota, both, 2);
}

// Repeatedly drops one candidate from the pattern whose removal most reduces the total
// ratio excess (ties: the most populous pattern), then trims to the budget the same way.
void rebalance_quota(std::array<std::size_t, 8>& quota, std::size_t budget) {
    std::array<bool, 3> both{};
    for (std::size_t f = 0; f < 3; ++f) {
        std::size_t pos = 0, neg = 0;
        for (std::size_t p = 0; p < 8; ++p) ((p >> f) & 1 ? pos : neg) += quota[p];
        both[f] = pos > 0 && neg > 0;
    }
    auto kept = [&] { return std::accumulate(quota.begin(), quota.end(), std::size_t{0}); };
    for (;;) {
        const std::size_t excess = total_excess(quota, both);
        const bool over_budget = kept() > budget;
        if (excess == 0 && !over_budget) return;
        std::optional<std::size_t> best;
        std::size_t best_excess = 0;
        for (std::size_t p = 0; p < 8; ++p) {
            if (quota[p] == 0) continue;
            --quota[p];
            const std::size_t e = total_excess(quota, both);
            ++quota[p];
            if (!best || e < best_excess || (e == best_excess && quota[p] > quota[*best])) {
                best = p;
                best_excess = e;
            }
        }
        if (!best) return;
        // Stop when only an over-budget trim could help and it would make the balance worse,
        // or when no single removal makes progress on the balance.
        if (!over_budget && best_excess >= excess) return;
        --quota[*best];
    }
}

} // namespace

PairSet generate_pair_set(const Corpus& corpus, const HeuristicConfig& cfg, const PairGenOptions& options) {
    cfg.validate();
    if (options.budget < 2) throw Error("pair budget must be at least 2");
    const std::size_t n = corpus.size();
    if (n < 2) throw Error("pair generation needs at least 2 records");

    const std::uint64_t total = static_cast<std::uint64_t>(n) * (n - 1) / 2;
    const bool exhaustive = static_cast<std::uint64_t>(n) * n <= 4ull * options.budget;
    const std::uint64_t pool = exhaustive ? total : std::min<std::uint64_t>(total, 4ull * options.budget);
    std::mt19937_64 rng(options.seed);
    const auto linear = sample_pairs(total, pool, rng);

    std::vector<Candidate> cands(linear.size());
    auto label_range = [&](std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
            auto [i, j] = pair_from_linear(linear[c], n);
            cands[c].i = i;
            cands[c].j = j;
            cands[c].profile = similarity_profile(view_of(corpus, i), view_of(corpus, j), cfg);
            cands[c].bits = label_pair(cands[c].profile, cfg);
        }
    };
    const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, cands.size()));
    if (threads == 1) {
        label_range(0, cands.size());
    } else {
        std::vector<std::thread> workers;
        const std::size_t chunk = (cands.size() + threads - 1) / threads;
        for (std::size_t t = 0; t < threads; ++t) {
            const std::size_t b = t * chunk, e = std::min(cands.size(), b + chunk);
            if (b < e) workers.emplace_back(label_range, b, e);
        }
        for (auto& w : workers) w.join();
    }

    // Rebalancing works on how many candidates to keep per bit pattern (8 patterns);
    // which candidates fill a pattern's quota follows the seeded shuffle.
    std::array<std::vector<std::size_t>, 8> by_pattern;
    {
        std::vector<std::size_t> order(cands.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t c : order) by_pattern[pattern_of(cands[c].bits)].push_back(c);
    }
    std::array<std::size_t, 8> quota{};
    for (std::size_t p = 0; p < 8; ++p) quota[p] = by_pattern[p].size();
    rebalance_quota(quota, options.budget);

    std::vector<std::size_t> selected;
    for (std::size_t p = 0; p < 8; ++p)
        selected.insert(selected.end(), by_pattern[p].begin(), by_pattern[p].begin() + static_cast<std::ptrdiff_t>(quota[p]));
    std::sort(selected.begin(), selected.end(), [&](std::size_t a, std::size_t b) {
        return std::tie(cands[a].i, cands[a].j) < std::tie(cands[b].i, cands[b].j);
    });

    PairSet set;
    set.labels.reserve(selected.size());
    for (std::size_t c : selected) {
        set.labels.push_back({corpus.record(cands[c].i).id, corpus.record(cands[c].j).id, cands[c].bits,
                              cands[c].profile});
    }
    set.recount();
    return set;
}

std::string serialize_pair_set(const PairSet& set) {
    using nlohmann::ordered_json;
    std::string out;
    for (const auto& l : set.labels) {
        ordered_json line;
        line["a"] = l.anchor_id;
        line["b"] = l.other_id;
        line["bits"] = {l.bits[0], l.bits[1], l.bits[2]};
        line["profile"] = {l.profile.lig, l.profile.dom, l.profile.sen};
        out += line.dump();
        out.push_back('\n');
    }
    ordered_json summary;
    for (Feature f : kFeatures) {
        const auto& c = set.counts[static_cast<std::size_t>(f)];
        summary[std::string(to_string(f))] = {{"positive", c.positive}, {"negative", c.negative}};
    }
    ordered_json footer;
    footer["summary"] = std::move(summary);
    out += footer.dump();
    out.push_back('\n');
    return out;
}

PairSet parse_pair_set(std::string_view text) {
    using nlohmann::json;
    PairSet set;
    bool saw_footer = false;
    std::size_t line_no = 0, start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const auto line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (trim(line).empty()) continue;
        if (saw_footer) throw ValidationError("pair set line " + std::to_string(line_no) + ": content after summary");
        try {
            const json obj = json::parse(line);
            if (obj.contains("summary")) {
                saw_footer = true;
                continue;
            }
            PairLabel l;
            l.anchor_id = obj.at("a").get<std::string>();
            l.other_id = obj.at("b").get<std::string>();
            const auto bits = obj.at("bits").get<std::vector<int>>();
            const auto prof = obj.at("profile").get<std::vector<double>>();
            if (bits.size() != 3 || prof.size() != 3) throw ValidationError("bits/profile must have 3 entries");
            for (std::size_t f = 0; f < 3; ++f) {
                if (bits[f] != 0 && bits[f] != 1) throw ValidationError("bits must be 0 or 1");
                l.bits[f] = static_cast<std::uint8_t>(bits[f]);
            }
            l.profile = {prof[0], prof[1], prof[2]};
            if (l.anchor_id == l.other_id) throw ValidationError("pair relates a record to itself");
            set.labels.push_back(std::move(l));
        } catch (const json::exception& e) {
            throw ValidationError("pair set line " + std::to_string(line_no) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError("pair set line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!saw_footer) throw ValidationError("pair set is missing its summary line");
    set.recount();
    return set;
}

void write_pair_set(const PairSet& set, const std::filesystem::path& path) {
    write_text_file(path, serialize_pair_set(set));
}

PairSet load_pair_set(const std::filesystem::path& path) { return parse_pair_set(read_text_file(path)); }

} // namespace featret
