#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace featret {

enum class Polarity { positive, negative, neutral };

std::string_view to_string(Polarity p);
// Trimmed, case-insensitive.
std::optional<Polarity> parse_polarity(std::string_view text);

// Inclusive, 0-based token range.
struct TokenSpan {
    std::size_t first = 0;
    std::size_t last = 0;
    friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct SentimentPair {
    std::string aspect;
    TokenSpan span;
    Polarity polarity = Polarity::neutral;
    friend bool operator==(const SentimentPair&, const SentimentPair&) = default;
};

// head == -1 marks the root.
struct DepEdge {
    long dependent = 0;
    long head = -1;
    std::string rel;
    friend bool operator==(const DepEdge&, const DepEdge&) = default;
};

struct SentenceRecord {
    std::string id;
    std::string domain;
    std::vector<std::string> tokens;
    std::vector<std::string> pos_tags;
    std::vector<DepEdge> dep_edges;
    std::vector<SentimentPair> pairs;

    std::string text() const;
    friend bool operator==(const SentenceRecord&, const SentenceRecord&) = default;
};

std::string join_tokens(std::span<const std::string> tokens, std::size_t first, std::size_t last);

// Every rule a record breaks, as human-readable strings. Empty means valid.
std::vector<std::string> validate_record(const SentenceRecord& rec);

// Maps POS-tag pairs and dependency labels to positive ids in first-encounter order.
// 0 is reserved for "no relation". Copies keep the lineage id, so matrices built from a
// registry and its extensions stay comparable.
class RelationRegistry {
public:
    RelationRegistry();

    int pos_pair_id(const std::string& tag_i, const std::string& tag_j);
    int dep_id(const std::string& rel);
    std::optional<int> find_pos_pair(const std::string& tag_i, const std::string& tag_j) const;
    std::optional<int> find_dep(const std::string& rel) const;

    std::size_t pos_pair_count() const noexcept { return pos_ids_.size(); }
    std::size_t dep_count() const noexcept { return dep_ids_.size(); }
    std::uint64_t lineage() const noexcept { return lineage_; }

    // {"pos_pair_ids": {"TAG_I TAG_J": id, ...}, "dep_ids": {"rel": id, ...}}
    std::string snapshot_json() const;
    static RelationRegistry from_snapshot_json(std::string_view text);
    // Hex SHA-256 of snapshot_json().
    std::string fingerprint() const;

    friend bool operator==(const RelationRegistry& a, const RelationRegistry& b) {
        return a.pos_ids_ == b.pos_ids_ && a.dep_ids_ == b.dep_ids_;
    }

private:
    std::map<std::pair<std::string, std::string>, int> pos_ids_;
    std::map<std::string, int> dep_ids_;
    std::uint64_t lineage_;
};

struct RelationMatrices {
    std::size_t n = 0;
    std::vector<int> pos;  // n*n, row-major
    std::vector<int> dep;  // n*n, row = dependent, col = head
    std::uint64_t registry_lineage = 0;

    int pos_at(std::size_t i, std::size_t j) const { return pos[i * n + j]; }
    int dep_at(std::size_t i, std::size_t j) const { return dep[i * n + j]; }
    // Nonzero r_dep entries in row i plus column i.
    std::size_t dep_degree(std::size_t i) const;
};

RelationMatrices build_relation_matrices(const SentenceRecord& rec, RelationRegistry& registry);

// One center token per pair: the aspect token with the highest dependency degree,
// leftmost on ties.
std::vector<std::size_t> select_center_words(const SentenceRecord& rec, const RelationMatrices& matrices);
std::vector<std::size_t> select_center_words(const SentenceRecord& rec);

// Validated records plus their relation matrices and center words, all built against
// one registry. Immutable once constructed.
class Corpus {
public:
    Corpus() = default;
    // Validates every record and extends registry in record order. Throws ValidationError
    // naming the record id and broken rule.
    explicit Corpus(std::vector<SentenceRecord> records, RelationRegistry registry = {});

    std::span<const SentenceRecord> records() const noexcept { return records_; }
    const SentenceRecord& record(std::size_t i) const { return records_.at(i); }
    const RelationMatrices& matrices(std::size_t i) const { return matrices_.at(i); }
    const std::vector<std::size_t>& centers(std::size_t i) const { return centers_.at(i); }
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }

    const std::set<std::string>& domains() const noexcept { return domains_; }
    const RelationRegistry& registry() const noexcept { return registry_; }

    std::optional<std::size_t> index_of(std::string_view id) const;
    // Records at the given positions, sharing this corpus's registry.
    Corpus subset(std::span<const std::size_t> indices) const;

private:
    std::vector<SentenceRecord> records_;
    std::vector<RelationMatrices> matrices_;
    std::vector<std::vector<std::size_t>> centers_;
    std::set<std::string> domains_;
    RelationRegistry registry_;
    std::map<std::string, std::size_t, std::less<>> by_id_;
};

SentenceRecord parse_record_json(std::string_view line);
std::string serialize_record(const SentenceRecord& rec);

// Line-delimited records. With base, registry ids continue from that registry.
Corpus load_corpus(const std::filesystem::path& path, const RelationRegistry* base = nullptr);
Corpus parse_corpus(std::string_view text, const RelationRegistry* base = nullptr);
std::string serialize_corpus(const Corpus& corpus);
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);

// Per-domain stratified split; |validation| = round(ratio * N).
std::pair<Corpus, Corpus> split_dataset(const Corpus& corpus, double ratio, std::uint64_t seed);

struct DomainStats {
    std::string domain;
    std::size_t sentences = 0;
    std::size_t pairs = 0;
    std::size_t positive = 0;
    std::size_t negative = 0;
    std::size_t neutral = 0;
};

struct CorpusStats {
    std::vector<DomainStats> rows;  // sorted by domain
    DomainStats overall{"Overall"};
};

CorpusStats corpus_stats(const Corpus& corpus);
CorpusStats corpus_stats(const Corpus& corpus, std::span<const std::string> domain_filter);

} // namespace featret
