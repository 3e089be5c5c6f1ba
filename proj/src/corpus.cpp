#include "featret/corpus.hpp"

#include "featret/error.hpp"
#include "featret/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace featret {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::atomic<std::uint64_t> next_lineage{1};

bool has_whitespace(std::string_view s) {
    return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

template <typename T>
T get_field(const json& obj, const char* key, const char* what) {
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(std::string("field '") + key + "' must be " + what);
    }
}

} // namespace

std::string_view to_string(Polarity p) {
    switch (p) {
    case Polarity::positive: return "positive";
    case Polarity::negative: return "negative";
    case Polarity::neutral: return "neutral";
    }
    return "neutral";
}

std::optional<Polarity> parse_polarity(std::string_view text) {
    std::string t = trim(text);
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (t == "positive") return Polarity::positive;
    if (t == "negative") return Polarity::negative;
    if (t == "neutral") return Polarity::neutral;
    return std::nullopt;
}

std::string join_tokens(std::span<const std::string> tokens, std::size_t first, std::size_t last) {
    std::string out;
    for (std::size_t i = first; i <= last && i < tokens.size(); ++i) {
        if (i > first) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

std::string SentenceRecord::text() const {
    return tokens.empty() ? std::string() : join_tokens(tokens, 0, tokens.size() - 1);
}

std::vector<std::string> validate_record(const SentenceRecord& rec) {
    std::vector<std::string> v;
    const long n = static_cast<long>(rec.tokens.size());
    if (rec.id.empty()) v.emplace_back("id must be non-empty");
    if (rec.domain.empty()) v.emplace_back("domain must be non-empty");
    if (rec.tokens.empty()) v.emplace_back("tokens must be non-empty");
    if (rec.pos_tags.size() != rec.tokens.size()) v.emplace_back("pos_tags length must equal tokens length");
    for (const auto& tag : rec.pos_tags) {
        if (tag.empty() || has_whitespace(tag)) {
            v.emplace_back("pos tags must be non-empty and free of whitespace");
            break;
        }
    }

    std::size_t roots = 0;
    std::set<std::pair<long, long>> seen_edges;
    for (const auto& e : rec.dep_edges) {
        const bool dep_ok = e.dependent >= 0 && e.dependent < n;
        const bool head_ok = e.head == -1 || (e.head >= 0 && e.head < n);
        if (!dep_ok || !head_ok) {
            v.push_back("dep edge (" + std::to_string(e.dependent) + ", " + std::to_string(e.head) +
                        ") index out of range");
            continue;
        }
        if (e.rel.empty()) v.emplace_back("dep relation label must be non-empty");
        if (e.head == -1) {
            ++roots;
            continue;
        }
        if (e.head == e.dependent) v.push_back("dep edge on token " + std::to_string(e.dependent) + " is a self-loop");
        if (!seen_edges.emplace(e.dependent, e.head).second) {
            v.push_back("duplicate dep edge (" + std::to_string(e.dependent) + ", " + std::to_string(e.head) + ")");
        }
    }
    if (roots != 1) v.push_back("exactly one root edge required, found " + std::to_string(roots));

    if (rec.pairs.empty()) v.emplace_back("pairs must be non-empty");
    std::set<std::tuple<std::size_t, std::size_t, Polarity>> seen_pairs;
    for (const auto& p : rec.pairs) {
        if (p.span.first > p.span.last || p.span.last >= rec.tokens.size()) {
            v.push_back("aspect span [" + std::to_string(p.span.first) + ", " + std::to_string(p.span.last) +
                        "] out of range");
            continue;
        }
        if (join_tokens(rec.tokens, p.span.first, p.span.last) != p.aspect) {
            v.push_back("aspect text '" + p.aspect + "' must equal span tokens");
        }
        if (!seen_pairs.emplace(p.span.first, p.span.last, p.polarity).second) {
            v.push_back("duplicate pair (span, polarity) for aspect '" + p.aspect + "'");
        }
    }
    return v;
}

RelationRegistry::RelationRegistry() : lineage_(next_lineage.fetch_add(1)) {}

int RelationRegistry::pos_pair_id(const std::string& tag_i, const std::string& tag_j) {
    auto [it, inserted] = pos_ids_.try_emplace({tag_i, tag_j}, static_cast<int>(pos_ids_.size()) + 1);
    return it->second;
}

int RelationRegistry::dep_id(const std::string& rel) {
    auto [it, inserted] = dep_ids_.try_emplace(rel, static_cast<int>(dep_ids_.size()) + 1);
    return it->second;
}

std::optional<int> RelationRegistry::find_pos_pair(const std::string& tag_i, const std::string& tag_j) const {
    auto it = pos_ids_.find({tag_i, tag_j});
    if (it == pos_ids_.end()) return std::nullopt;
    return it->second;
}

std::optional<int> RelationRegistry::find_dep(const std::string& rel) const {
    auto it = dep_ids_.find(rel);
    if (it == dep_ids_.end()) return std::nullopt;
    return it->second;
}

std::string RelationRegistry::snapshot_json() const {
    json pos = json::object();
    for (const auto& [key, id] : pos_ids_) pos[key.first + " " + key.second] = id;
    json dep = json::object();
    for (const auto& [rel, id] : dep_ids_) dep[rel] = id;
    json out;
    out["pos_pair_ids"] = std::move(pos);
    out["dep_ids"] = std::move(dep);
    return out.dump();
}

RelationRegistry RelationRegistry::from_snapshot_json(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("registry snapshot: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("pos_pair_ids") || !doc.contains("dep_ids") || doc.size() != 2) {
        throw ValidationError("registry snapshot must hold exactly 'pos_pair_ids' and 'dep_ids'");
    }
    RelationRegistry reg;
    auto check_ids = [](const json& m, const char* what) {
        if (!m.is_object()) throw ValidationError(std::string("registry snapshot: ") + what + " must be an object");
        std::vector<int> ids;
        for (const auto& [k, v] : m.items()) {
            if (!v.is_number_integer()) throw ValidationError(std::string("registry snapshot: non-integer id in ") + what);
            ids.push_back(v.get<int>());
        }
        std::sort(ids.begin(), ids.end());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] != static_cast<int>(i) + 1) {
                throw ValidationError(std::string("registry snapshot: ids in ") + what + " must be 1..n without gaps");
            }
        }
    };
    check_ids(doc["pos_pair_ids"], "pos_pair_ids");
    check_ids(doc["dep_ids"], "dep_ids");
    for (const auto& [k, v] : doc["pos_pair_ids"].items()) {
        const auto sp = k.find(' ');
        if (sp == std::string::npos || k.find(' ', sp + 1) != std::string::npos) {
            throw ValidationError("registry snapshot: malformed pos pair key '" + k + "'");
        }
        reg.pos_ids_.emplace(std::make_pair(k.substr(0, sp), k.substr(sp + 1)), v.get<int>());
    }
    for (const auto& [k, v] : doc["dep_ids"].items()) reg.dep_ids_.emplace(k, v.get<int>());
    return reg;
}

std::string RelationRegistry::fingerprint() const { return sha256_hex(snapshot_json()); }

std::size_t RelationMatrices::dep_degree(std::size_t i) const {
    std::size_t d = 0;
    for (std::size_t j = 0; j < n; ++j) {
        if (dep_at(i, j) != 0) ++d;
        if (dep_at(j, i) != 0) ++d;
    }
    return d;
}

RelationMatrices build_relation_matrices(const SentenceRecord& rec, RelationRegistry& registry) {
    RelationMatrices m;
    m.n = rec.tokens.size();
    m.registry_lineage = registry.lineage();
    m.pos.assign(m.n * m.n, 0);
    m.dep.assign(m.n * m.n, 0);
    for (std::size_t i = 0; i < m.n; ++i)
        for (std::size_t j = 0; j < m.n; ++j) m.pos[i * m.n + j] = registry.pos_pair_id(rec.pos_tags[i], rec.pos_tags[j]);
    for (const auto& e : rec.dep_edges) {
        if (e.head < 0) continue;
        const auto i = static_cast<std::size_t>(e.dependent);
        const auto j = static_cast<std::size_t>(e.head);
        if (i == j) continue;
        m.dep[i * m.n + j] = registry.dep_id(e.rel);
    }
    return m;
}

std::vector<std::size_t> select_center_words(const SentenceRecord& rec, const RelationMatrices& matrices) {
    std::vector<std::size_t> centers;
    centers.reserve(rec.pairs.size());
    for (const auto& p : rec.pairs) {
        std::size_t best = p.span.first;
        std::size_t best_degree = matrices.dep_degree(best);
        for (std::size_t t = p.span.first + 1; t <= p.span.last; ++t) {
            const std::size_t d = matrices.dep_degree(t);
            if (d > best_degree) {
                best = t;
                best_degree = d;
            }
        }
        centers.push_back(best);
    }
    return centers;
}

std::vector<std::size_t> select_center_words(const SentenceRecord& rec) {
    RelationRegistry scratch;
    return select_center_words(rec, build_relation_matrices(rec, scratch));
}

Corpus::Corpus(std::vector<SentenceRecord> records, RelationRegistry registry)
    : records_(std::move(records)), registry_(std::move(registry)) {
    matrices_.reserve(records_.size());
    centers_.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const auto& rec = records_[i];
        auto violations = validate_record(rec);
        if (!violations.empty()) {
            throw ValidationError("record '" + rec.id + "': " + violations.front());
        }
        if (!by_id_.emplace(rec.id, i).second) throw ValidationError("record '" + rec.id + "': duplicate id");
        domains_.insert(rec.domain);
        matrices_.push_back(build_relation_matrices(rec, registry_));
        centers_.push_back(select_center_words(rec, matrices_.back()));
    }
}

std::optional<std::size_t> Corpus::index_of(std::string_view id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
}

Corpus Corpus::subset(std::span<const std::size_t> indices) const {
    std::vector<SentenceRecord> picked;
    picked.reserve(indices.size());
    for (std::size_t i : indices) picked.push_back(records_.at(i));
    return Corpus(std::move(picked), registry_);
}

SentenceRecord parse_record_json(std::string_view line) {
    json obj;
    try {
        obj = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ValidationError("record must be a JSON object");
    static const std::set<std::string> keys{"id", "domain", "tokens", "pos", "dep", "pairs"};
    for (const auto& k : keys)
        if (!obj.contains(k)) throw ValidationError("missing key '" + k + "'");
    for (const auto& [k, v] : obj.items())
        if (!keys.contains(k)) throw ValidationError("unexpected key '" + k + "'");

    SentenceRecord rec;
    rec.id = get_field<std::string>(obj, "id", "a string");
    rec.domain = get_field<std::string>(obj, "domain", "a string");
    rec.tokens = get_field<std::vector<std::string>>(obj, "tokens", "an array of strings");
    rec.pos_tags = get_field<std::vector<std::string>>(obj, "pos", "an array of strings");
    const json& dep = obj["dep"];
    if (!dep.is_array()) throw ValidationError("field 'dep' must be an array");
    for (const auto& e : dep) {
        if (!e.is_array() || e.size() != 3 || !e[0].is_number_integer() || !e[1].is_number_integer() ||
            !e[2].is_string()) {
            throw ValidationError("dep entries must be [dependent:int, head:int, rel:string]");
        }
        rec.dep_edges.push_back({e[0].get<long>(), e[1].get<long>(), e[2].get<std::string>()});
    }
    const json& pairs = obj["pairs"];
    if (!pairs.is_array()) throw ValidationError("field 'pairs' must be an array");
    for (const auto& p : pairs) {
        if (!p.is_object() || p.size() != 3 || !p.contains("aspect") || !p.contains("span") ||
            !p.contains("polarity")) {
            throw ValidationError("pairs entries must be {aspect, span, polarity}");
        }
        const json& span = p["span"];
        if (!p["aspect"].is_string() || !span.is_array() || span.size() != 2 || !span[0].is_number_unsigned() ||
            !span[1].is_number_unsigned() || !p["polarity"].is_string()) {
            throw ValidationError("pairs entries must be {aspect:string, span:[start,end], polarity:string}");
        }
        auto pol = parse_polarity(p["polarity"].get<std::string>());
        if (!pol || p["polarity"].get<std::string>() != to_string(*pol)) {
            throw ValidationError("polarity must be one of positive|negative|neutral");
        }
        rec.pairs.push_back({p["aspect"].get<std::string>(), {span[0].get<std::size_t>(), span[1].get<std::size_t>()},
                             *pol});
    }
    return rec;
}

std::string serialize_record(const SentenceRecord& rec) {
    ordered_json obj;
    obj["id"] = rec.id;
    obj["domain"] = rec.domain;
    obj["tokens"] = rec.tokens;
    obj["pos"] = rec.pos_tags;
    ordered_json dep = ordered_json::array();
    for (const auto& e : rec.dep_edges) dep.push_back(ordered_json::array({e.dependent, e.head, e.rel}));
    obj["dep"] = std::move(dep);
    ordered_json pairs = ordered_json::array();
    for (const auto& p : rec.pairs) {
        ordered_json item;
        item["aspect"] = p.aspect;
        item["span"] = ordered_json::array({p.span.first, p.span.last});
        item["polarity"] = std::string(to_string(p.polarity));
        pairs.push_back(std::move(item));
    }
    obj["pairs"] = std::move(pairs);
    return obj.dump();
}

Corpus parse_corpus(std::string_view text, const RelationRegistry* base) {
    std::vector<SentenceRecord> records;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(start, end - start);
        ++line_no;
        if (!trim(line).empty()) {
            try {
                records.push_back(parse_record_json(line));
            } catch (const ValidationError& e) {
                throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
            }
        }
        start = end + 1;
    }
    if (records.empty()) throw ValidationError("empty corpus");
    return Corpus(std::move(records), base ? *base : RelationRegistry{});
}

Corpus load_corpus(const std::filesystem::path& path, const RelationRegistry* base) {
    return parse_corpus(read_text_file(path), base);
}

std::string serialize_corpus(const Corpus& corpus) {
    std::string out;
    for (const auto& rec : corpus.records()) {
        out += serialize_record(rec);
        out.push_back('\n');
    }
    return out;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    write_text_file(path, serialize_corpus(corpus));
}

std::pair<Corpus, Corpus> split_dataset(const Corpus& corpus, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw Error("split ratio must lie in (0, 1), got " + std::to_string(ratio));
    if (corpus.empty()) throw Error("cannot split an empty corpus");

    std::map<std::string, std::vector<std::size_t>> by_domain;
    for (std::size_t i = 0; i < corpus.size(); ++i) by_domain[corpus.record(i).domain].push_back(i);

    // Largest-remainder apportionment keeps each domain within one sentence of ratio * size.
    const auto total = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(corpus.size())));
    std::vector<std::pair<std::string, double>> remainders;
    std::map<std::string, std::size_t> quota;
    std::size_t assigned = 0;
    for (const auto& [domain, idx] : by_domain) {
        const double exact = ratio * static_cast<double>(idx.size());
        quota[domain] = static_cast<std::size_t>(std::floor(exact));
        assigned += quota[domain];
        remainders.emplace_back(domain, exact - std::floor(exact));
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (std::size_t k = 0; assigned < total && k < remainders.size(); ++k, ++assigned) ++quota[remainders[k].first];

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> train, valid;
    for (auto& [domain, idx] : by_domain) {
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t q = std::min(quota[domain], idx.size());
        valid.insert(valid.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(q));
        train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(q), idx.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(valid.begin(), valid.end());
    return {corpus.subset(train), corpus.subset(valid)};
}

namespace {

void count_record(DomainStats& row, const SentenceRecord& rec) {
    ++row.sentences;
    for (const auto& p : rec.pairs) {
        ++row.pairs;
        switch (p.polarity) {
        case Polarity::positive: ++row.positive; break;
        case Polarity::negative: ++row.negative; break;
        case Polarity::neutral: ++row.neutral; break;
        }
    }
}

} // namespace

CorpusStats corpus_stats(const Corpus& corpus, std::span<const std::string> domain_filter) {
    std::map<std::string, DomainStats> rows;
    const std::set<std::string> keep(domain_filter.begin(), domain_filter.end());
    for (const auto& rec : corpus.records()) {
        if (!keep.contains(rec.domain)) continue;
        auto& row = rows[rec.domain];
        row.domain = rec.domain;
        count_record(row, rec);
    }
    CorpusStats stats;
    for (auto& [domain, row] : rows) {
        stats.overall.sentences += row.sentences;
        stats.overall.pairs += row.pairs;
        stats.overall.positive += row.positive;
        stats.overall.negative += row.negative;
        stats.overall.neutral += row.neutral;
        stats.rows.push_back(std::move(row));
    }
    return stats;
}

CorpusStats corpus_stats(const Corpus& corpus) {
    const std::vector<std::string> all(corpus.domains().begin(), corpus.domains().end());
    return corpus_stats(corpus, all);
}

} // namespace featret
