#include "doctest.h"
#include "support.hpp"

#include "featret/heuristics.hpp"
#include "featret/synthetic.hpp"

#include <cmath>

using namespace featret;

namespace {

SentenceRecord make(std::string id, std::string domain, std::vector<std::string> tokens,
                    std::vector<std::string> tags, std::vector<DepEdge> edges, std::vector<SentimentPair> pairs) {
    SentenceRecord r;
    r.id = std::move(id);
    r.domain = std::move(domain);
    r.tokens = std::move(tokens);
    r.pos_tags = std::move(tags);
    r.dep_edges = std::move(edges);
    r.pairs = std::move(pairs);
    return r;
}

SentenceRecord with_polarities(std::vector<Polarity> ps) {
    SentenceRecord r = make("p", "d", {}, {}, {}, {});
    for (std::size_t i = 0; i < ps.size(); ++i) {
        r.tokens.push_back("w" + std::to_string(i));
        r.pos_tags.push_back("NN");
        r.dep_edges.push_back({static_cast<long>(i), i == 0 ? -1 : 0, i == 0 ? "root" : "conj"});
        r.pairs.push_back({r.tokens.back(), {i, i}, ps[i]});
    }
    return r;
}

} // namespace

TEST_CASE("gaussian weights") {
    const auto w = gaussian_weights(2, 3, 1.0);
    CHECK(w[0] == doctest::Approx(0.60653).epsilon(1e-5));
    CHECK(w[1] == 1.0);
    CHECK(w[2] == doctest::Approx(0.60653).epsilon(1e-5));
    CHECK(gaussian_weights(1, 1, 2.0) == std::vector<double>{1.0});
    CHECK_THROWS(gaussian_weights(0, 3, 1.0));
    CHECK_THROWS(gaussian_weights(1, 3, 0.0));
}

TEST_CASE("weighted hamming examples") {
    const Corpus c = load_corpus(support::source_path("data/fixture_corpus.jsonl"));
    CHECK(weighted_hamming(c.matrices(0), 1, c.matrices(0), 1, 2.0) == 0.0);

    // 3 tokens against 2, center 1 on both; only the dependency at t = 0 differs.
    const auto a = make("a", "d", {"x", "y", "z"}, {"A", "B", "C"}, {{0, 1, "det"}, {1, -1, "root"}, {2, 1, "punct"}},
                        {{"y", {1, 1}, Polarity::positive}});
    const auto b = make("b", "d", {"x", "y"}, {"A", "B"}, {{0, -1, "root"}, {1, 0, "amod"}},
                        {{"y", {1, 1}, Polarity::positive}});
    // Row 1 of r_dep: a has nothing (1 is root), b has (1 -> 0, amod). So position 0 differs.
    const Corpus pair({a, b});
    const double w0 = std::exp(-0.5), w1 = 1.0;
    const double expected = (w0 * 1) / (2 * (w0 + w1));
    CHECK(weighted_hamming(pair.matrices(0), 1, pair.matrices(1), 1, 1.0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("maximal mismatch") {
    // Valid dependency trees cannot mismatch everywhere, so the matrices are written directly.
    RelationMatrices a{.n = 2, .pos = {1, 2, 3, 4}, .dep = {0, 5, 0, 0}, .registry_lineage = 7};
    RelationMatrices b{.n = 2, .pos = {6, 7, 8, 9}, .dep = {5, 0, 0, 0}, .registry_lineage = 7};
    CHECK(weighted_hamming(a, 0, b, 0, 1.0) == 1.0);
    CHECK(weighted_hamming(a, 0, a, 0, 1.0) == 0.0);

    const std::vector<std::size_t> centers{0};
    SentenceRecord dummy;
    const SentenceView va{&dummy, &a, centers}, vb{&dummy, &b, centers};
    HeuristicConfig cfg;
    CHECK(linguistic_similarity(va, vb, cfg) == doctest::Approx(0.26894).epsilon(1e-5));
    CHECK(linguistic_similarity(va, va, cfg) == 0.5);

    RelationMatrices other = b;
    other.registry_lineage = 8;
    CHECK_THROWS(weighted_hamming(a, 0, other, 0, 1.0));
}

TEST_CASE("linguistic similarity range and symmetry") {
    const Corpus corpus = generate_synthetic_corpus({.sentences = 30, .seed = 5});
    HeuristicConfig cfg;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        for (std::size_t j = 0; j < corpus.size(); ++j) {
            const double s = linguistic_similarity(view_of(corpus, i), view_of(corpus, j), cfg);
            CHECK(s > 1.0 / (1.0 + std::exp(1.0)));
            CHECK(s <= 0.5);
            CHECK(s == linguistic_similarity(view_of(corpus, j), view_of(corpus, i), cfg));
        }
}

TEST_CASE("domain similarity") {
    auto a = with_polarities({Polarity::positive});
    auto b = a;
    a.domain = "laptop";
    b.domain = "laptop";
    CHECK(domain_similarity(a, b) == 1.0);
    b.domain = "hotel";
    CHECK(domain_similarity(a, b) == 0.0);
    b.domain = "Laptop";
    CHECK(domain_similarity(a, b) == 0.0);
}

TEST_CASE("sentiment vectors from the worked cases") {
    const auto case1 = with_polarities({Polarity::positive, Polarity::positive, Polarity::positive});
    CHECK(sentiment_vector(case1) == std::array<std::size_t, 3>{3, 0, 0});
    const auto case2 = with_polarities({Polarity::negative, Polarity::negative, Polarity::neutral});
    CHECK(sentiment_vector(case2) == std::array<std::size_t, 3>{0, 1, 2});
    CHECK(sentiment_vector(with_polarities({Polarity::neutral})) == std::array<std::size_t, 3>{0, 1, 0});
}

TEST_CASE("sentiment similarity") {
    const auto pos = with_polarities({Polarity::positive});
    const auto neg = with_polarities({Polarity::negative});
    const auto pos_neu = with_polarities({Polarity::positive, Polarity::neutral});
    CHECK(sentiment_similarity(pos_neu, pos_neu) == doctest::Approx(1.0));
    CHECK(sentiment_similarity(pos, neg) == doctest::Approx(0.5));
    CHECK(sentiment_similarity(pos_neu, pos) == doctest::Approx(0.85355).epsilon(1e-5));
    SentenceRecord empty;
    CHECK(sentiment_similarity(empty, pos) == 0.5);
}

TEST_CASE("similarity profile agrees with the independent oracle") {
    const Corpus c = load_corpus(support::source_path("data/fixture_corpus.jsonl"));
    HeuristicConfig cfg;
    const auto self = similarity_profile(view_of(c, 4), view_of(c, 4), cfg);
    CHECK(self.lig == 0.5);
    CHECK(self.dom == 1.0);
    CHECK(self.sen == doctest::Approx(1.0));
    for (std::size_t i = 0; i < 12; ++i)
        for (std::size_t j = 0; j < 12; ++j) {
            const auto p = similarity_profile(view_of(c, i), view_of(c, j), cfg);
            CHECK(std::abs(p.lig - support::oracle::lig(c.record(i), c.record(j), cfg.sigma)) < 1e-12);
            CHECK(p.dom == support::oracle::dom(c.record(i), c.record(j)));
            CHECK(std::abs(p.sen - support::oracle::sen(c.record(i), c.record(j))) < 1e-12);
        }
    // Records 0 and 1 are in different domains by construction.
    CHECK(similarity_profile(view_of(c, 0), view_of(c, 1), cfg).dom == 0.0);
}

TEST_CASE("labeling with default thresholds") {
    HeuristicConfig cfg;
    CHECK(label_pair({0.5, 1, 0.9}, cfg) == FeatureBits{1, 1, 1});
    CHECK(label_pair({0.27, 0, 0.5}, cfg) == FeatureBits{0, 0, 0});
    CHECK(label_pair({0.43, 0.5, 0.8}, cfg) == FeatureBits{1, 1, 1});
    CHECK(cfg.theta_lig == 0.43);
    CHECK(cfg.theta_dom == 0.5);
    CHECK(cfg.theta_sen == 0.8);
}

TEST_CASE("heuristic config validation") {
    HeuristicConfig cfg;
    cfg.theta_sen = 1.2;
    CHECK_THROWS(cfg.validate());
    cfg = {};
    cfg.sigma = 0;
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("pair set on two records") {
    const Corpus c = load_corpus(support::source_path("tests/data/tiny.jsonl")).subset(std::vector<std::size_t>{0, 1});
    const auto set = generate_pair_set(c, {}, {.budget = 10, .seed = 1});
    REQUIRE(set.labels.size() == 1);
    const auto& l = set.labels[0];
    CHECK(((l.anchor_id == "t1" && l.other_id == "t2") || (l.anchor_id == "t2" && l.other_id == "t1")));
}

TEST_CASE("pair set balance, determinism and thread independence") {
    const Corpus c = generate_synthetic_corpus({.sentences = 60, .seed = 2});
    HeuristicConfig cfg;
    const auto set = generate_pair_set(c, cfg, {.budget = 300, .seed = 4});
    CHECK(set.labels.size() <= 300);
    CHECK(!set.labels.empty());
    PairSet recounted = set;
    recounted.recount();
    CHECK(recounted.counts == set.counts);
    for (Feature f : kFeatures) {
        const auto& k = set.counts[static_cast<std::size_t>(f)];
        if (k.positive == 0 || k.negative == 0) continue;
        const double ratio = static_cast<double>(k.positive) / static_cast<double>(k.negative);
        CHECK(ratio >= 1.0 / 3.0);
        CHECK(ratio <= 3.0);
    }
    for (const auto& l : set.labels) {
        const auto i = *c.index_of(l.anchor_id), j = *c.index_of(l.other_id);
        CHECK(i != j);
        const auto p = similarity_profile(view_of(c, i), view_of(c, j), cfg);
        CHECK(l.bits == label_pair(p, cfg));
    }

    const auto again = generate_pair_set(c, cfg, {.budget = 300, .seed = 4});
    CHECK(serialize_pair_set(again) == serialize_pair_set(set));
    const auto threaded = generate_pair_set(c, cfg, {.budget = 300, .seed = 4, .threads = 4});
    CHECK(serialize_pair_set(threaded) == serialize_pair_set(set));
    CHECK(serialize_pair_set(parse_pair_set(serialize_pair_set(set))) == serialize_pair_set(set));
}
