#include "doctest.h"
#include "support.hpp"

#include "featret/error.hpp"
#include "featret/retrieval.hpp"
#include "featret/synthetic.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <set>

using namespace featret;
using support::random_tensor;

namespace {

FeatureIndex random_index(std::size_t n, std::size_t d, std::uint64_t seed, IndexMode mode = IndexMode::exact) {
    std::mt19937_64 rng(seed);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("r" + std::to_string(i));
    std::array<Tensor2, 4> vectors;
    for (auto& v : vectors) v = random_tensor(n, d, rng);
    return FeatureIndex(ids, vectors, mode);
}

std::vector<std::string> brute_force(const FeatureIndex& index, std::span<const double> q, Channel c, std::size_t k) {
    std::vector<std::pair<double, std::string>> all;
    const auto& m = index.vectors(c);
    for (std::size_t r = 0; r < index.size(); ++r) {
        double s = 0;
        for (std::size_t j = 0; j < q.size(); ++j) s += (q[j] - m(r, j)) * (q[j] - m(r, j));
        all.emplace_back(s, index.ids()[r]);
    }
    std::sort(all.begin(), all.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(all[i].second);
    return out;
}

std::vector<std::string> ids(const std::vector<Exemplar>& ex) {
    std::vector<std::string> out;
    for (const auto& e : ex) out.push_back(e.record_id);
    return out;
}

FeatureEmbeddings row_as_query(const FeatureIndex& index, std::size_t row) {
    FeatureEmbeddings q;
    for (Channel c : kChannels) {
        const auto r = index.vectors(c).row_span(row);
        q.channels[static_cast<std::size_t>(c)].assign(r.begin(), r.end());
    }
    return q;
}

void check_policy_shape(const ExemplarSet& set, const std::string& query_id, const RetrievalPolicy& policy) {
    CHECK(set.size() == policy.k());
    std::array<std::size_t, 4> counts{};
    std::set<std::string> distinct;
    for (const auto& e : set) {
        ++counts[static_cast<std::size_t>(e.channel)];
        distinct.insert(e.record_id);
        CHECK(e.record_id != query_id);
        CHECK(e.distance >= 0);
    }
    CHECK(counts == policy.counts);
    CHECK(distinct.size() == set.size());
    if (!policy.keep_channel_order)
        for (std::size_t i = 1; i < set.size(); ++i) CHECK(set[i - 1].distance <= set[i].distance);
}

} // namespace

TEST_CASE("exact search agrees with a brute-force scan") {
    const auto index = random_index(60, 5, 1);
    std::mt19937_64 rng(2);
    for (int q = 0; q < 100; ++q) {
        const auto query = random_tensor(1, 5, rng);
        for (Channel c : kChannels)
            for (std::size_t k = 1; k <= 10; ++k)
                CHECK(ids(index.nearest(query.data(), c, k)) == brute_force(index, query.data(), c, k));
    }
}

TEST_CASE("stored vector comes first at distance zero, and k = N returns everything") {
    const auto index = random_index(20, 4, 3);
    const auto q = row_as_query(index, 7);
    const auto top = index.nearest(q[Channel::dom], Channel::dom, 1);
    CHECK(top[0].record_id == "r7");
    CHECK(top[0].distance == 0.0);
    const auto all = index.nearest(q[Channel::sen], Channel::sen, 20);
    CHECK(all.size() == 20);
    for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i - 1].distance <= all[i].distance);
    CHECK_THROWS(index.nearest(q[Channel::sen], Channel::sen, 21));
    CHECK(index.nearest(q[Channel::sen], Channel::sen, 19, {"r7"}).size() == 19);
}

TEST_CASE("index validation") {
    CHECK_THROWS_AS(FeatureIndex({}, {}, IndexMode::exact), ValidationError);
    std::array<Tensor2, 4> v;
    for (auto& t : v) t = Tensor2(2, 3);
    CHECK_THROWS_AS(FeatureIndex({"a", "a"}, v, IndexMode::exact), ValidationError);
    CHECK_THROWS(parse_index_mode("fuzzy"));
    CHECK(parse_index_mode("approximate") == IndexMode::approximate);
}

TEST_CASE("approximate search recall") {
    const auto exact = random_index(400, 8, 4);
    const auto approx = random_index(400, 8, 4, IndexMode::approximate);
    std::mt19937_64 rng(5);
    std::size_t found = 0, total = 0;
    for (int q = 0; q < 100; ++q) {
        const auto query = random_tensor(1, 8, rng);
        for (Channel c : kChannels) {
            const auto truth = ids(exact.nearest(query.data(), c, 5));
            const auto got = ids(approx.nearest(query.data(), c, 5));
            CHECK(got.size() == 5);
            for (const auto& id : got) found += std::count(truth.begin(), truth.end(), id);
            total += 5;
        }
    }
    CHECK(static_cast<double>(found) / static_cast<double>(total) >= 0.95);
}

TEST_CASE("default policy composition") {
    const RetrievalPolicy policy;
    CHECK(policy.k() == 5);
    CHECK(policy.count(Channel::avg) == 2);
    const auto index = random_index(30, 4, 6);
    for (std::size_t row = 0; row < index.size(); ++row) {
        const auto set = retrieve_exemplars(index, row_as_query(index, row), index.ids()[row], policy);
        check_policy_shape(set, index.ids()[row], policy);
    }
    RetrievalPolicy small;
    small.counts = {1, 0, 0, 1};
    CHECK_THROWS(small.validate());
}

TEST_CASE("coincident nearest neighbours fall back to the next-nearest row") {
    // Every channel holds the same vectors, so all channels rank rows identically and the
    // five picks must walk down one shared ranking.
    std::mt19937_64 rng(8);
    const Tensor2 shared = random_tensor(12, 3, rng);
    std::vector<std::string> names;
    for (int i = 0; i < 12; ++i) names.push_back("c" + std::to_string(i));
    const FeatureIndex index(names, {shared, shared, shared, shared}, IndexMode::exact);
    FeatureEmbeddings q;
    for (auto& ch : q.channels) ch = {0.1, 0.2, 0.3};
    RetrievalPolicy policy;
    policy.keep_channel_order = true;
    const auto set = retrieve_exemplars(index, q, "", policy);
    check_policy_shape(set, "", policy);
    const auto ranking = brute_force(index, q[Channel::avg], Channel::avg, 5);
    CHECK(ids(set) == ranking);
    CHECK(set[0].channel == Channel::avg);
    CHECK(set[1].channel == Channel::avg);
    CHECK(set[2].channel == Channel::lig);
    CHECK(set[3].channel == Channel::dom);
    CHECK(set[4].channel == Channel::sen);
}

TEST_CASE("too few candidates") {
    const auto index = random_index(5, 3, 9);
    CHECK_THROWS_AS(retrieve_exemplars(index, row_as_query(index, 0), "r0", {}), ValidationError);
    CHECK(retrieve_exemplars(index, row_as_query(index, 0), "elsewhere", {}).size() == 5);
}

TEST_CASE("index file round trip and version check") {
    const auto index = random_index(15, 4, 10, IndexMode::approximate);
    const std::string bytes = serialize_index(index);
    const auto back = parse_index(bytes);
    CHECK(back == index);
    CHECK(back.mode() == IndexMode::approximate);
    CHECK(serialize_index(back) == bytes);
    std::string bumped = bytes;
    bumped[8] = 9;
    CHECK_THROWS_WITH(parse_index(bumped), doctest::Contains("version"));
    CHECK_THROWS_AS(parse_index(bytes.substr(0, bytes.size() - 1)), ValidationError);

    const auto path = std::filesystem::temp_directory_path() / "featret_test_index.bin";
    save_index(index, path);
    CHECK(load_index(path) == index);
    std::filesystem::remove(path);
}

TEST_CASE("build_index is repeatable and checks lineage") {
    const Corpus c = generate_synthetic_corpus({.sentences = 9, .seed = 1});
    EncoderConfig cfg;
    cfg.embed_dim = 6;
    Checkpoint ckpt{init_encoder(cfg, Vocabulary::from_corpus(c)), "", c.registry().fingerprint(), {}};
    const auto a = build_index(c, ckpt);
    const auto b = build_index(c, ckpt);
    CHECK(a == b);
    CHECK(a.size() == 9);
    for (Channel ch : kChannels) CHECK(a.vectors(ch).rows() == 9);
    CHECK(a.checkpoint_digest() == checkpoint_digest(ckpt));
    ckpt.registry_fingerprint = "0000";
    CHECK_THROWS_AS(build_index(c, ckpt), ValidationError);
}

TEST_CASE("hit rates with duplicated sentences are all one") {
    const auto base = generate_synthetic_records({.sentences = 6, .seed = 3});
    std::vector<SentenceRecord> train_recs, eval_recs;
    for (const auto& r : base) {
        for (int copy = 0; copy < 5; ++copy) {
            auto t = r;
            t.id = r.id + "-copy" + std::to_string(copy);
            train_recs.push_back(t);
        }
        eval_recs.push_back(r);
    }
    const Corpus train(train_recs);
    const Corpus eval(eval_recs, train.registry());
    EncoderConfig cfg;
    cfg.embed_dim = 8;
    Checkpoint ckpt{init_encoder(cfg, Vocabulary::from_corpus(train)), "", train.registry().fingerprint(), {}};
    const auto index = build_index(train, ckpt);
    const auto report = retrieval_hit_rate(index, train, eval, ckpt.model, {});
    CHECK(report.overall.queries == 6);
    for (Feature f : kFeatures) {
        CHECK(report.overall.judged[static_cast<std::size_t>(f)] == 6);
        CHECK(report.overall.rate(f) == 1.0);
    }
    CHECK(report.per_domain.size() == 3);

    const Corpus foreign(eval_recs);
    CHECK_THROWS_AS(retrieval_hit_rate(index, train, foreign, ckpt.model, {}), ValidationError);
}

TEST_CASE("untrained encoder sits at chance on domain hits") {
    // Domains are assigned at random, independent of sentence content.
    auto recs = generate_synthetic_records({.sentences = 400, .seed = 12});
    std::mt19937_64 rng(13);
    std::vector<std::size_t> order(recs.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i) recs[order[i]].domain = i % 2 ? "alpha" : "beta";
    std::vector<SentenceRecord> train_recs(recs.begin(), recs.begin() + 200), eval_recs(recs.begin() + 200, recs.end());
    const Corpus train(train_recs);
    const Corpus eval(eval_recs, train.registry());
    EncoderConfig cfg;
    cfg.embed_dim = 8;
    cfg.seed = 21;
    Checkpoint ckpt{init_encoder(cfg, Vocabulary::from_corpus(train)), "", train.registry().fingerprint(), {}};
    const auto index = build_index(train, ckpt);
    const auto report = retrieval_hit_rate(index, train, eval, ckpt.model, {});
    CHECK(report.overall.queries == 200);
    CHECK(std::abs(report.overall.rate(Feature::dom) - 0.5) <= 0.15);
}
