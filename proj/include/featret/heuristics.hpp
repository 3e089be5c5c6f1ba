#pragma once

#include "featret/corpus.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace featret {

enum class Feature : std::size_t { lig = 0, dom = 1, sen = 2 };
inline constexpr std::array<Feature, 3> kFeatures{Feature::lig, Feature::dom, Feature::sen};
std::string_view to_string(Feature f);

struct HeuristicConfig {
    double sigma = 2.0;
    double theta_lig = 0.43;
    double theta_dom = 0.5;
    double theta_sen = 0.8;

    double theta(Feature f) const;
    // Throws ValidationError on sigma <= 0 or a threshold outside [0, 1].
    void validate() const;
};

struct SimilarityProfile {
    double lig = 0.0;
    double dom = 0.0;
    double sen = 0.0;

    double operator[](Feature f) const;
};

using FeatureBits = std::array<std::uint8_t, 3>;

// A sentence together with the relation data the linguistic score needs.
struct SentenceView {
    const SentenceRecord* record = nullptr;
    const RelationMatrices* matrices = nullptr;
    std::span<const std::size_t> centers;
};

SentenceView view_of(const Corpus& corpus, std::size_t index);

// W_j = exp(-(j - k)^2 / (2 sigma^2)) for j = 1..n; k is 1-based.
std::vector<double> gaussian_weights(std::size_t k, std::size_t n, double sigma);

// Gaussian-weighted mismatch between the center rows of both relation channels,
// truncated to the shorter sentence and normalized into [0, 1]. Weights come from
// the first sentence's center.
double weighted_hamming(const RelationMatrices& a, std::size_t center_a, const RelationMatrices& b,
                        std::size_t center_b, double sigma);

// Mean weighted Hamming over all center pairs, in one direction.
double center_distance(const SentenceView& a, const SentenceView& b, double sigma);
// sigmoid(-D), averaged over both argument orders.
double linguistic_similarity(const SentenceView& a, const SentenceView& b, const HeuristicConfig& cfg);
double domain_similarity(const SentenceRecord& a, const SentenceRecord& b);
// [n_positive, n_neutral, n_negative]
std::array<std::size_t, 3> sentiment_vector(const SentenceRecord& rec);
double sentiment_similarity(const SentenceRecord& a, const SentenceRecord& b);

SimilarityProfile similarity_profile(const SentenceView& a, const SentenceView& b, const HeuristicConfig& cfg);
FeatureBits label_pair(const SimilarityProfile& profile, const HeuristicConfig& cfg);

struct PairLabel {
    std::string anchor_id;
    std::string other_id;
    FeatureBits bits{};
    SimilarityProfile profile;
};

struct ClassCounts {
    std::size_t positive = 0;
    std::size_t negative = 0;
    friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

struct PairSet {
    std::vector<PairLabel> labels;
    std::array<ClassCounts, 3> counts{};

    void recount();
};

struct PairGenOptions {
    std::size_t budget = 10000;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

// Samples candidate pairs, labels them, and keeps a subset whose per-feature
// positive:negative ratio stays within [1/3, 3]. Output is ordered by corpus position
// and independent of the thread count.
PairSet generate_pair_set(const Corpus& corpus, const HeuristicConfig& cfg, const PairGenOptions& options);

std::string serialize_pair_set(const PairSet& set);
PairSet parse_pair_set(std::string_view text);
void write_pair_set(const PairSet& set, const std::filesystem::path& path);
PairSet load_pair_set(const std::filesystem::path& path);

} // namespace featret
