#pragma once

#include "featret/autodiff.hpp"
#include "featret/corpus.hpp"
#include "featret/heuristics.hpp"
#include "featret/numerics.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

// Multi-head graph attention sentence encoder trained with a feature-wise contrastive loss.
namespace featret {

enum class Channel : std::size_t { lig = 0, dom = 1, sen = 2, avg = 3 };
inline constexpr std::array<Channel, 4> kChannels{Channel::lig, Channel::dom, Channel::sen, Channel::avg};
std::string_view to_string(Channel c);
std::optional<Channel> parse_channel(std::string_view name);

struct EncoderConfig {
    std::size_t embed_dim = 64;
    double delta = 0.2;
    double tau = 0.1;
    std::array<double, 3> betas{1.0, 1.0, 1.0};
    double lr = 2e-4;
    std::size_t epochs = 10;
    std::size_t batch_size = 128;
    std::uint64_t seed = 0;
    bool share_attention_params = false;
    bool train_embeddings = true;
    double weight_decay = 0.01;
    double warmup_fraction = 0.05;
    double clip_norm = 1.0;
    double layer_norm_eps = 1e-5;
    double leaky_slope = 0.01;

    void validate() const;
};

// Token -> table row. Row 0 is the unknown token.
class Vocabulary {
public:
    static constexpr const char* kUnknown = "<unk>";

    Vocabulary();
    static Vocabulary from_corpus(const Corpus& corpus);
    static Vocabulary from_tokens(std::span<const std::string> tokens);

    std::size_t index(const std::string& token) const;
    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

private:
    void add(const std::string& token);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct EncoderModel {
    EncoderConfig config;
    Vocabulary vocab;
    ParamStore params;

    std::vector<std::size_t> token_rows(const SentenceRecord& rec) const;
};

namespace param_names {
std::string embedding();
std::string adjacency(Feature f);
std::string attention_transform(Feature f, bool shared);
std::string attention_vector(Feature f, bool shared);
std::string norm_gamma(Feature f);
std::string norm_beta(Feature f);
std::string proj_w1(Channel c);
std::string proj_b1(Channel c);
std::string proj_w2(Channel c);
std::string proj_b2(Channel c);
} // namespace param_names

// Fresh parameters: uniform(-sqrt(1/d), sqrt(1/d)) weights, zero biases, unit gamma.
EncoderModel init_encoder(const EncoderConfig& config, Vocabulary vocab);

// Overwrites embedding rows from a whitespace-separated "token v1 ... vd" file.
// Returns the number of rows replaced.
std::size_t load_word_vectors(EncoderModel& model, const std::filesystem::path& path);

struct FeatureEmbeddings {
    std::array<std::vector<double>, 4> channels;

    const std::vector<double>& operator[](Channel c) const { return channels[static_cast<std::size_t>(c)]; }
};

// Tape-level building blocks. Z = H * W_a is the per-token transform.
namespace graph {

ad::Var adaptive_adjacency(ad::Var tokens, ad::Var weight);

// Neighbor selection {j : A_ij > delta}; an isolated row falls back to its argmax.
ad::Mask neighbor_mask(const Tensor2& adjacency, double delta);

struct AttentionParams {
    ad::Var transform;  // d x d
    ad::Var vector;     // 1 x 2d
    ad::Var gamma;      // 1 x d
    ad::Var beta;       // 1 x d
};

ad::Var attention_layer(ad::Var tokens, ad::Var adjacency, const AttentionParams& p, double delta, double eps,
                        double slope);

struct EncodedSentence {
    std::array<ad::Var, 4> channels;  // each 1 x d
};

EncodedSentence encode(const ParamBinding& params, const EncoderConfig& config, std::span<const std::size_t> rows);

// Two affine layers with LeakyReLU between, applied row-wise.
ad::Var project(const ParamBinding& params, Channel c, ad::Var rows, double slope);

// Mean over anchors with both a positive and a negative of
// lse_{k in N}(G_ik / tau) - lse_{j in P}(G_ij / tau), where G is the critic matrix.
// Returns std::nullopt when no anchor qualifies.
std::optional<ad::Var> contrastive_loss(ad::Var critic_matrix, const ad::Mask& positives, const ad::Mask& negatives,
                                        double tau);

} // namespace graph

Tensor2 embed_tokens(const SentenceRecord& rec, const EncoderModel& model);
Tensor2 adaptive_adjacency(const Tensor2& tokens, const Tensor2& weight);
Tensor2 attention_layer(const Tensor2& tokens, const Tensor2& adjacency, const Tensor2& transform,
                        const Tensor2& vector, const Tensor2& gamma, const Tensor2& beta, double delta,
                        double eps = 1e-5, double slope = ad::kDefaultLeakySlope);

FeatureEmbeddings encode_sentence(const SentenceRecord& rec, const EncoderModel& model);

// Cosine of the channel projections; 0 when either projection is the zero vector.
double critic(std::span<const double> u, std::span<const double> v, const EncoderModel& model, Channel c);

// Label lookup for corpus positions, built from a pair set.
class PairLookup {
public:
    PairLookup(const Corpus& corpus, const PairSet& pairs);

    std::optional<FeatureBits> bits(std::size_t i, std::size_t j) const;
    // Channel label: 1 positive, 0 negative, nullopt unlabeled. Avg is positive only when
    // all three bits are set and negative only when none are.
    std::optional<int> label(std::size_t i, std::size_t j, Channel c) const;
    const std::vector<std::size_t>& partners(std::size_t i) const { return partners_.at(i); }

private:
    std::unordered_map<std::uint64_t, FeatureBits> bits_;
    std::vector<std::vector<std::size_t>> partners_;
    std::size_t n_ = 0;
};

std::optional<int> channel_label(const FeatureBits& bits, Channel c);

// Contrastive loss of one channel over a batch of already-encoded sentences.
// Throws "degenerate batch" when no anchor has both a positive and a negative.
double contrastive_loss(std::span<const FeatureEmbeddings> batch, std::span<const std::size_t> corpus_rows,
                        const PairLookup& labels, Channel c, const EncoderModel& model);

double total_loss(double lig, double dom, double sen, double avg, const std::array<double, 3>& betas);

// Summed, beta-weighted contrastive loss of a batch on a fresh tape. Channels with no
// qualifying anchor are left out. Fills grads when non-null.
struct BatchLoss {
    double total = 0.0;
    std::array<std::optional<double>, 4> channel;
};
BatchLoss batch_loss(const EncoderModel& model, const Corpus& corpus, std::span<const std::size_t> batch,
                     const PairLookup& labels, GradStore* grads, std::span<const Channel> active = kChannels);

// batch_loss over a fixed batch as a function of the parameter values (for gradcheck).
// corpus must outlive the returned function.
LossFn batch_loss_function(const EncoderModel& model, const Corpus& corpus, std::vector<std::size_t> batch,
                           const PairSet& pairs);

struct TrainingHistory {
    std::vector<double> epoch_loss;
    std::vector<Channel> skipped_channels;
    std::size_t steps = 0;
};

struct TrainOptions {
    std::function<void(const std::string&)> log;
};

// One epoch's batches. The pair set is shuffled and cut into batches of batch_size
// labeled pairs (last one smaller); a batch holds the corpus rows of its pairs' endpoints,
// topped up (to at most 4 * batch_size rows) with labeled partners so that each endpoint
// has, where the pair set allows, an in-batch positive and negative per channel.
std::vector<std::vector<std::size_t>> make_batches(const Corpus& corpus, const PairSet& pairs,
                                                   const PairLookup& labels, std::size_t batch_size,
                                                   std::mt19937_64& rng);

TrainingHistory train_encoder(EncoderModel& model, const Corpus& corpus, const PairSet& pairs,
                              const TrainOptions& options = {});

struct CriticGap {
    std::array<double, 4> mean_positive{};
    std::array<double, 4> mean_negative{};
    std::array<std::size_t, 4> positives{};
    std::array<std::size_t, 4> negatives{};

    double gap(Channel c) const {
        return mean_positive[static_cast<std::size_t>(c)] - mean_negative[static_cast<std::size_t>(c)];
    }
};

// Mean critic score over labeled positive vs negative pairs, per channel.
CriticGap critic_gap(const EncoderModel& model, const Corpus& corpus, const PairSet& pairs);

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    EncoderModel model;
    std::string registry_snapshot_path;
    std::string registry_fingerprint;
    std::vector<double> history;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Hex SHA-256 of the serialized checkpoint.
std::string checkpoint_digest(const Checkpoint& ckpt);

} // namespace featret
