#include "featret/encoder.hpp"

#include "featret/error.hpp"
#include "featret/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

namespace featret {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Channel c) {
    switch (c) {
    case Channel::lig: return "lig";
    case Channel::dom: return "dom";
    case Channel::sen: return "sen";
    case Channel::avg: return "avg";
    }
    return "avg";
}

std::optional<Channel> parse_channel(std::string_view name) {
    for (Channel c : kChannels)
        if (to_string(c) == name) return c;
    return std::nullopt;
}

void EncoderConfig::validate() const {
    if (embed_dim == 0) throw ValidationError("embed_dim must be positive");
    if (!(delta >= 0.0 && delta < 1.0)) throw ValidationError("delta must lie in [0, 1)");
    if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("tau must lie in (0, 1)");
    for (double b : betas)
        if (!(b >= 0.0)) throw ValidationError("betas must be non-negative");
    if (!(lr > 0.0)) throw ValidationError("lr must be positive");
    if (batch_size == 0) throw ValidationError("batch_size must be positive");
    if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be non-negative");
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) throw ValidationError("warmup_fraction must lie in [0, 1]");
    if (!(layer_norm_eps > 0.0)) throw ValidationError("layer_norm_eps must be positive");
}

Vocabulary::Vocabulary() { add(kUnknown); }

void Vocabulary::add(const std::string& token) {
    if (index_.emplace(token, tokens_.size()).second) tokens_.push_back(token);
}

Vocabulary Vocabulary::from_corpus(const Corpus& corpus) {
    Vocabulary v;
    for (const auto& rec : corpus.records())
        for (const auto& t : rec.tokens) v.add(t);
    return v;
}

Vocabulary Vocabulary::from_tokens(std::span<const std::string> tokens) {
    Vocabulary v;
    for (const auto& t : tokens) v.add(t);
    return v;
}

std::size_t Vocabulary::index(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? 0 : it->second;
}

std::vector<std::size_t> EncoderModel::token_rows(const SentenceRecord& rec) const {
    std::vector<std::size_t> rows;
    rows.reserve(rec.tokens.size());
    for (const auto& t : rec.tokens) rows.push_back(vocab.index(t));
    return rows;
}

namespace param_names {
namespace {
std::string feature_prefix(const char* group, Feature f) { return std::string(group) + "." + std::string(to_string(f)); }
std::string channel_prefix(Channel c) { return "proj." + std::string(to_string(c)); }
} // namespace

std::string embedding() { return "embedding"; }
std::string adjacency(Feature f) { return feature_prefix("adj", f) + ".W"; }
std::string attention_transform(Feature f, bool shared) {
    return shared ? std::string("attn.shared.W") : feature_prefix("attn", f) + ".W";
}
std::string attention_vector(Feature f, bool shared) {
    return shared ? std::string("attn.shared.a") : feature_prefix("attn", f) + ".a";
}
std::string norm_gamma(Feature f) { return feature_prefix("norm", f) + ".gamma"; }
std::string norm_beta(Feature f) { return feature_prefix("norm", f) + ".beta"; }
std::string proj_w1(Channel c) { return channel_prefix(c) + ".W1"; }
std::string proj_b1(Channel c) { return channel_prefix(c) + ".b1"; }
std::string proj_w2(Channel c) { return channel_prefix(c) + ".W2"; }
std::string proj_b2(Channel c) { return channel_prefix(c) + ".b2"; }
} // namespace param_names

namespace {

ParamStore parameter_shapes(const EncoderConfig& cfg, std::size_t vocab_size) {
    namespace pn = param_names;
    const std::size_t d = cfg.embed_dim;
    ParamStore p;
    p.emplace(pn::embedding(), Tensor2(vocab_size, d));
    for (Feature f : kFeatures) {
        p.emplace(pn::adjacency(f), Tensor2(d, d));
        p.emplace(pn::attention_transform(f, cfg.share_attention_params), Tensor2(d, d));
        p.emplace(pn::attention_vector(f, cfg.share_attention_params), Tensor2(1, 2 * d));
        p.emplace(pn::norm_gamma(f), Tensor2(1, d, 1.0));
        p.emplace(pn::norm_beta(f), Tensor2(1, d));
    }
    for (Channel c : kChannels) {
        p.emplace(pn::proj_w1(c), Tensor2(d, d));
        p.emplace(pn::proj_b1(c), Tensor2(1, d));
        p.emplace(pn::proj_w2(c), Tensor2(d, d));
        p.emplace(pn::proj_b2(c), Tensor2(1, d));
    }
    return p;
}

bool is_weight(const std::string& name) {
    const auto dot = name.rfind('.');
    const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
    return name == param_names::embedding() || leaf == "W" || leaf == "a" || leaf == "W1" || leaf == "W2";
}

} // namespace

EncoderModel init_encoder(const EncoderConfig& config, Vocabulary vocab) {
    config.validate();
    EncoderModel model{config, std::move(vocab), {}};
    model.params = parameter_shapes(config, model.vocab.size());
    const double bound = std::sqrt(1.0 / static_cast<double>(config.embed_dim));
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& [name, tensor] : model.params) {
        if (!is_weight(name)) continue;
        for (double& v : tensor.data()) v = dist(rng);
    }
    return model;
}

std::size_t load_word_vectors(EncoderModel& model, const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    Tensor2& table = model.params.at(param_names::embedding());
    const std::size_t d = model.config.embed_dim;
    std::string line;
    std::size_t line_no = 0, replaced = 0;
    std::vector<bool> done(model.vocab.size(), false);
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream fields(line);
        std::string token;
        if (!(fields >> token)) continue;
        std::vector<double> values;
        double x = 0;
        while (fields >> x) values.push_back(x);
        if (!fields.eof()) throw ValidationError("word vectors line " + std::to_string(line_no) + ": non-numeric value");
        if (values.size() != d) {
            throw ValidationError("word vectors line " + std::to_string(line_no) + ": expected " + std::to_string(d) +
                                  " values, got " + std::to_string(values.size()));
        }
        const std::size_t row = model.vocab.index(token);
        if (row == 0 && token != Vocabulary::kUnknown) continue;
        for (std::size_t c = 0; c < d; ++c) table(row, c) = values[c];
        if (!done[row]) {
            done[row] = true;
            ++replaced;
        }
    }
    return replaced;
}

namespace graph {

ad::Var adaptive_adjacency(ad::Var tokens, ad::Var weight) {
    return ad::sigmoid(ad::matmul(ad::matmul(tokens, weight), ad::transpose(tokens)));
}

ad::Mask neighbor_mask(const Tensor2& adjacency, double delta) {
    const std::size_t n = adjacency.rows();
    ad::Mask mask(adjacency.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        bool any = false;
        std::size_t best = 0;
        for (std::size_t j = 0; j < adjacency.cols(); ++j) {
            if (adjacency(i, j) > delta) {
                mask[i * adjacency.cols() + j] = 1;
                any = true;
            }
            if (adjacency(i, j) > adjacency(i, best)) best = j;
        }
        if (!any && adjacency.cols() > 0) mask[i * adjacency.cols() + best] = 1;
    }
    return mask;
}

ad::Var attention_layer(ad::Var tokens, ad::Var adjacency, const AttentionParams& p, double delta, double eps,
                        double slope) {
    ad::Tape& tape = *tokens.tape;
    const std::size_t n = tokens.rows();
    const std::size_t d = p.transform.cols();
    if (p.vector.cols() != 2 * d || p.vector.rows() != 1) {
        throw ShapeError("attention_layer: attention vector must be 1x" + std::to_string(2 * d) + ", got " +
                         p.vector.value().shape_str());
    }
    ad::Var z = ad::matmul(tokens, p.transform);
    ad::Var left = ad::matmul(z, ad::transpose(ad::slice_cols(p.vector, 0, d)));
    ad::Var right = ad::matmul(z, ad::transpose(ad::slice_cols(p.vector, d, 2 * d)));
    ad::Var ones_col = tape.constant(Tensor2(n, 1, 1.0));
    ad::Var ones_row = tape.constant(Tensor2(1, n, 1.0));
    // scores_ij = a_left . z_i + a_right . z_j
    ad::Var scores = ad::add(ad::matmul(left, ones_row), ad::matmul(ones_col, ad::transpose(right)));
    scores = ad::leaky_relu(scores, slope);
    const ad::Mask mask = neighbor_mask(adjacency.value(), delta);
    ad::Var alpha = ad::masked_softmax_rows(scores, mask);
    ad::Var mixed = ad::matmul(ad::hadamard(alpha, adjacency), z);
    return ad::layer_norm_rows(mixed, p.gamma, p.beta, eps);
}

EncodedSentence encode(const ParamBinding& params, const EncoderConfig& config, std::span<const std::size_t> rows) {
    namespace pn = param_names;
    if (rows.empty()) throw Error("cannot encode an empty sentence");
    ad::Var h = ad::gather_rows(params[pn::embedding()], rows);
    EncodedSentence out;
    for (Feature f : kFeatures) {
        ad::Var adj = adaptive_adjacency(h, params[pn::adjacency(f)]);
        AttentionParams ap{params[pn::attention_transform(f, config.share_attention_params)],
                           params[pn::attention_vector(f, config.share_attention_params)],
                           params[pn::norm_gamma(f)], params[pn::norm_beta(f)]};
        ad::Var tokens = attention_layer(h, adj, ap, config.delta, config.layer_norm_eps, config.leaky_slope);
        out.channels[static_cast<std::size_t>(f)] = ad::mean_rows(tokens);
    }
    const std::array<ad::Var, 3> heads{out.channels[0], out.channels[1], out.channels[2]};
    out.channels[static_cast<std::size_t>(Channel::avg)] = ad::average(heads);
    return out;
}

ad::Var project(const ParamBinding& params, Channel c, ad::Var rows, double slope) {
    namespace pn = param_names;
    ad::Var hidden = ad::leaky_relu(ad::add_row_broadcast(ad::matmul(rows, params[pn::proj_w1(c)]), params[pn::proj_b1(c)]),
                                    slope);
    return ad::add_row_broadcast(ad::matmul(hidden, params[pn::proj_w2(c)]), params[pn::proj_b2(c)]);
}

std::optional<ad::Var> contrastive_loss(ad::Var critic_matrix, const ad::Mask& positives, const ad::Mask& negatives,
                                        double tau) {
    const std::size_t b = critic_matrix.rows();
    if (positives.size() != b * b || negatives.size() != b * b) throw ShapeError("contrastive_loss: mask shape mismatch");
    std::vector<std::size_t> anchors;
    for (std::size_t i = 0; i < b; ++i) {
        bool has_pos = false, has_neg = false;
        for (std::size_t j = 0; j < b; ++j) {
            has_pos = has_pos || positives[i * b + j];
            has_neg = has_neg || negatives[i * b + j];
        }
        if (has_pos && has_neg) anchors.push_back(i);
    }
    if (anchors.empty()) return std::nullopt;
    ad::Tape& tape = *critic_matrix.tape;
    ad::Var scaled = ad::scale(critic_matrix, 1.0 / tau);
    ad::Var lse_pos = ad::masked_logsumexp_rows(scaled, positives);
    ad::Var lse_neg = ad::masked_logsumexp_rows(scaled, negatives);
    Tensor2 weights(b, 1);
    for (std::size_t i : anchors) weights[i] = 1.0 / static_cast<double>(anchors.size());
    return ad::dot(ad::sub(lse_neg, lse_pos), tape.constant(std::move(weights)));
}

} // namespace graph

Tensor2 embed_tokens(const SentenceRecord& rec, const EncoderModel& model) {
    const Tensor2& table = model.params.at(param_names::embedding());
    const auto rows = model.token_rows(rec);
    Tensor2 out(rows.size(), table.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < table.cols(); ++c) out(r, c) = table(rows[r], c);
    return out;
}

Tensor2 adaptive_adjacency(const Tensor2& tokens, const Tensor2& weight) {
    ad::Tape tape;
    return graph::adaptive_adjacency(tape.constant(tokens), tape.constant(weight)).value();
}

Tensor2 attention_layer(const Tensor2& tokens, const Tensor2& adjacency, const Tensor2& transform,
                        const Tensor2& vector, const Tensor2& gamma, const Tensor2& beta, double delta, double eps,
                        double slope) {
    ad::Tape tape;
    graph::AttentionParams p{tape.constant(transform), tape.constant(vector), tape.constant(gamma),
                             tape.constant(beta)};
    return graph::attention_layer(tape.constant(tokens), tape.constant(adjacency), p, delta, eps, slope).value();
}

FeatureEmbeddings encode_sentence(const SentenceRecord& rec, const EncoderModel& model) {
    ad::Tape tape;
    const auto binding = ParamBinding::frozen(tape, model.params);
    const auto rows = model.token_rows(rec);
    const auto enc = graph::encode(binding, model.config, rows);
    FeatureEmbeddings out;
    for (std::size_t c = 0; c < 4; ++c) {
        const auto data = enc.channels[c].value().data();
        out.channels[c].assign(data.begin(), data.end());
    }
    return out;
}

double critic(std::span<const double> u, std::span<const double> v, const EncoderModel& model, Channel c) {
    if (u.size() != model.config.embed_dim || v.size() != model.config.embed_dim) {
        throw ShapeError("critic: inputs must have length " + std::to_string(model.config.embed_dim));
    }
    ad::Tape tape;
    const auto binding = ParamBinding::frozen(tape, model.params);
    const std::array<ad::Var, 2> rows{tape.constant(Tensor2::row(u)), tape.constant(Tensor2::row(v))};
    ad::Var q = ad::l2_normalize_rows(graph::project(binding, c, ad::concat_rows(rows), model.config.leaky_slope));
    const Tensor2& qv = q.value();
    double dot = 0;
    for (std::size_t k = 0; k < qv.cols(); ++k) dot += qv(0, k) * qv(1, k);
    return dot;
}

std::optional<int> channel_label(const FeatureBits& bits, Channel c) {
    if (c != Channel::avg) return bits[static_cast<std::size_t>(c)];
    const int sum = bits[0] + bits[1] + bits[2];
    if (sum == 3) return 1;
    if (sum == 0) return 0;
    return std::nullopt;
}

namespace {

std::uint64_t pair_key(std::size_t i, std::size_t j) {
    if (i > j) std::swap(i, j);
    return (static_cast<std::uint64_t>(i) << 32) | static_cast<std::uint64_t>(j);
}

} // namespace

PairLookup::PairLookup(const Corpus& corpus, const PairSet& pairs) : partners_(corpus.size()), n_(corpus.size()) {
    for (const auto& l : pairs.labels) {
        const auto i = corpus.index_of(l.anchor_id);
        const auto j = corpus.index_of(l.other_id);
        if (!i || !j) continue;
        if (bits_.emplace(pair_key(*i, *j), l.bits).second) {
            partners_[*i].push_back(*j);
            partners_[*j].push_back(*i);
        }
    }
}

std::optional<FeatureBits> PairLookup::bits(std::size_t i, std::size_t j) const {
    auto it = bits_.find(pair_key(i, j));
    if (it == bits_.end()) return std::nullopt;
    return it->second;
}

std::optional<int> PairLookup::label(std::size_t i, std::size_t j, Channel c) const {
    if (i == j) return std::nullopt;
    const auto b = bits(i, j);
    if (!b) return std::nullopt;
    return channel_label(*b, c);
}

namespace {

std::pair<ad::Mask, ad::Mask> batch_masks(std::span<const std::size_t> rows, const PairLookup& labels, Channel c) {
    const std::size_t b = rows.size();
    ad::Mask pos(b * b, 0), neg(b * b, 0);
    for (std::size_t r = 0; r < b; ++r)
        for (std::size_t s = 0; s < b; ++s) {
            const auto l = labels.label(rows[r], rows[s], c);
            if (!l) continue;
            (*l ? pos : neg)[r * b + s] = 1;
        }
    return {std::move(pos), std::move(neg)};
}

ad::Var critic_matrix(const ParamBinding& binding, Channel c, ad::Var rows, double slope) {
    ad::Var q = ad::l2_normalize_rows(graph::project(binding, c, rows, slope));
    return ad::matmul(q, ad::transpose(q));
}

} // namespace

double contrastive_loss(std::span<const FeatureEmbeddings> batch, std::span<const std::size_t> corpus_rows,
                        const PairLookup& labels, Channel c, const EncoderModel& model) {
    if (batch.size() != corpus_rows.size()) throw ShapeError("contrastive_loss: batch/row count mismatch");
    ad::Tape tape;
    const auto binding = ParamBinding::frozen(tape, model.params);
    std::vector<ad::Var> rows;
    for (const auto& e : batch) rows.push_back(tape.constant(Tensor2::row(e[c])));
    const auto [pos, neg] = batch_masks(corpus_rows, labels, c);
    auto loss = graph::contrastive_loss(critic_matrix(binding, c, ad::concat_rows(rows), model.config.leaky_slope), pos,
                                        neg, model.config.tau);
    if (!loss) throw Error("degenerate batch: no anchor has both a positive and a negative");
    return loss->value()[0];
}

double total_loss(double lig, double dom, double sen, double avg, const std::array<double, 3>& betas) {
    return betas[0] * lig + betas[1] * dom + betas[2] * sen + avg;
}

BatchLoss batch_loss(const EncoderModel& model, const Corpus& corpus, std::span<const std::size_t> batch,
                     const PairLookup& labels, GradStore* grads, std::span<const Channel> active) {
    const EncoderConfig& cfg = model.config;
    ad::Tape tape;
    const bool train_embeddings = cfg.train_embeddings;
    ParamBinding binding(tape, model.params, [train_embeddings](const std::string& name) {
        return train_embeddings || name != param_names::embedding();
    });
    std::vector<graph::EncodedSentence> encoded;
    encoded.reserve(batch.size());
    for (std::size_t row : batch) encoded.push_back(graph::encode(binding, cfg, model.token_rows(corpus.record(row))));

    BatchLoss out;
    std::optional<ad::Var> total;
    for (Channel c : active) {
        const auto ci = static_cast<std::size_t>(c);
        std::vector<ad::Var> rows;
        rows.reserve(encoded.size());
        for (const auto& e : encoded) rows.push_back(e.channels[ci]);
        const auto [pos, neg] = batch_masks(batch, labels, c);
        auto loss = graph::contrastive_loss(critic_matrix(binding, c, ad::concat_rows(rows), cfg.leaky_slope), pos, neg,
                                            cfg.tau);
        if (!loss) continue;
        out.channel[ci] = loss->value()[0];
        const double weight = c == Channel::avg ? 1.0 : cfg.betas[ci];
        ad::Var term = ad::scale(*loss, weight);
        total = total ? ad::add(*total, term) : term;
    }
    if (!total) {
        if (grads) grads->clear();
        return out;
    }
    out.total = total->value()[0];
    if (grads) {
        tape.backward(*total);
        *grads = binding.gradients();
    }
    return out;
}

LossFn batch_loss_function(const EncoderModel& model, const Corpus& corpus, std::vector<std::size_t> batch,
                           const PairSet& pairs) {
    auto labels = std::make_shared<const PairLookup>(corpus, pairs);
    return [config = model.config, vocab = model.vocab, &corpus, batch = std::move(batch),
            labels](const ParamStore& params, GradStore* grads) {
        const EncoderModel m{config, vocab, params};
        return batch_loss(m, corpus, batch, *labels, grads).total;
    };
}

std::vector<std::vector<std::size_t>> make_batches(const Corpus& corpus, const PairSet& pairs,
                                                   const PairLookup& labels, std::size_t batch_size,
                                                   std::mt19937_64& rng) {
    if (batch_size == 0) throw ValidationError("batch_size must be positive");
    std::vector<std::pair<std::size_t, std::size_t>> rows;
    rows.reserve(pairs.labels.size());
    for (const auto& l : pairs.labels) {
        const auto i = corpus.index_of(l.anchor_id);
        const auto j = corpus.index_of(l.other_id);
        if (i && j && *i != *j) rows.emplace_back(*i, *j);
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    // Partner preference for top-ups: a per-epoch random ranking of corpus rows.
    std::vector<std::size_t> rank(corpus.size());
    std::iota(rank.begin(), rank.end(), std::size_t{0});
    std::shuffle(rank.begin(), rank.end(), rng);

    const std::size_t cap = 4 * batch_size;
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < rows.size(); start += batch_size) {
        const std::size_t end = std::min(rows.size(), start + batch_size);
        std::vector<std::size_t> batch;
        std::vector<bool> in_batch(corpus.size(), false);
        auto admit = [&](std::size_t r) {
            if (in_batch[r]) return;
            in_batch[r] = true;
            batch.push_back(r);
        };
        for (std::size_t k = start; k < end; ++k) {
            admit(rows[k].first);
            admit(rows[k].second);
        }
        const std::size_t endpoints = batch.size();
        for (std::size_t k = 0; k < endpoints && batch.size() < cap; ++k) {
            const std::size_t anchor = batch[k];
            for (Channel c : kChannels) {
                for (int want : {1, 0}) {
                    if (batch.size() >= cap) break;
                    const bool covered = std::any_of(batch.begin(), batch.end(), [&](std::size_t m) {
                        return labels.label(anchor, m, c) == want;
                    });
                    if (covered) continue;
                    std::optional<std::size_t> pick;
                    for (std::size_t p : labels.partners(anchor)) {
                        if (in_batch[p] || labels.label(anchor, p, c) != want) continue;
                        if (!pick || rank[p] < rank[*pick]) pick = p;
                    }
                    if (pick) admit(*pick);
                }
            }
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

TrainingHistory train_encoder(EncoderModel& model, const Corpus& corpus, const PairSet& pairs,
                              const TrainOptions& options) {
    const EncoderConfig& cfg = model.config;
    cfg.validate();
    auto log = [&](const std::string& msg) {
        if (options.log) options.log(msg);
    };
    TrainingHistory history;
    if (cfg.epochs == 0) return history;
    if (corpus.size() < 2) throw Error("training needs at least 2 sentences");

    const PairLookup labels(corpus, pairs);
    std::vector<Channel> active;
    for (Channel c : kChannels) {
        std::size_t pos = 0, neg = 0;
        for (const auto& l : pairs.labels) {
            const auto lab = channel_label(l.bits, c);
            if (!lab) continue;
            (*lab ? pos : neg)++;
        }
        if (pos == 0 || neg == 0) {
            log("warning: channel " + std::string(to_string(c)) + " has no " + (pos == 0 ? "positive" : "negative") +
                " pairs; skipped");
            history.skipped_channels.push_back(c);
        } else {
            active.push_back(c);
        }
    }
    if (active.empty()) throw Error("degenerate pair set: no channel has both positive and negative pairs");

    OptimizerState state;
    state.config.lr = cfg.lr;
    state.config.weight_decay = cfg.weight_decay;
    state.config.clip_norm = cfg.clip_norm;

    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    const std::size_t batches_per_epoch = (pairs.labels.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.epochs * batches_per_epoch;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = make_batches(corpus, pairs, labels, cfg.batch_size, rng);
        double sum = 0;
        std::size_t counted = 0;
        for (const auto& batch : batches) {
            GradStore grads;
            const BatchLoss bl = batch_loss(model, corpus, batch, labels, &grads, active);
            if (grads.empty()) continue;
            adamw_step(model.params, grads, state, warmup_scale(step, total_steps, cfg.warmup_fraction));
            ++step;
            sum += bl.total;
            ++counted;
        }
        const double mean = counted ? sum / static_cast<double>(counted) : 0.0;
        history.epoch_loss.push_back(mean);
        log("epoch " + std::to_string(epoch + 1) + " loss " + std::to_string(mean));
    }
    history.steps = step;
    return history;
}

CriticGap critic_gap(const EncoderModel& model, const Corpus& corpus, const PairSet& pairs) {
    std::vector<FeatureEmbeddings> enc;
    enc.reserve(corpus.size());
    for (const auto& rec : corpus.records()) enc.push_back(encode_sentence(rec, model));

    // Projected, normalized vectors per channel, computed once per sentence.
    std::array<std::vector<std::vector<double>>, 4> q;
    for (Channel c : kChannels) {
        ad::Tape tape;
        const auto binding = ParamBinding::frozen(tape, model.params);
        std::vector<ad::Var> rows;
        for (const auto& e : enc) rows.push_back(tape.constant(Tensor2::row(e[c])));
        ad::Var proj = ad::l2_normalize_rows(graph::project(binding, c, ad::concat_rows(rows), model.config.leaky_slope));
        const Tensor2& pv = proj.value();
        for (std::size_t r = 0; r < pv.rows(); ++r) {
            const auto row = pv.row_span(r);
            q[static_cast<std::size_t>(c)].emplace_back(row.begin(), row.end());
        }
    }

    CriticGap out;
    for (const auto& l : pairs.labels) {
        const auto i = corpus.index_of(l.anchor_id);
        const auto j = corpus.index_of(l.other_id);
        if (!i || !j) continue;
        for (Channel c : kChannels) {
            const auto lab = channel_label(l.bits, c);
            if (!lab) continue;
            const auto ci = static_cast<std::size_t>(c);
            double g = 0;
            for (std::size_t k = 0; k < q[ci][*i].size(); ++k) g += q[ci][*i][k] * q[ci][*j][k];
            if (*lab) {
                out.mean_positive[ci] += g;
                ++out.positives[ci];
            } else {
                out.mean_negative[ci] += g;
                ++out.negatives[ci];
            }
        }
    }
    for (std::size_t c = 0; c < 4; ++c) {
        if (out.positives[c]) out.mean_positive[c] /= static_cast<double>(out.positives[c]);
        if (out.negatives[c]) out.mean_negative[c] /= static_cast<double>(out.negatives[c]);
    }
    return out;
}

// Checkpoint container:
//   8-byte magic, u32 version, u64 manifest length, manifest JSON,
//   then every tensor (manifest order) and the loss history as little-endian f64.
namespace {

constexpr char kMagic[8] = {'F', 'T', 'R', 'C', 'K', 'P', 'T', '\n'};

ordered_json config_to_json(const EncoderConfig& c) {
    ordered_json j;
    j["embed_dim"] = c.embed_dim;
    j["delta"] = c.delta;
    j["tau"] = c.tau;
    j["betas"] = c.betas;
    j["lr"] = c.lr;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["share_attention_params"] = c.share_attention_params;
    j["train_embeddings"] = c.train_embeddings;
    j["weight_decay"] = c.weight_decay;
    j["warmup_fraction"] = c.warmup_fraction;
    j["clip_norm"] = c.clip_norm;
    j["layer_norm_eps"] = c.layer_norm_eps;
    j["leaky_slope"] = c.leaky_slope;
    return j;
}

EncoderConfig config_from_json(const json& j) {
    EncoderConfig c;
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.delta = j.at("delta").get<double>();
    c.tau = j.at("tau").get<double>();
    c.betas = j.at("betas").get<std::array<double, 3>>();
    c.lr = j.at("lr").get<double>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.share_attention_params = j.at("share_attention_params").get<bool>();
    c.train_embeddings = j.at("train_embeddings").get<bool>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.warmup_fraction = j.at("warmup_fraction").get<double>();
    c.clip_norm = j.at("clip_norm").get<double>();
    c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    return c;
}

} // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    ordered_json manifest;
    manifest["config"] = config_to_json(ckpt.model.config);
    manifest["vocab"] = ckpt.model.vocab.tokens();
    manifest["registry_snapshot"] = ckpt.registry_snapshot_path;
    manifest["registry_fingerprint"] = ckpt.registry_fingerprint;
    ordered_json tensors = ordered_json::array();
    for (const auto& [name, t] : ckpt.model.params) {
        tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
    }
    manifest["tensors"] = std::move(tensors);
    manifest["history_length"] = ckpt.history.size();
    const std::string text = manifest.dump();

    std::string out(kMagic, sizeof(kMagic));
    put_u32(out, Checkpoint::kVersion);
    put_u64(out, text.size());
    out += text;
    for (const auto& [name, t] : ckpt.model.params)
        for (double v : t.data()) put_f64(out, v);
    for (double v : ckpt.history) put_f64(out, v);
    return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
    ByteReader in(bytes, "checkpoint");
    if (in.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
        throw ValidationError("not a checkpoint file (bad magic)");
    }
    const auto version = in.u32();
    if (version != Checkpoint::kVersion) {
        throw ValidationError("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint64_t manifest_len = in.u64();
    json manifest;
    try {
        manifest = json::parse(in.take(static_cast<std::size_t>(manifest_len)));
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("checkpoint manifest: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        ckpt.model.config = config_from_json(manifest.at("config"));
        ckpt.model.config.validate();
        ckpt.model.vocab = Vocabulary::from_tokens(manifest.at("vocab").get<std::vector<std::string>>());
        if (ckpt.model.vocab.size() != manifest.at("vocab").size()) {
            throw ValidationError("checkpoint vocabulary has duplicate tokens");
        }
        ckpt.registry_snapshot_path = manifest.at("registry_snapshot").get<std::string>();
        ckpt.registry_fingerprint = manifest.at("registry_fingerprint").get<std::string>();

        const ParamStore expected = parameter_shapes(ckpt.model.config, ckpt.model.vocab.size());
        const json& tensors = manifest.at("tensors");
        if (tensors.size() != expected.size()) throw ValidationError("checkpoint tensor count does not match config");
        for (const auto& entry : tensors) {
            const auto name = entry.at("name").get<std::string>();
            const auto rows = entry.at("rows").get<std::size_t>();
            const auto cols = entry.at("cols").get<std::size_t>();
            auto it = expected.find(name);
            if (it == expected.end()) throw ValidationError("checkpoint has unexpected tensor '" + name + "'");
            if (it->second.rows() != rows || it->second.cols() != cols) {
                throw ValidationError("checkpoint tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                                      std::to_string(cols) + ", expected " + it->second.shape_str());
            }
            std::vector<double> data(rows * cols);
            for (double& v : data) v = in.f64();
            if (!ckpt.model.params.emplace(name, Tensor2(rows, cols, std::move(data))).second) {
                throw ValidationError("checkpoint repeats tensor '" + name + "'");
            }
        }
        const auto hist = manifest.at("history_length").get<std::size_t>();
        ckpt.history.resize(hist);
        for (double& v : ckpt.history) v = in.f64();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("checkpoint manifest: ") + e.what());
    }
    if (!in.at_end()) throw ValidationError("checkpoint has trailing bytes");
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    write_text_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_text_file(path)); }

std::string checkpoint_digest(const Checkpoint& ckpt) { return sha256_hex(serialize_checkpoint(ckpt)); }

} // namespace featret
