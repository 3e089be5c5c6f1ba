#include "featret/pipeline.hpp"

#include "featret/error.hpp"
#include "featret/io.hpp"
#include "featret/promptkit.hpp"

#include <cstdio>
#include <map>
#include <set>
#include <sstream>

namespace featret {

namespace {

const std::string& require_path(const std::string& value, const char* key) {
    if (value.empty()) throw UsageError(std::string("config key '") + key + "' must be set for this command");
    return value;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

using Handler = int (*)(const PipelineConfig&, const CommandOptions&, std::ostream&, std::ostream&);

int cmd_validate(const PipelineConfig& cfg, const CommandOptions&, std::ostream& out, std::ostream& log) {
    const std::string text = read_text_file(require_path(cfg.paths.corpus, "corpus"));
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0, records = 0;
    std::vector<std::string> violations;
    std::set<std::string> ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        ++records;
        const std::string where = "line " + std::to_string(line_no) + ": ";
        SentenceRecord rec;
        try {
            rec = parse_record_json(line);
        } catch (const ValidationError& e) {
            violations.push_back(where + e.what());
            continue;
        }
        for (const auto& rule : validate_record(rec)) violations.push_back(where + "record '" + rec.id + "': " + rule);
        if (!rec.id.empty() && !ids.insert(rec.id).second) {
            violations.push_back(where + "record '" + rec.id + "': duplicate id");
        }
    }
    if (records == 0) violations.push_back("empty corpus");
    for (const auto& v : violations) log << v << '\n';
    log << violations.size() << " violations\n";
    out << "records=" << records << '\n' << "violations=" << violations.size() << '\n';
    return violations.empty() ? kExitOk : kExitValidation;
}

void print_stats_row(std::ostream& out, const DomainStats& row) {
    out << "domain=" << row.domain << " sentences=" << row.sentences << " pairs=" << row.pairs
        << " positive=" << row.positive << " negative=" << row.negative << " neutral=" << row.neutral << '\n';
}

int cmd_stats(const PipelineConfig& cfg, const CommandOptions& options, std::ostream& out, std::ostream&) {
    const Corpus corpus = load_corpus(require_path(cfg.paths.corpus, "corpus"));
    const CorpusStats stats = options.domains.empty() ? corpus_stats(corpus) : corpus_stats(corpus, options.domains);
    for (const auto& row : stats.rows) print_stats_row(out, row);
    print_stats_row(out, stats.overall);
    return kExitOk;
}

int cmd_gen_pairs(const PipelineConfig& cfg, const CommandOptions&, std::ostream& out, std::ostream& log) {
    const std::string& path = require_path(cfg.paths.pairs, "pairs");
    const auto parts = load_corpus_parts(cfg, false);
    log << "labeling pairs over " << parts.train.size() << " training sentences\n";
    const PairSet set =
        generate_pair_set(parts.train, cfg.heuristics, {cfg.pair_budget, cfg.pair_seed, cfg.pair_threads});
    write_pair_set(set, path);
    out << "sentences=" << parts.train.size() << '\n' << "pairs=" << set.labels.size() << '\n';
    for (Feature f : kFeatures) {
        const auto& c = set.counts[static_cast<std::size_t>(f)];
        out << to_string(f) << "_positive=" << c.positive << '\n' << to_string(f) << "_negative=" << c.negative << '\n';
    }
    out << "path=" << path << '\n';
    return kExitOk;
}

int cmd_train(const PipelineConfig& cfg, const CommandOptions&, std::ostream& out, std::ostream& log) {
    const std::string& ckpt_path = require_path(cfg.paths.checkpoint, "checkpoint");
    const auto parts = load_corpus_parts(cfg, false);
    const PairSet pairs = load_pair_set(require_path(cfg.paths.pairs, "pairs"));
    EncoderModel model = init_encoder(cfg.encoder, Vocabulary::from_corpus(parts.train));
    if (!cfg.paths.word_vectors.empty()) {
        const auto replaced = load_word_vectors(model, cfg.paths.word_vectors);
        log << "initialized " << replaced << " embedding rows from " << cfg.paths.word_vectors << '\n';
    }
    TrainOptions topts;
    topts.log = [&log](const std::string& msg) { log << msg << '\n'; };
    const TrainingHistory history = train_encoder(model, parts.train, pairs, topts);

    const std::string snapshot = registry_snapshot_path(ckpt_path);
    write_text_file(snapshot, parts.train.registry().snapshot_json());
    Checkpoint ckpt{std::move(model), snapshot, parts.train.registry().fingerprint(), history.epoch_loss};
    save_checkpoint(ckpt, ckpt_path);

    const CriticGap gap = critic_gap(ckpt.model, parts.train, pairs);
    out << "sentences=" << parts.train.size() << '\n' << "epochs=" << history.epoch_loss.size() << '\n'
        << "steps=" << history.steps << '\n';
    if (!history.epoch_loss.empty()) {
        out << "first_epoch_loss=" << fmt(history.epoch_loss.front()) << '\n'
            << "final_epoch_loss=" << fmt(history.epoch_loss.back()) << '\n';
    }
    for (Channel c : history.skipped_channels) out << "skipped_channel=" << to_string(c) << '\n';
    for (Channel c : kChannels) out << "critic_gap_" << to_string(c) << '=' << fmt(gap.gap(c)) << '\n';
    out << "checkpoint=" << ckpt_path << '\n' << "checkpoint_sha256=" << checkpoint_digest(ckpt) << '\n';
    return kExitOk;
}

Checkpoint load_checked_checkpoint(const PipelineConfig& cfg) {
    return load_checkpoint(require_path(cfg.paths.checkpoint, "checkpoint"));
}

FeatureIndex load_checked_index(const PipelineConfig& cfg, const Checkpoint& ckpt) {
    FeatureIndex index = load_index(require_path(cfg.paths.index, "index"));
    if (index.checkpoint_digest() != checkpoint_digest(ckpt)) {
        throw ValidationError("index '" + cfg.paths.index + "' was built from a different checkpoint");
    }
    return index;
}

int cmd_build_index(const PipelineConfig& cfg, const CommandOptions&, std::ostream& out, std::ostream& log) {
    const std::string& path = require_path(cfg.paths.index, "index");
    const Checkpoint ckpt = load_checked_checkpoint(cfg);
    const auto parts = load_corpus_parts(cfg, false);
    log << "encoding " << parts.train.size() << " training sentences\n";
    const FeatureIndex index = build_index(parts.train, ckpt, cfg.index_mode, cfg.graph);
    save_index(index, path);
    out << "rows=" << index.size() << '\n' << "dim=" << index.dim() << '\n' << "mode=" << to_string(index.mode())
        << '\n' << "checkpoint_sha256=" << index.checkpoint_digest() << '\n' << "path=" << path << '\n';
    return kExitOk;
}

int cmd_retrieve(const PipelineConfig& cfg, const CommandOptions& options, std::ostream& out, std::ostream&) {
    if (options.record_id.empty()) throw UsageError("retrieve needs --id");
    const Checkpoint ckpt = load_checked_checkpoint(cfg);
    const FeatureIndex index = load_checked_index(cfg, ckpt);
    const auto parts = load_corpus_parts(cfg, false);
    const SentenceRecord* query = nullptr;
    if (auto i = parts.full.index_of(options.record_id)) query = &parts.full.record(*i);
    else if (auto j = parts.heldout.index_of(options.record_id)) query = &parts.heldout.record(*j);
    if (!query) throw ValidationError("no sentence with id '" + options.record_id + "'");
    const RetrievalPolicy policy =
        options.k ? policy_for_k(*options.k, cfg.policy.keep_channel_order) : cfg.policy;
    const ExemplarSet exemplars = retrieve_exemplars(index, *query, ckpt.model, policy);
    out << "query=" << query->id << '\n' << "k=" << exemplars.size() << '\n';
    for (std::size_t r = 0; r < exemplars.size(); ++r) {
        const auto& ex = exemplars[r];
        out << "rank=" << r + 1 << " id=" << ex.record_id << " channel=" << to_string(ex.channel)
            << " distance=" << fmt(ex.distance) << '\n';
    }
    return kExitOk;
}

int cmd_emit_sft(const PipelineConfig& cfg, const CommandOptions&, std::ostream& out, std::ostream& log) {
    const std::string& path = require_path(cfg.paths.sft_output, "sft_output");
    const Checkpoint ckpt = load_checked_checkpoint(cfg);
    const FeatureIndex index = load_checked_index(cfg, ckpt);
    const PromptTemplate tpl = load_template(require_path(cfg.paths.template_file, "template"));
    const auto parts = load_corpus_parts(cfg, false);
    log << "rendering prompts for " << parts.train.size() << " sentences\n";
    const std::string text = render_sft_dataset(parts.train, parts.train, index, ckpt, tpl, cfg.policy);
    write_text_file(path, text);
    out << "records=" << parts.train.size() << '\n' << "path=" << path << '\n' << "sha256=" << sha256_hex(text) << '\n';
    return kExitOk;
}

void print_hits(std::ostream& out, const std::string& scope, const HitCounts& h) {
    out << "domain=" << scope << " queries=" << h.queries;
    for (Feature f : kFeatures) out << ' ' << to_string(f) << '=' << fmt(h.rate(f));
    out << '\n';
}

int cmd_hit_rate(const PipelineConfig& cfg, const CommandOptions&, std::ostream& out, std::ostream& log) {
    const Checkpoint ckpt = load_checked_checkpoint(cfg);
    const FeatureIndex index = load_checked_index(cfg, ckpt);
    const auto parts = load_corpus_parts(cfg, true);
    log << "judging retrieval for " << parts.heldout.size() << " held-out sentences\n";
    const HitRateReport report =
        retrieval_hit_rate(index, parts.train, parts.heldout, ckpt.model, cfg.heuristics, cfg.policy);
    for (const auto& [domain, h] : report.per_domain) print_hits(out, domain, h);
    print_hits(out, "Overall", report.overall);
    return kExitOk;
}

void print_scores(std::ostream& out, const std::string& scope, const DomainScore& s) {
    out << "domain=" << scope << " macro_f1=" << fmt(s.macro_f1());
    for (Polarity p : {Polarity::positive, Polarity::negative, Polarity::neutral}) {
        const auto& c = s.classes[static_cast<std::size_t>(p)];
        out << ' ' << to_string(p) << "_f1=" << fmt(c.f1());
    }
    out << '\n';
}

int cmd_evaluate(const PipelineConfig& cfg, const CommandOptions& options, std::ostream& out, std::ostream& log) {
    std::string gold_path = options.gold;
    if (gold_path.empty()) gold_path = cfg.paths.eval_corpus;
    if (gold_path.empty()) gold_path = require_path(cfg.paths.corpus, "corpus");
    const Corpus gold = load_corpus(gold_path);
    const auto predictions = load_predictions(require_path(cfg.paths.predictions, "predictions"));
    const EvalReport report = evaluate_predictions(gold, predictions);
    for (const auto& d : report.diagnostics) log << d << '\n';
    for (const auto& [domain, s] : report.per_domain) print_scores(out, domain, s);
    print_scores(out, "Overall", report.overall);
    out << "diagnostics=" << report.diagnostics.size() << '\n';
    return kExitOk;
}

int cmd_gradcheck(const PipelineConfig& cfg, const CommandOptions& options, std::ostream& out, std::ostream& log) {
    const auto parts = load_corpus_parts(cfg, false);
    if (parts.train.size() < 3) throw ValidationError("gradcheck needs at least 3 training sentences");
    const std::vector<std::size_t> rows{0, 1, 2};
    const Corpus batch = parts.train.subset(rows);
    PairSet pairs;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = i + 1; j < 3; ++j) {
            const auto profile = similarity_profile(view_of(batch, i), view_of(batch, j), cfg.heuristics);
            pairs.labels.push_back({batch.record(i).id, batch.record(j).id, label_pair(profile, cfg.heuristics), profile});
        }
    pairs.recount();

    EncoderConfig ecfg = cfg.encoder;
    ecfg.embed_dim = options.gradcheck_dim;
    const EncoderModel model = init_encoder(ecfg, Vocabulary::from_corpus(batch));
    const PairLookup lookup(batch, pairs);
    const BatchLoss probe = batch_loss(model, batch, rows, lookup, nullptr);
    std::string active;
    for (Channel c : kChannels)
        if (probe.channel[static_cast<std::size_t>(c)]) active += (active.empty() ? "" : ",") + std::string(to_string(c));
    if (active.empty()) throw ValidationError("degenerate batch: no channel has an anchor with both a positive and a negative");
    log << "checking gradients of the batch loss over " << model.params.size() << " parameter tensors\n";

    GradcheckOptions gopts;
    gopts.stride = options.gradcheck_stride;
    const GradcheckReport report = gradcheck(batch_loss_function(model, batch, rows, pairs), model.params, gopts);
    const bool ok = report.passed(options.gradcheck_tol);
    out << "sentences=" << batch.record(0).id << ',' << batch.record(1).id << ',' << batch.record(2).id << '\n'
        << "active_channels=" << active << '\n' << "loss=" << fmt(probe.total) << '\n'
        << "checked=" << report.checked << '\n';
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", report.worst_error);
    out << "max_relative_error=" << buf << '\n' << "worst_param=" << report.worst_param << '\n';
    std::snprintf(buf, sizeof buf, "%.0e", options.gradcheck_tol);
    out << "tolerance=" << buf << '\n' << "status=" << (ok ? "pass" : "fail") << '\n';
    return ok ? kExitOk : kExitValidation;
}

const std::map<std::string, Handler>& handlers() {
    static const std::map<std::string, Handler> table{
        {"validate", cmd_validate},   {"stats", cmd_stats},       {"gen-pairs", cmd_gen_pairs},
        {"train", cmd_train},         {"build-index", cmd_build_index}, {"retrieve", cmd_retrieve},
        {"emit-sft", cmd_emit_sft},   {"hit-rate", cmd_hit_rate}, {"evaluate", cmd_evaluate},
        {"gradcheck", cmd_gradcheck},
    };
    return table;
}

} // namespace

std::vector<std::string> command_names() {
    return {"validate", "stats",    "gen-pairs", "train",    "build-index",
            "retrieve", "emit-sft", "hit-rate",  "evaluate", "gradcheck"};
}

RetrievalPolicy policy_for_k(std::size_t k, bool keep_channel_order) {
    if (k < 3) throw UsageError("--k must be at least 3 (one exemplar per feature channel)");
    RetrievalPolicy p;
    p.counts = {1, 1, 1, k - 3};
    p.keep_channel_order = keep_channel_order;
    return p;
}

std::string registry_snapshot_path(const std::string& checkpoint_path) { return checkpoint_path + ".registry.json"; }

CorpusParts load_corpus_parts(const PipelineConfig& cfg, bool need_heldout) {
    CorpusParts parts;
    parts.full = load_corpus(require_path(cfg.paths.corpus, "corpus"));
    if (cfg.split_ratio > 0.0) {
        auto [train, heldout] = split_dataset(parts.full, cfg.split_ratio, cfg.split_seed);
        parts.train = std::move(train);
        parts.heldout = std::move(heldout);
    } else {
        parts.train = parts.full;
    }
    if (!cfg.paths.eval_corpus.empty()) parts.heldout = load_corpus(cfg.paths.eval_corpus, &parts.full.registry());
    if (need_heldout && parts.heldout.empty()) {
        throw UsageError("no held-out sentences: set split_ratio above 0 or eval_corpus");
    }
    return parts;
}

int run_command(const std::string& command, const PipelineConfig& cfg, const CommandOptions& options,
                std::ostream& out, std::ostream& log) {
    const auto it = handlers().find(command);
    if (it == handlers().end()) {
        log << "error: unknown command '" << command << "'\n";
        return kExitUsage;
    }
    try {
        return it->second(cfg, options, out, log);
    } catch (const UsageError& e) {
        log << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return kExitValidation;
    }
}

} // namespace featret
