#include "featret/config.hpp"
#include "featret/error.hpp"
#include "featret/pipeline.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv) {
    using namespace featret;
    CLI::App app{"Feature-aware exemplar retrieval pipeline for aspect sentiment pair extraction"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("-c,--config", config_path, "key = value config file");
    app.add_option("-s,--set", overrides, "override one config key, as key=value (repeatable)");

    CommandOptions options;
    std::size_t k = 0;
    const std::map<std::string, std::string> help{
        {"validate", "check every corpus record and report violations"},
        {"stats", "per-domain sentence and sentiment-pair counts"},
        {"gen-pairs", "label and rebalance training sentence pairs"},
        {"train", "train the graph attention encoder and write a checkpoint"},
        {"build-index", "encode the training sentences into a retrieval index"},
        {"retrieve", "print the exemplars retrieved for one sentence"},
        {"emit-sft", "write instruction-tuning records for the training sentences"},
        {"hit-rate", "judge retrieved exemplars on held-out sentences with the heuristic rules"},
        {"evaluate", "score model predictions with Macro-F1"},
        {"gradcheck", "finite-difference check of the encoder loss gradients"},
    };
    std::map<std::string, CLI::App*> subs;
    for (const auto& name : command_names()) subs[name] = app.add_subcommand(name, help.at(name));
    subs["retrieve"]->add_option("--id", options.record_id, "sentence id")->required();
    subs["retrieve"]->add_option("--k", k, "number of exemplars (one per feature, the rest averaged)");
    subs["stats"]->add_option("--domain", options.domains, "restrict to these domains (repeatable)");
    subs["evaluate"]->add_option("--gold", options.gold, "gold corpus (default: eval_corpus, then corpus)");
    subs["gradcheck"]->add_option("--dim", options.gradcheck_dim, "embedding size of the checked model")
        ->check(CLI::PositiveNumber);
    subs["gradcheck"]->add_option("--stride", options.gradcheck_stride, "check every n-th parameter entry")
        ->check(CLI::PositiveNumber);
    subs["gradcheck"]->add_option("--tol", options.gradcheck_tol, "maximum relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }
    if (k != 0) options.k = k;

    PipelineConfig cfg;
    try {
        if (!config_path.empty()) cfg = load_config(config_path);
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
            apply_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
        cfg.validate();
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    }

    for (const auto& [name, sub] : subs)
        if (sub->parsed()) return run_command(name, cfg, options, std::cout, std::cerr);
    return kExitUsage;
}
