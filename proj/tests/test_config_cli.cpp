#include "doctest.h"
#include "support.hpp"

#include "featret/config.hpp"
#include "featret/error.hpp"
#include "featret/io.hpp"
#include "featret/pipeline.hpp"
#include "featret/synthetic.hpp"

#include <filesystem>
#include <sstream>

using namespace featret;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string log;
};

Run run(const std::string& command, const PipelineConfig& cfg, const CommandOptions& options = {}) {
    std::ostringstream out, log;
    const int code = run_command(command, cfg, options, out, log);
    return {code, out.str(), log.str()};
}

bool has_line(const std::string& text, const std::string& prefix) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (line.rfind(prefix, 0) == 0) return true;
    return false;
}

} // namespace

TEST_CASE("empty config gives the defaults") {
    const auto cfg = parse_config("");
    CHECK(cfg.heuristics.theta_lig == 0.43);
    CHECK(cfg.heuristics.theta_dom == 0.5);
    CHECK(cfg.heuristics.theta_sen == 0.8);
    CHECK(cfg.encoder.tau == 0.1);
    CHECK(cfg.encoder.delta == 0.2);
    CHECK(cfg.encoder.batch_size == 128);
    CHECK(cfg.encoder.betas == std::array<double, 3>{1, 1, 1});
    CHECK(cfg.policy.k() == 5);
}

TEST_CASE("config errors name the key or line") {
    CHECK_THROWS_WITH_AS(parse_config("theta_lig = 1.5\n"), doctest::Contains("theta_lig"), ValidationError);
    CHECK_THROWS_WITH_AS(parse_config("foo = 1\n"), doctest::Contains("foo"), ValidationError);
    CHECK_THROWS_WITH(parse_config("tau = 0.2\ntau = 0.3\n"), doctest::Contains("line 2"));
    CHECK_THROWS_WITH(parse_config("epochs = ten\n"), doctest::Contains("epochs"));
    CHECK_THROWS(parse_config("just words\n"));
}

TEST_CASE("config values, comments and rendering") {
    const auto cfg = parse_config("# comment\n\nembed_dim = 16  # trailing\ncorpus = some/path.jsonl\nk_avg = 3\n"
                                  "share_attention_params = true\nindex_mode = approximate\n");
    CHECK(cfg.encoder.embed_dim == 16);
    CHECK(cfg.paths.corpus == "some/path.jsonl");
    CHECK(cfg.policy.k() == 6);
    CHECK(cfg.encoder.share_attention_params);
    CHECK(cfg.index_mode == IndexMode::approximate);
    const auto again = parse_config(render_config(cfg));
    CHECK(render_config(again) == render_config(cfg));

    PipelineConfig c2;
    apply_config_value(c2, "tau", "0.05");
    CHECK(c2.encoder.tau == 0.05);
    CHECK_THROWS(apply_config_value(c2, "nope", "1"));
}

TEST_CASE("validate command on the fixture") {
    PipelineConfig cfg;
    cfg.paths.corpus = support::source_path("data/fixture_corpus.jsonl");
    const auto r = run("validate", cfg);
    CHECK(r.code == kExitOk);
    CHECK(r.log.find("0 violations") != std::string::npos);
}

TEST_CASE("usage and validation exit codes") {
    PipelineConfig cfg;
    CHECK(run("validate", cfg).code == kExitUsage);
    CHECK(run("no-such-command", cfg).code == kExitUsage);
    cfg.paths.corpus = "/nonexistent/corpus.jsonl";
    CHECK(run("validate", cfg).code == kExitValidation);
    CHECK(policy_for_k(5).counts == std::array<std::size_t, 4>{1, 1, 1, 2});
    CHECK(policy_for_k(7).counts == std::array<std::size_t, 4>{1, 1, 1, 4});
    CHECK_THROWS(policy_for_k(2));
}

TEST_CASE("whole pipeline through the command layer") {
    const fs::path dir = fs::temp_directory_path() / "featret_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_corpus(generate_synthetic_corpus({.sentences = 30, .seed = 4}), dir / "corpus.jsonl");

    PipelineConfig cfg;
    cfg.paths.corpus = (dir / "corpus.jsonl").string();
    cfg.paths.pairs = (dir / "pairs.jsonl").string();
    cfg.paths.checkpoint = (dir / "model.ckpt").string();
    cfg.paths.index = (dir / "index.bin").string();
    cfg.paths.template_file = support::source_path("data/default_template.txt");
    cfg.paths.sft_output = (dir / "sft.jsonl").string();
    cfg.encoder.embed_dim = 8;
    cfg.encoder.epochs = 2;
    cfg.encoder.batch_size = 32;
    cfg.pair_budget = 200;
    cfg.split_ratio = 0.2;

    CHECK(run("stats", cfg).out.find("domain=Overall") != std::string::npos);
    const auto pairs = run("gen-pairs", cfg);
    REQUIRE(pairs.code == kExitOk);
    const auto train = run("train", cfg);
    REQUIRE(train.code == kExitOk);
    CHECK(fs::exists(registry_snapshot_path(cfg.paths.checkpoint)));
    REQUIRE(run("build-index", cfg).code == kExitOk);

    CommandOptions opts;
    opts.record_id = "s3";
    opts.k = 5;
    const auto retrieved = run("retrieve", cfg, opts);
    REQUIRE(retrieved.code == kExitOk);
    CHECK(has_line(retrieved.out, "rank=5 "));
    CHECK_FALSE(has_line(retrieved.out, "rank=6 "));

    opts.record_id.clear();
    CHECK(run("retrieve", cfg, opts).code == kExitUsage);

    const auto sft = run("emit-sft", cfg);
    REQUIRE(sft.code == kExitOk);
    CHECK(fs::file_size(cfg.paths.sft_output) > 0);
    CHECK(run("hit-rate", cfg).code == kExitOk);

    CommandOptions gc;
    gc.gradcheck_dim = 4;
    const auto check = run("gradcheck", cfg, gc);
    CHECK(check.code == kExitOk);
    CHECK(has_line(check.out, "status=pass"));

    write_text_file(dir / "pred.jsonl", "{\"id\":\"s1\",\"text\":\"NONE\"}\n");
    cfg.paths.predictions = (dir / "pred.jsonl").string();
    const auto eval = run("evaluate", cfg);
    CHECK(eval.code == kExitOk);
    CHECK(has_line(eval.out, "domain=Overall"));
    fs::remove_all(dir);
}
