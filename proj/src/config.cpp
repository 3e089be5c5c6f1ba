#include "featret/config.hpp"

#include "featret/error.hpp"
#include "featret/io.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace featret {

namespace {

struct Field {
    std::function<void(PipelineConfig&, const std::string&)> set;
    std::function<std::string(const PipelineConfig&)> get;
};

double parse_double(const std::string& v) {
    double out = 0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ValidationError("expected a number, got '" + v + "'");
    return out;
}

std::uint64_t parse_unsigned(const std::string& v) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ValidationError("expected a non-negative integer, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ValidationError("expected true or false, got '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string show(double v) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

Field path_field(std::string PipelinePaths::*member) {
    return {[member](PipelineConfig& c, const std::string& v) { c.paths.*member = v; },
            [member](const PipelineConfig& c) { return c.paths.*member; }};
}

template <typename Get>
Field double_field(Get ref) {
    return {[ref](PipelineConfig& c, const std::string& v) { ref(c) = parse_double(v); },
            [ref](const PipelineConfig& c) {
                PipelineConfig copy = c;
                return show(ref(copy));
            }};
}

template <typename Get>
Field size_field(Get ref) {
    return {[ref](PipelineConfig& c, const std::string& v) { ref(c) = static_cast<std::decay_t<decltype(ref(c))>>(parse_unsigned(v)); },
            [ref](const PipelineConfig& c) {
                PipelineConfig copy = c;
                return std::to_string(ref(copy));
            }};
}

template <typename Get>
Field bool_field(Get ref) {
    return {[ref](PipelineConfig& c, const std::string& v) { ref(c) = parse_bool(v); },
            [ref](const PipelineConfig& c) {
                PipelineConfig copy = c;
                return std::string(ref(copy) ? "true" : "false");
            }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
    using C = PipelineConfig;
    static const std::vector<std::pair<std::string, Field>> table{
        {"corpus", path_field(&PipelinePaths::corpus)},
        {"eval_corpus", path_field(&PipelinePaths::eval_corpus)},
        {"pairs", path_field(&PipelinePaths::pairs)},
        {"checkpoint", path_field(&PipelinePaths::checkpoint)},
        {"index", path_field(&PipelinePaths::index)},
        {"template", path_field(&PipelinePaths::template_file)},
        {"sft_output", path_field(&PipelinePaths::sft_output)},
        {"predictions", path_field(&PipelinePaths::predictions)},
        {"word_vectors", path_field(&PipelinePaths::word_vectors)},
        {"sigma", double_field([](C& c) -> double& { return c.heuristics.sigma; })},
        {"theta_lig", double_field([](C& c) -> double& { return c.heuristics.theta_lig; })},
        {"theta_dom", double_field([](C& c) -> double& { return c.heuristics.theta_dom; })},
        {"theta_sen", double_field([](C& c) -> double& { return c.heuristics.theta_sen; })},
        {"pair_budget", size_field([](C& c) -> std::size_t& { return c.pair_budget; })},
        {"pair_threads", size_field([](C& c) -> std::size_t& { return c.pair_threads; })},
        {"pair_seed", size_field([](C& c) -> std::uint64_t& { return c.pair_seed; })},
        {"embed_dim", size_field([](C& c) -> std::size_t& { return c.encoder.embed_dim; })},
        {"delta", double_field([](C& c) -> double& { return c.encoder.delta; })},
        {"tau", double_field([](C& c) -> double& { return c.encoder.tau; })},
        {"beta_lig", double_field([](C& c) -> double& { return c.encoder.betas[0]; })},
        {"beta_dom", double_field([](C& c) -> double& { return c.encoder.betas[1]; })},
        {"beta_sen", double_field([](C& c) -> double& { return c.encoder.betas[2]; })},
        {"lr", double_field([](C& c) -> double& { return c.encoder.lr; })},
        {"epochs", size_field([](C& c) -> std::size_t& { return c.encoder.epochs; })},
        {"batch_size", size_field([](C& c) -> std::size_t& { return c.encoder.batch_size; })},
        {"seed", size_field([](C& c) -> std::uint64_t& { return c.encoder.seed; })},
        {"share_attention_params", bool_field([](C& c) -> bool& { return c.encoder.share_attention_params; })},
        {"train_embeddings", bool_field([](C& c) -> bool& { return c.encoder.train_embeddings; })},
        {"weight_decay", double_field([](C& c) -> double& { return c.encoder.weight_decay; })},
        {"warmup_fraction", double_field([](C& c) -> double& { return c.encoder.warmup_fraction; })},
        {"clip_norm", double_field([](C& c) -> double& { return c.encoder.clip_norm; })},
        {"k_avg", size_field([](C& c) -> std::size_t& { return c.policy.counts[3]; })},
        {"k_lig", size_field([](C& c) -> std::size_t& { return c.policy.counts[0]; })},
        {"k_dom", size_field([](C& c) -> std::size_t& { return c.policy.counts[1]; })},
        {"k_sen", size_field([](C& c) -> std::size_t& { return c.policy.counts[2]; })},
        {"keep_channel_order", bool_field([](C& c) -> bool& { return c.policy.keep_channel_order; })},
        {"index_mode",
         {[](C& c, const std::string& v) { c.index_mode = parse_index_mode(v); },
          [](const C& c) { return std::string(to_string(c.index_mode)); }}},
        {"graph_max_links", size_field([](C& c) -> std::size_t& { return c.graph.max_links; })},
        {"graph_ef_construction", size_field([](C& c) -> std::size_t& { return c.graph.ef_construction; })},
        {"graph_ef_search", size_field([](C& c) -> std::size_t& { return c.graph.ef_search; })},
        {"split_ratio", double_field([](C& c) -> double& { return c.split_ratio; })},
        {"split_seed", size_field([](C& c) -> std::uint64_t& { return c.split_seed; })},
    };
    return table;
}

const Field& field(const std::string& key) {
    for (const auto& [name, f] : fields())
        if (name == key) return f;
    throw ValidationError("unknown config key '" + key + "'");
}

void check_unit(double v, const char* key, bool open_low, bool open_high) {
    const bool low_ok = open_low ? v > 0.0 : v >= 0.0;
    const bool high_ok = open_high ? v < 1.0 : v <= 1.0;
    if (!low_ok || !high_ok) {
        throw ValidationError(std::string(key) + " must lie in " + (open_low ? "(" : "[") + "0, 1" +
                              (open_high ? ")" : "]") + ", got " + show(v));
    }
}

} // namespace

void PipelineConfig::validate() const {
    if (!(heuristics.sigma > 0.0)) throw ValidationError("sigma must be positive, got " + show(heuristics.sigma));
    check_unit(heuristics.theta_lig, "theta_lig", false, false);
    check_unit(heuristics.theta_dom, "theta_dom", false, false);
    check_unit(heuristics.theta_sen, "theta_sen", false, false);
    if (pair_budget < 2) throw ValidationError("pair_budget must be at least 2");
    if (pair_threads == 0) throw ValidationError("pair_threads must be positive");
    if (encoder.embed_dim == 0) throw ValidationError("embed_dim must be positive");
    check_unit(encoder.delta, "delta", false, true);
    check_unit(encoder.tau, "tau", true, true);
    for (std::size_t f = 0; f < 3; ++f) {
        if (!(encoder.betas[f] >= 0.0)) {
            throw ValidationError(std::string("beta_") + std::string(to_string(kFeatures[f])) + " must be non-negative");
        }
    }
    if (!(encoder.lr > 0.0)) throw ValidationError("lr must be positive");
    if (encoder.epochs == 0) throw ValidationError("epochs must be positive");
    if (encoder.batch_size == 0) throw ValidationError("batch_size must be positive");
    if (!(encoder.weight_decay >= 0.0)) throw ValidationError("weight_decay must be non-negative");
    check_unit(encoder.warmup_fraction, "warmup_fraction", false, false);
    if (!(encoder.clip_norm > 0.0)) throw ValidationError("clip_norm must be positive");
    if (policy.k() < 3) {
        throw ValidationError("k_avg + k_lig + k_dom + k_sen must be at least 3, got " + std::to_string(policy.k()));
    }
    if (index_mode == IndexMode::approximate) graph.validate();
    if (split_ratio != 0.0) check_unit(split_ratio, "split_ratio", true, true);
}

void apply_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value) {
    const Field& f = field(key);
    try {
        f.set(cfg, value);
    } catch (const ValidationError& e) {
        throw ValidationError("config key '" + key + "': " + e.what());
    }
}

PipelineConfig parse_config(std::string_view text) {
    PipelineConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string content = trim(line);
        if (content.empty()) continue;
        const std::string where = "config line " + std::to_string(line_no) + ": ";
        const auto eq = content.find('=');
        if (eq == std::string::npos) throw ValidationError(where + "expected 'key = value'");
        const std::string key = trim(std::string_view(content).substr(0, eq));
        const std::string value = trim(std::string_view(content).substr(eq + 1));
        if (key.empty()) throw ValidationError(where + "missing key");
        if (!seen.insert(key).second) throw ValidationError(where + "repeated key '" + key + "'");
        try {
            apply_config_value(cfg, key, value);
        } catch (const ValidationError& e) {
            throw ValidationError(where + e.what());
        }
    }
    try {
        cfg.validate();
    } catch (const ValidationError& e) {
        throw ValidationError(std::string("invalid config: ") + e.what());
    }
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) { return parse_config(read_text_file(path)); }

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [name, f] : fields()) keys.push_back(name);
    return keys;
}

std::string render_config(const PipelineConfig& cfg) {
    std::string out;
    for (const auto& [name, f] : fields()) out += name + " = " + f.get(cfg) + "\n";
    return out;
}

} // namespace featret
