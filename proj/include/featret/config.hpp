#pragma once

#include "featret/encoder.hpp"
#include "featret/heuristics.hpp"
#include "featret/retrieval.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace featret {

struct PipelinePaths {
    std::string corpus;
    std::string eval_corpus;
    std::string pairs;
    std::string checkpoint;
    std::string index;
    std::string template_file;
    std::string sft_output;
    std::string predictions;
    std::string word_vectors;
};

struct PipelineConfig {
    PipelinePaths paths;
    HeuristicConfig heuristics;
    std::size_t pair_budget = 10000;
    std::size_t pair_threads = 1;
    std::uint64_t pair_seed = 0;
    EncoderConfig encoder;
    RetrievalPolicy policy;
    IndexMode index_mode = IndexMode::exact;
    GraphParams graph;
    // 0 disables the split; otherwise this fraction of the corpus is held out for validation.
    double split_ratio = 0.1;
    std::uint64_t split_seed = 0;

    void validate() const;
};

// "key = value" lines; '#' starts a comment; blank lines are ignored. Unknown keys,
// repeated keys and malformed values are errors naming the line and key.
PipelineConfig parse_config(std::string_view text);
PipelineConfig load_config(const std::filesystem::path& path);

// Sets one key as the loader would; used for command-line overrides.
void apply_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value);

std::vector<std::string> config_keys();

// Every key with its current value, in config_keys() order.
std::string render_config(const PipelineConfig& cfg);

} // namespace featret
