#pragma once

#include "featret/config.hpp"

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

// Subcommand implementations behind the command-line tool.
namespace featret {

struct CommandOptions {
    std::string record_id;                 // retrieve
    std::optional<std::size_t> k;          // retrieve
    std::vector<std::string> domains;      // stats
    std::string gold;                      // evaluate
    std::size_t gradcheck_dim = 8;         // gradcheck
    std::size_t gradcheck_stride = 1;      // gradcheck
    double gradcheck_tol = 1e-4;           // gradcheck
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitUsage = 2;

std::vector<std::string> command_names();

// Runs one subcommand. key=value summary lines go to out, progress and diagnostics to log.
// Returns the exit status; library errors are caught and reported on log.
int run_command(const std::string& command, const PipelineConfig& cfg, const CommandOptions& options,
                std::ostream& out, std::ostream& log);

// Policy for an explicit exemplar count: one per feature channel, the rest from Avg.
RetrievalPolicy policy_for_k(std::size_t k, bool keep_channel_order = false);

// The training portion of the corpus (everything when split_ratio is 0) and the held-out
// portion (eval_corpus when configured, loaded against the training registry).
struct CorpusParts {
    Corpus full;
    Corpus train;
    Corpus heldout;
};
CorpusParts load_corpus_parts(const PipelineConfig& cfg, bool need_heldout);

std::string registry_snapshot_path(const std::string& checkpoint_path);

} // namespace featret
