#pragma once

#include "featret/corpus.hpp"
#include "featret/encoder.hpp"
#include "featret/retrieval.hpp"

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

// Instruction prompts with retrieved exemplars, pair (de)serialization, and scoring.
namespace featret {

struct PromptTemplate {
    static constexpr const char* kExampleInput = "{example_input}";
    static constexpr const char* kExampleOutput = "{example_output}";
    static constexpr const char* kInput = "{input}";

    std::string name;
    std::string instruction;
    std::string example;  // one exemplar block
    std::string query;

    // Throws ValidationError unless every placeholder occurs exactly once in its pattern.
    void validate() const;
};

// Sections start with a line "[instruction]", "[example]" or "[query]"; the text up to
// the next section header (trailing newlines stripped) is the section body.
PromptTemplate parse_template(std::string_view text, std::string name = "default");
PromptTemplate load_template(const std::filesystem::path& path);

struct ParsedPair {
    std::string aspect;
    Polarity polarity = Polarity::positive;

    friend bool operator==(const ParsedPair&, const ParsedPair&) = default;
    friend auto operator<=>(const ParsedPair&, const ParsedPair&) = default;
};

struct ParseResult {
    std::vector<ParsedPair> pairs;
    std::vector<std::string> diagnostics;
};

// "[aspect, polarity], ..." in span-start order; "NONE" when empty.
std::string serialize_pairs(std::span<const SentimentPair> pairs);
std::string serialize_pairs(std::span<const ParsedPair> pairs);
ParseResult parse_pairs(std::string_view text);

struct PromptRecord {
    std::string instruction;
    std::string input;
    std::string output;

    friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

std::string render_example(const PromptTemplate& tpl, const SentenceRecord& exemplar);
PromptRecord render_prompt(const PromptTemplate& tpl, const SentenceRecord& query,
                           std::span<const SentenceRecord* const> exemplars);

std::string serialize_prompt_record(const PromptRecord& rec);

// One prompt per corpus sentence with self-excluded exemplars and the gold output.
// exemplar_source must hold every id in the index.
std::string render_sft_dataset(const Corpus& corpus, const Corpus& exemplar_source, const FeatureIndex& index,
                               const Checkpoint& checkpoint, const PromptTemplate& tpl,
                               const RetrievalPolicy& policy = {});
std::size_t emit_sft_dataset(const Corpus& corpus, const Corpus& exemplar_source, const FeatureIndex& index,
                             const Checkpoint& checkpoint, const PromptTemplate& tpl, const RetrievalPolicy& policy,
                             const std::filesystem::path& path);

// Lowercased, whitespace runs collapsed to one space, ends trimmed.
std::string normalize_aspect(std::string_view text);

struct ClassScore {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    double precision() const;
    double recall() const;
    double f1() const;
    bool present() const { return tp + fp + fn > 0; }
};

struct DomainScore {
    // Indexed by Polarity.
    std::array<ClassScore, 3> classes;
    double macro_f1() const;
};

struct EvalReport {
    std::map<std::string, DomainScore> per_domain;
    DomainScore overall;
    std::vector<std::string> diagnostics;
};

// predictions: record id -> raw model output. Gold sentences with no prediction count as
// empty predictions. Unknown ids throw.
EvalReport evaluate_predictions(const Corpus& gold, const std::map<std::string, std::string>& predictions);
std::map<std::string, std::string> load_predictions(const std::filesystem::path& path);

} // namespace featret
