#pragma once

#include "featret/corpus.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

// Annotated review sentences built from a handful of parsed sentence patterns, with
// aspect nouns and opinion adjectives drawn from per-domain word lists.
namespace featret {

struct SyntheticOptions {
    std::size_t sentences = 60;
    std::uint64_t seed = 0;
    std::string id_prefix = "s";
    std::size_t first_id = 1;
};

// Known domains: restaurant, laptop, hotel. Sentence i belongs to domain i mod 3, and
// every generated sentence text is distinct.
std::vector<SentenceRecord> generate_synthetic_records(const SyntheticOptions& options);
Corpus generate_synthetic_corpus(const SyntheticOptions& options);

} // namespace featret
