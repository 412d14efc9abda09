#pragma once

// Small generated corpora for overfit and end-to-end runs.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aqg/text.hpp"

namespace aqg {

// `count` examples (at most 128) with three-sentence passages. Every sentence
// names a distinct (adjective, noun) subject, so passages, answer sentences
// and questions are all unique. The answer rotates between a place, a colour
// and a name.
std::vector<RawExample> synthetic_corpus(std::size_t count = 32, std::uint64_t seed = 1);

// Serializes examples as SQuAD 1.1 JSON (one article, one paragraph each)
// with character offsets.
std::string to_squad_json(const std::vector<RawExample>& examples);

// Writes <dir>/squad.json and one id file per split: the first `train`
// examples go to train.ids, the rest to dev.ids. Returns the written paths.
std::vector<std::filesystem::path> write_synthetic_dataset(const std::filesystem::path& dir,
                                                           std::size_t count, std::size_t train,
                                                           std::uint64_t seed);

}  // namespace aqg
