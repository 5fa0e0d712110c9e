#pragma once

#include <cstdint>
#include <vector>

#include "subrank/data.hpp"
#include "subrank/tokenizer.hpp"

namespace subrank {

// Lowercasing vocabulary of specials, printable ASCII characters (plain and
// continuation), common English words and suffix pieces.
Vocabulary builtin_vocabulary();

// LS07-shaped corpus over a fixed lexicon: n instances with weighted gold
// (integer weights 1-5, occasional multiword entries) and candidates pooled
// per lemma.pos.
std::vector<SubstitutionInstance> synthetic_corpus(std::uint64_t seed, std::size_t n);

}  // namespace subrank
