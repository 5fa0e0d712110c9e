#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "subrank/attribution.hpp"
#include "subrank/data.hpp"
#include "subrank/encoder.hpp"
#include "subrank/tokenizer.hpp"

namespace subrank {

// Layer-concatenated hidden state of one token or mean-pooled span:
// [pool(h^start) | ... | pool(h^end)].
Vector represent(const EncoderOutput& output, const Span& span, const LayerRange& range);

// Cosine similarity. A zero vector on either side yields 0 and bumps the
// process-wide degenerate counter.
double cosine(const Vector& u, const Vector& v);
std::uint64_t degenerate_cosine_count();

// target_weight * cos(target, substituted target) plus the weighted context
// cosines over aligned pairs. Weights must come from the original sentence.
double substitution_score(const EncoderOutput& original, const EncoderOutput& substituted,
                          const TokenWeights& weights, const Alignment& alignment,
                          const LayerRange& range);

struct ScoringOptions {
  Scheme scheme = Scheme::kAttention;
  bool include_target = true;
  bool target_in_softmax = false;
  bool include_specials = false;
  std::optional<LayerRange> layers;  // default [3, n_layers - 2]
  IgConfig ig;
};

struct ScoredCandidate {
  std::string candidate;
  double score = 0.0;
  bool operator==(const ScoredCandidate&) const = default;
};

struct ExcludedCandidate {
  std::string candidate;
  std::string reason;
  bool operator==(const ExcludedCandidate&) const = default;
};

struct RankingResult {
  std::string id;
  Scheme scheme = Scheme::kAttention;
  LayerRange layers;
  std::vector<ScoredCandidate> ranked;  // score descending, then candidate ascending
  std::vector<ExcludedCandidate> excluded;
  TokenWeights weights;  // shared by every candidate of the instance
};

// Weights for the original sentence under the given scheme.
TokenWeights compute_weights(const EncoderBackend& backend, const TokenizedSentence& original,
                             const EncoderOutput& original_output,
                             const ScoringOptions& options, const LayerRange& range);

RankingResult rank_candidates(const SubstitutionInstance& instance, const Vocabulary& vocab,
                              const EncoderBackend& backend, const ScoringOptions& options);

// Serialized rankings line: {id, scheme, layer_range, ranked, excluded}.
nlohmann::json ranking_to_json(const RankingResult& result);

}  // namespace subrank
