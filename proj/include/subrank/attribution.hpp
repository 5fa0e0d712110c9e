#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "subrank/encoder.hpp"
#include "subrank/tokenizer.hpp"

namespace subrank {

enum class Scheme { kTargetOnly, kUniformOne, kAttention, kIntegratedGradients };

std::string_view scheme_name(Scheme scheme);
// Accepts the long names and the CLI short forms (target, one, attn, ig).
Scheme parse_scheme(std::string_view name);
bool uses_softmax(Scheme scheme);

// 1-based inclusive range over encoder layers; layer 0 (embeddings) is never
// part of a range.
struct LayerRange {
  std::size_t start = 0;
  std::size_t end = 0;

  // [3, n_layers - 2]; needs at least four layers.
  static LayerRange default_for(std::size_t n_layers);
  // Clamps end to n_layers; ConfigError if nothing is left.
  LayerRange clamped(std::size_t n_layers) const;
  void validate(std::size_t n_layers) const;
  std::size_t count() const { return end - start + 1; }
  bool operator==(const LayerRange&) const = default;
};

// Parses "START:END".
LayerRange parse_layer_range(std::string_view text);
std::string format_layer_range(const LayerRange& range);

// Raw influence of each context token on the target, keyed by position in the
// ORIGINAL sentence.
struct RawScores {
  std::vector<std::size_t> positions;
  std::vector<double> values;
  // The target's score on the same scale, for the target-in-softmax variant.
  std::optional<double> target_score;
};

struct TokenWeights {
  Scheme scheme = Scheme::kUniformOne;
  std::vector<std::size_t> positions;
  std::vector<double> weights;
  double target_weight = 1.0;
  bool include_target = true;
  // Context weights form a distribution over context tokens only.
  bool unit_context_mass = false;

  double context_mass() const;
};

struct IgConfig {
  std::size_t steps = 32;
  TargetMode mode = TargetMode::kVocabProb;
};

// Positions outside the target span; CLS/SEP only when include_specials.
std::vector<std::size_t> context_positions(const TokenizedSentence& sentence,
                                           bool include_specials = false);

// Mean post-softmax attention over the heads and layers of range, read as
// query = context token, key = target-span token (averaged over the span).
RawScores attention_scores(const EncoderOutput& output, const TokenizedSentence& sentence,
                           const LayerRange& range, bool include_specials = false);

// Output of the path integral for one input/baseline pair.
struct PathIntegral {
  Matrix attributions;  // same shape as input
  Vector per_token;     // attributions summed over embedding dimensions
};

// Left Riemann sum with steps points alpha_k = k / steps:
// (input - baseline) * mean_k grad(baseline + alpha_k (input - baseline)).
PathIntegral integrate_path(const std::function<Matrix(const Matrix&)>& gradient,
                            const Matrix& input, const Matrix& baseline, std::size_t steps);

struct IgAttribution {
  std::vector<TokenId> masked_ids;
  std::size_t mask_position = 0;
  TargetFunction target;
  PathIntegral path;  // indexed by masked-sentence positions
  double f_input = 0.0;
  double f_baseline = 0.0;
  RawScores scores;
};

// Integrated gradients on the sentence with the target span replaced by one
// MASK token, against an all-PAD baseline.
IgAttribution integrated_gradients(const EncoderBackend& backend,
                                   const TokenizedSentence& sentence, const IgConfig& ig,
                                   bool include_specials = false);

struct NormalizeOptions {
  bool include_target = true;
  // Put the target's own raw score into the softmax instead of fixing it.
  bool target_in_softmax = false;
};

TokenWeights normalize(const RawScores& raw, Scheme scheme, const NormalizeOptions& options = {});

// One JSON object per non-special token of the original sentence.
std::vector<nlohmann::json> attribution_dump(const TokenizedSentence& sentence,
                                             const RawScores& raw,
                                             const TokenWeights& weights);

}  // namespace subrank
