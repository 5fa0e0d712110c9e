#include "subrank/scorer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <unordered_map>

namespace subrank {

namespace {
std::atomic<std::uint64_t> g_degenerate_cosines{0};
}  // namespace

Vector represent(const EncoderOutput& output, const Span& span, const LayerRange& range) {
  range.validate(output.n_layers());
  if (span.empty() || span.end > output.sequence_length()) {
    throw InputError("representation span out of range");
  }
  const Eigen::Index d = output.hidden.front().cols();
  Vector out(static_cast<Eigen::Index>(range.count()) * d);
  for (std::size_t l = range.start; l <= range.end; ++l) {
    const Matrix& h = output.hidden[l];
    Eigen::RowVectorXd pooled = h.middleRows(span.begin, span.size()).colwise().mean();
    out.segment(static_cast<Eigen::Index>(l - range.start) * d, d) = pooled.transpose();
  }
  return out;
}

double cosine(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw InputError("cosine of vectors with different lengths");
  const double uu = u.dot(u);
  const double vv = v.dot(v);
  if (uu == 0.0 || vv == 0.0) {
    g_degenerate_cosines.fetch_add(1, std::memory_order_relaxed);
    return 0.0;
  }
  // sqrt(x * x) == x in IEEE arithmetic, so cosine(u, u) is exactly 1.
  return std::clamp(u.dot(v) / std::sqrt(uu * vv), -1.0, 1.0);
}

std::uint64_t degenerate_cosine_count() {
  return g_degenerate_cosines.load(std::memory_order_relaxed);
}

double substitution_score(const EncoderOutput& original, const EncoderOutput& substituted,
                          const TokenWeights& weights, const Alignment& alignment,
                          const LayerRange& range) {
  if (weights.positions.size() != weights.weights.size()) {
    throw ConsistencyError("token weights positions and values differ in length");
  }
  if (alignment.original_target.end > original.sequence_length() ||
      alignment.substituted_target.end > substituted.sequence_length()) {
    throw ConsistencyError("alignment target spans exceed encoder outputs");
  }
  std::unordered_map<std::size_t, std::size_t> to_substituted;
  for (const auto& [o, s] : alignment.pairs) {
    if (o >= original.sequence_length() || s >= substituted.sequence_length()) {
      throw ConsistencyError("alignment pair outside encoder outputs");
    }
    to_substituted.emplace(o, s);
  }

  double score = 0.0;
  if (weights.target_weight != 0.0) {
    score += weights.target_weight *
             cosine(represent(original, alignment.original_target, range),
                    represent(substituted, alignment.substituted_target, range));
  }
  double context = 0.0;
  double mass = 0.0;
  for (std::size_t k = 0; k < weights.positions.size(); ++k) {
    const double w = weights.weights[k];
    if (w == 0.0) continue;
    const std::size_t pos = weights.positions[k];
    auto it = to_substituted.find(pos);
    if (it == to_substituted.end()) {
      throw ConsistencyError("weighted position " + std::to_string(pos) + " has no aligned token");
    }
    context += w * cosine(represent(original, {pos, pos + 1}, range),
                          represent(substituted, {it->second, it->second + 1}, range));
    mass += w;
  }
  // Softmax context weights sum to one up to rounding; dividing by the sum as
  // accumulated here makes all-unit cosines contribute exactly 1.
  if (weights.unit_context_mass && mass > 0.0) context /= mass;
  return score + context;
}

TokenWeights compute_weights(const EncoderBackend& backend, const TokenizedSentence& original,
                             const EncoderOutput& original_output,
                             const ScoringOptions& options, const LayerRange& range) {
  const NormalizeOptions norm{options.include_target, options.target_in_softmax};
  switch (options.scheme) {
    case Scheme::kTargetOnly:
    case Scheme::kUniformOne: {
      RawScores raw;
      raw.positions = context_positions(original, options.include_specials);
      raw.values.assign(raw.positions.size(), 0.0);
      return normalize(raw, options.scheme, norm);
    }
    case Scheme::kAttention:
      return normalize(attention_scores(original_output, original, range, options.include_specials),
                       options.scheme, norm);
    case Scheme::kIntegratedGradients:
      return normalize(
          integrated_gradients(backend, original, options.ig, options.include_specials).scores,
          options.scheme, norm);
  }
  throw ConfigError("unknown scheme");
}

RankingResult rank_candidates(const SubstitutionInstance& instance, const Vocabulary& vocab,
                              const EncoderBackend& backend, const ScoringOptions& options) {
  RankingResult result;
  result.id = instance.id;
  result.scheme = options.scheme;
  result.layers = options.layers.value_or(LayerRange::default_for(backend.n_layers()));
  result.layers.validate(backend.n_layers());

  const TokenizedSentence original = locate_target(
      tokenize(vocab, instance.sentence), instance.target.char_start, instance.target.char_end);
  const EncoderOutput original_output = backend.encode(original.token_ids);
  result.weights = compute_weights(backend, original, original_output, options, result.layers);

  std::set<std::string> seen;
  for (const auto& candidate : instance.candidates) {
    if (!seen.insert(candidate).second) continue;
    if (is_multiword(candidate)) {
      result.excluded.push_back({candidate, "multiword"});
      continue;
    }
    try {
      const auto [substituted, alignment] = substitute(vocab, original, candidate);
      const EncoderOutput output = backend.encode(substituted.token_ids);
      result.ranked.push_back({candidate, substitution_score(original_output, output,
                                                             result.weights, alignment,
                                                             result.layers)});
    } catch (const InputError& e) {
      result.excluded.push_back({candidate, e.what()});
    }
  }
  if (result.ranked.empty()) {
    throw DegenerateInputError("instance '" + instance.id + "': no scorable candidates");
  }
  std::sort(result.ranked.begin(), result.ranked.end(),
            [](const ScoredCandidate& a, const ScoredCandidate& b) {
              return a.score != b.score ? a.score > b.score : a.candidate < b.candidate;
            });
  std::sort(result.excluded.begin(), result.excluded.end(),
            [](const auto& a, const auto& b) { return a.candidate < b.candidate; });
  return result;
}

nlohmann::json ranking_to_json(const RankingResult& result) {
  nlohmann::json ranked = nlohmann::json::array();
  for (const auto& r : result.ranked) ranked.push_back({{"candidate", r.candidate}, {"score", r.score}});
  nlohmann::json excluded = nlohmann::json::array();
  for (const auto& e : result.excluded) {
    excluded.push_back({{"candidate", e.candidate}, {"reason", e.reason}});
  }
  return {{"id", result.id},
          {"scheme", scheme_name(result.scheme)},
          {"layer_range", {result.layers.start, result.layers.end}},
          {"ranked", ranked},
          {"excluded", excluded}};
}

}  // namespace subrank
