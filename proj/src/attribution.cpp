#include "subrank/attribution.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

namespace subrank {

std::string_view scheme_name(Scheme scheme) {
  switch (scheme) {
    case Scheme::kTargetOnly: return "target_only";
    case Scheme::kUniformOne: return "uniform_one";
    case Scheme::kAttention: return "attention";
    case Scheme::kIntegratedGradients: return "integrated_gradients";
  }
  return "unknown";
}

Scheme parse_scheme(std::string_view name) {
  if (name == "target" || name == "target_only") return Scheme::kTargetOnly;
  if (name == "one" || name == "uniform_one") return Scheme::kUniformOne;
  if (name == "attn" || name == "attention") return Scheme::kAttention;
  if (name == "ig" || name == "integrated_gradients") return Scheme::kIntegratedGradients;
  throw ConfigError("unknown scheme '" + std::string(name) + "'");
}

bool uses_softmax(Scheme scheme) {
  return scheme == Scheme::kAttention || scheme == Scheme::kIntegratedGradients;
}

LayerRange LayerRange::default_for(std::size_t n_layers) {
  if (n_layers < 4) {
    throw ConfigError("default layer range [3, n_layers-2] needs n_layers >= 4, got " +
                      std::to_string(n_layers));
  }
  return {3, n_layers - 2};
}

LayerRange LayerRange::clamped(std::size_t n_layers) const {
  LayerRange r{start, std::min(end, n_layers)};
  if (r.start < 1 || r.start > r.end) {
    throw ConfigError("layer range " + format_layer_range(*this) + " is empty for " +
                      std::to_string(n_layers) + " layers");
  }
  return r;
}

void LayerRange::validate(std::size_t n_layers) const {
  if (start < 1 || start > end || end > n_layers) {
    throw ConfigError("layer range " + format_layer_range(*this) + " invalid for " +
                      std::to_string(n_layers) + " layers");
  }
}

LayerRange parse_layer_range(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw ConfigError("layer range must be START:END, got '" + std::string(text) + "'");
  }
  auto parse = [&](std::string_view part) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || ptr != part.data() + part.size()) {
      throw ConfigError("bad layer index '" + std::string(part) + "'");
    }
    return v;
  };
  LayerRange r{parse(text.substr(0, colon)), parse(text.substr(colon + 1))};
  if (r.start < 1 || r.start > r.end) {
    throw ConfigError("layer range '" + std::string(text) + "' is empty");
  }
  return r;
}

std::string format_layer_range(const LayerRange& range) {
  return std::to_string(range.start) + ":" + std::to_string(range.end);
}

double TokenWeights::context_mass() const {
  double total = 0.0;
  for (double w : weights) total += w;
  return total;
}

std::vector<std::size_t> context_positions(const TokenizedSentence& sentence,
                                           bool include_specials) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    if (sentence.target_span.contains(i)) continue;
    const bool special = i == 0 || i + 1 == sentence.size();
    if (special && !include_specials) continue;
    out.push_back(i);
  }
  return out;
}

RawScores attention_scores(const EncoderOutput& output, const TokenizedSentence& sentence,
                           const LayerRange& range, bool include_specials) {
  if (!sentence.has_target()) throw InputError("sentence has no located target");
  if (output.sequence_length() != sentence.size()) {
    throw ConsistencyError("encoder output length does not match sentence");
  }
  const LayerRange r = range.clamped(output.n_layers());
  const std::size_t t = output.sequence_length();
  Matrix mean = Matrix::Zero(t, t);
  std::size_t count = 0;
  for (std::size_t l = r.start; l <= r.end; ++l) {
    for (const Matrix& head : output.attentions[l - 1]) {
      mean += head;
      ++count;
    }
  }
  mean /= static_cast<double>(count);

  const Span span = sentence.target_span;
  RawScores out;
  out.positions = context_positions(sentence, include_specials);
  out.values.reserve(out.positions.size());
  for (std::size_t i : out.positions) {
    double s = 0.0;
    for (std::size_t c = span.begin; c < span.end; ++c) s += mean(i, c);
    out.values.push_back(s / static_cast<double>(span.size()));
  }
  double self = 0.0;
  for (std::size_t row = span.begin; row < span.end; ++row) {
    for (std::size_t c = span.begin; c < span.end; ++c) self += mean(row, c);
  }
  out.target_score = self / static_cast<double>(span.size() * span.size());
  return out;
}

PathIntegral integrate_path(const std::function<Matrix(const Matrix&)>& gradient,
                            const Matrix& input, const Matrix& baseline, std::size_t steps) {
  if (steps == 0) throw ConfigError("integrated gradients needs steps >= 1");
  if (input.rows() != baseline.rows() || input.cols() != baseline.cols()) {
    throw InputError("input and baseline shapes differ");
  }
  const Matrix delta = input - baseline;
  Matrix accumulated = Matrix::Zero(input.rows(), input.cols());
  for (std::size_t k = 0; k < steps; ++k) {
    const double alpha = static_cast<double>(k) / static_cast<double>(steps);
    accumulated += gradient(baseline + alpha * delta);
  }
  PathIntegral out;
  out.attributions = delta.cwiseProduct(accumulated) / static_cast<double>(steps);
  out.per_token = out.attributions.rowwise().sum();
  return out;
}

IgAttribution integrated_gradients(const EncoderBackend& backend,
                                   const TokenizedSentence& sentence, const IgConfig& ig,
                                   bool include_specials) {
  if (!backend.supports_gradients()) {
    throw CapabilityError("integrated gradients requires a backend with gradient support");
  }
  IgAttribution out;
  auto [ids, mask_pos] = mask_target(sentence);
  out.masked_ids = std::move(ids);
  out.mask_position = mask_pos;
  out.target.mode = ig.mode;
  out.target.position = mask_pos;
  if (ig.mode == TargetMode::kVocabProb) {
    out.target.token_id = sentence.token_ids[sentence.target_span.begin];
  }

  const Matrix input = backend.embed(out.masked_ids);
  const std::vector<TokenId> pads(out.masked_ids.size(), kPadId);
  const Matrix baseline = backend.embed(pads);
  out.path = integrate_path(
      [&](const Matrix& x) { return backend.gradient_wrt_embeddings(x, out.target); },
      input, baseline, ig.steps);
  out.f_input = evaluate_target(backend.encode_from_embeddings(input), out.target);
  out.f_baseline = evaluate_target(backend.encode_from_embeddings(baseline), out.target);

  // Masked positions after the mask sit span.size() - 1 earlier than in the
  // original sentence.
  const std::size_t shift = sentence.target_span.size() - 1;
  out.scores.positions = context_positions(sentence, include_specials);
  for (std::size_t pos : out.scores.positions) {
    const std::size_t masked = pos < mask_pos ? pos : pos - shift;
    out.scores.values.push_back(std::abs(out.path.per_token(masked)));
  }
  out.scores.target_score = std::abs(out.path.per_token(mask_pos));
  return out;
}

TokenWeights normalize(const RawScores& raw, Scheme scheme, const NormalizeOptions& options) {
  if (raw.positions.size() != raw.values.size()) {
    throw ConsistencyError("raw score positions and values differ in length");
  }
  TokenWeights w;
  w.scheme = scheme;
  w.positions = raw.positions;
  w.include_target = options.include_target;
  switch (scheme) {
    case Scheme::kTargetOnly:
      w.weights.assign(raw.positions.size(), 0.0);
      w.target_weight = 1.0;
      w.include_target = true;
      return w;
    case Scheme::kUniformOne:
      w.weights.assign(raw.positions.size(), 1.0);
      w.target_weight = 1.0;
      w.include_target = true;
      return w;
    case Scheme::kAttention:
    case Scheme::kIntegratedGradients:
      break;
  }
  if (raw.positions.empty()) {
    throw DegenerateInputError("softmax weighting needs at least one context token");
  }
  const bool with_target_logit = options.include_target && options.target_in_softmax;
  if (with_target_logit && !raw.target_score) {
    throw ConsistencyError("target-in-softmax needs a raw target score");
  }
  double mx = *std::max_element(raw.values.begin(), raw.values.end());
  if (with_target_logit) mx = std::max(mx, *raw.target_score);
  w.weights.resize(raw.values.size());
  double total = 0.0;
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    w.weights[i] = std::exp(raw.values[i] - mx);
    total += w.weights[i];
  }
  const double target_exp = with_target_logit ? std::exp(*raw.target_score - mx) : 0.0;
  total += target_exp;
  for (double& x : w.weights) x /= total;
  w.unit_context_mass = !with_target_logit;
  if (!options.include_target) {
    w.target_weight = 0.0;
  } else if (with_target_logit) {
    w.target_weight = target_exp / total;
  } else {
    w.target_weight = 1.0;
  }
  return w;
}

std::vector<nlohmann::json> attribution_dump(const TokenizedSentence& sentence,
                                             const RawScores& raw,
                                             const TokenWeights& weights) {
  std::vector<nlohmann::json> lines;
  std::size_t next = 0;
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    nlohmann::json line;
    const bool in_context = next < raw.positions.size() && raw.positions[next] == i;
    if (in_context) {
      line = {{"token", surface(sentence, i)},
              {"position", i},
              {"raw_score", raw.values[next]},
              {"weight", weights.weights[next]},
              {"scheme", scheme_name(weights.scheme)}};
      ++next;
    } else if (sentence.target_span.contains(i)) {
      line = {{"token", surface(sentence, i)},
              {"position", i},
              {"raw_score", raw.target_score ? nlohmann::json(*raw.target_score) : nlohmann::json()},
              {"weight", weights.target_weight},
              {"scheme", scheme_name(weights.scheme)},
              {"target", true}};
    } else {
      continue;
    }
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace subrank
