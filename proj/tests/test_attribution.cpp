#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "subrank/attribution.hpp"
#include "subrank/synthetic.hpp"

using namespace subrank;

namespace {

ReferenceEncoder encoder_for(const Vocabulary& v, std::size_t layers, std::size_t heads,
                             std::uint64_t seed = 42) {
  EncoderConfig c;
  c.vocab_size = v.size();
  c.d_model = 16;
  c.n_heads = heads;
  c.n_layers = layers;
  c.ffn_dim = 32;
  c.seed = seed;
  return ReferenceEncoder(c);
}

TokenizedSentence sentence_with_target(const Vocabulary& v, const std::string& text,
                                       const std::string& word) {
  const auto at = text.find(word);
  REQUIRE(at != std::string::npos);
  return locate_target(tokenize(v, text), at, at + word.size());
}

double relative_gap(double sum, double diff) {
  return std::abs(sum - diff) / std::max(std::abs(diff), 1e-12);
}

}  // namespace

TEST_CASE("scheme names and layer ranges") {
  for (Scheme s : {Scheme::kTargetOnly, Scheme::kUniformOne, Scheme::kAttention,
                   Scheme::kIntegratedGradients}) {
    CHECK(parse_scheme(scheme_name(s)) == s);
  }
  CHECK(parse_scheme("attn") == Scheme::kAttention);
  CHECK(parse_scheme("ig") == Scheme::kIntegratedGradients);
  CHECK_THROWS_AS(parse_scheme("bogus"), ConfigError);

  CHECK((LayerRange::default_for(24) == LayerRange{3, 22}));
  CHECK((LayerRange::default_for(6) == LayerRange{3, 4}));
  CHECK_THROWS_AS((LayerRange{3, 2}.clamped(4)), ConfigError);
  CHECK_THROWS_AS(LayerRange::default_for(3), ConfigError);
  CHECK((LayerRange{2, 9}.clamped(4) == LayerRange{2, 4}));
  CHECK_THROWS_AS((LayerRange{5, 9}.clamped(4)), ConfigError);
  CHECK((parse_layer_range("3:22") == LayerRange{3, 22}));
  CHECK_THROWS_AS(parse_layer_range("0:3"), ConfigError);
  CHECK_THROWS_AS(parse_layer_range("4:3"), ConfigError);
  CHECK_THROWS_AS(parse_layer_range("x"), ConfigError);
  CHECK(format_layer_range({3, 4}) == "3:4");
}

TEST_CASE("one layer, one head reads the attention entry directly") {
  const auto v = builtin_vocabulary();
  const auto enc = encoder_for(v, 1, 1);
  const auto s = sentence_with_target(v, "the bright student answered", "bright");
  const auto out = enc.encode(s.token_ids);
  const auto raw = attention_scores(out, s, {1, 1});
  REQUIRE(s.target_span.size() == 1);
  const std::size_t t = s.target_span.begin;
  REQUIRE(raw.positions.size() == s.size() - 3);
  for (std::size_t k = 0; k < raw.positions.size(); ++k) {
    CHECK(raw.values[k] == out.attentions[0][0](raw.positions[k], t));
    CHECK(raw.values[k] >= 0.0);
    CHECK(raw.values[k] <= 1.0);
  }
  CHECK(*raw.target_score == out.attentions[0][0](t, t));
}

TEST_CASE("uniform attention gives equal context scores") {
  const auto v = builtin_vocabulary();
  const auto s = sentence_with_target(v, "a very bright idea", "bright");
  const auto n = static_cast<Eigen::Index>(s.size());
  EncoderOutput out;
  out.hidden.assign(3, Matrix::Zero(n, 4));
  out.logits = Matrix::Zero(n, 10);
  out.attentions.assign(2, std::vector<Matrix>(3, Matrix::Constant(n, n, 1.0 / n)));
  const auto raw = attention_scores(out, s, {1, 2});
  for (double x : raw.values) CHECK(x == doctest::Approx(1.0 / n).epsilon(1e-15));
  const auto w = normalize(raw, Scheme::kAttention);
  for (double x : w.weights) CHECK(x == doctest::Approx(1.0 / raw.values.size()).epsilon(1e-12));
}

TEST_CASE("two layers, two heads match a hand-rolled mean") {
  const auto v = builtin_vocabulary();
  const auto enc = encoder_for(v, 2, 2, 42);
  const auto s = sentence_with_target(v, "we saw bright light", "bright");
  REQUIRE(s.size() == 6);
  const auto out = enc.encode(s.token_ids);
  const auto ref = oracle::forward(enc, oracle::to_mat(enc.embed(s.token_ids)));
  const auto raw = attention_scores(out, s, {1, 2});
  const std::size_t t = s.target_span.begin;
  for (std::size_t k = 0; k < raw.positions.size(); ++k) {
    const std::size_t i = raw.positions[k];
    const double expect = (ref.attentions[0][0][i][t] + ref.attentions[0][1][i][t] +
                           ref.attentions[1][0][i][t] + ref.attentions[1][1][i][t]) /
                          4.0;
    CHECK(std::abs(raw.values[k] - expect) < 1e-12);
  }

  const auto with_specials = attention_scores(out, s, {1, 2}, true);
  CHECK(with_specials.positions.front() == 0);
  CHECK(with_specials.positions.back() == s.size() - 1);
}

TEST_CASE("multi-subword targets average over the span columns") {
  const auto v = builtin_vocabulary();
  const auto enc = encoder_for(v, 1, 1);
  const auto s = sentence_with_target(v, "the zqxv glows", "zqxv");
  REQUIRE(s.target_span.size() > 1);
  const auto out = enc.encode(s.token_ids);
  const auto raw = attention_scores(out, s, {1, 1});
  const auto& a = out.attentions[0][0];
  for (std::size_t k = 0; k < raw.positions.size(); ++k) {
    double sum = 0.0;
    for (std::size_t c = s.target_span.begin; c < s.target_span.end; ++c) sum += a(raw.positions[k], c);
    CHECK(std::abs(raw.values[k] - sum / s.target_span.size()) < 1e-15);
  }
}

TEST_CASE("linear target: integrated gradients are exact for any step count") {
  Matrix w(3, 2), x(3, 2);
  w << 0.5, -1.0, 2.0, 0.25, -3.0, 1.5;
  x << 1.0, 2.0, -0.5, 4.0, 0.75, -2.0;
  const Matrix zero = Matrix::Zero(3, 2);
  for (std::size_t steps : {1, 3, 32, 1000}) {
    const auto ig = integrate_path([&](const Matrix&) { return w; }, x, zero, steps);
    const Matrix expect = w.cwiseProduct(x);
    CHECK((ig.attributions - expect).cwiseAbs().maxCoeff() < 1e-13);
    CHECK(std::abs(ig.per_token.sum() - expect.sum()) < 1e-13);
  }
  const auto one = integrate_path([&](const Matrix&) { return w; }, x, zero, 1);
  CHECK(one.attributions == w.cwiseProduct(x));
  CHECK_THROWS_AS(integrate_path([&](const Matrix&) { return w; }, x, zero, 0), ConfigError);
}

TEST_CASE("left Riemann points") {
  std::vector<double> alphas;
  const Matrix x = Matrix::Constant(1, 1, 1.0);
  integrate_path(
      [&](const Matrix& p) {
        alphas.push_back(p(0, 0));
        return Matrix(Matrix::Zero(1, 1));
      },
      x, Matrix::Zero(1, 1), 4);
  CHECK(alphas == std::vector<double>{0.0, 0.25, 0.5, 0.75});
}

TEST_CASE("integrated gradients completeness on the reference encoder") {
  const auto v = builtin_vocabulary();
  const auto enc = encoder_for(v, 6, 4);
  for (const char* text : {"the bright student answered", "she looked at the bright sky today",
                           "a zqxv moment"}) {
    const std::string t(text);
    const std::string word = t.find("bright") != std::string::npos ? "bright"
                             : t.find("zqxv") != std::string::npos ? "zqxv" : "";
    const auto s = sentence_with_target(v, t, word);
    for (TargetMode mode : {TargetMode::kVocabProb, TargetMode::kL2Norm}) {
      const auto ig = integrated_gradients(enc, s, {256, mode});
      const double err = relative_gap(ig.path.per_token.sum(), ig.f_input - ig.f_baseline);
      CAPTURE(text);
      CAPTURE(static_cast<int>(mode));
      CHECK(err < 1e-2);
    }
  }
}

TEST_CASE("integrated gradients wiring") {
  const auto v = builtin_vocabulary();
  const auto enc = encoder_for(v, 4, 2);
  const auto s = sentence_with_target(v, "the zqxv glows now", "zqxv");
  const auto ig = integrated_gradients(enc, s, {8, TargetMode::kVocabProb});
  CHECK(ig.masked_ids.size() == s.size() - s.target_span.size() + 1);
  CHECK(ig.masked_ids[ig.mask_position] == kMaskId);
  CHECK(ig.target.token_id == s.token_ids[s.target_span.begin]);

  const auto input = enc.embed(ig.masked_ids);
  const auto baseline = enc.embed(std::vector<TokenId>(ig.masked_ids.size(), kPadId));
  CHECK(ig.f_input == evaluate_target(enc.encode_from_embeddings(input), ig.target));
  CHECK(ig.f_baseline == evaluate_target(enc.encode_from_embeddings(baseline), ig.target));

  const std::size_t shift = s.target_span.size() - 1;
  for (std::size_t k = 0; k < ig.scores.positions.size(); ++k) {
    const std::size_t p = ig.scores.positions[k];
    const std::size_t m = p < ig.mask_position ? p : p - shift;
    CHECK(ig.scores.values[k] == std::abs(ig.path.per_token(m)));
    CHECK(s.token_ids[p] == ig.masked_ids[m]);
  }
}

TEST_CASE("riemann refinement changes per-token scores by less than 1e-3") {
  const auto v = builtin_vocabulary();
  const auto enc = encoder_for(v, 6, 4);
  const auto s = sentence_with_target(v, "we saw bright light last night", "bright");
  REQUIRE(s.size() == 8);
  for (TargetMode mode : {TargetMode::kVocabProb, TargetMode::kL2Norm}) {
    const auto a = integrated_gradients(enc, s, {512, mode});
    const auto b = integrated_gradients(enc, s, {1024, mode});
    CHECK((a.path.per_token - b.path.per_token).cwiseAbs().maxCoeff() < 1e-3);
  }
}

TEST_CASE("backends without gradients cannot run integrated gradients") {
  struct HiddenOnly : EncoderBackend {
    std::size_t n_layers() const override { return 4; }
    std::size_t d_model() const override { return 2; }
    std::size_t vocab_size() const override { return 200; }
    std::size_t max_positions() const override { return 8; }
    EncoderOutput encode(std::span<const TokenId>) const override { return {}; }
  } backend;
  const auto v = builtin_vocabulary();
  const auto s = sentence_with_target(v, "a bright day", "bright");
  CHECK_THROWS_AS(integrated_gradients(backend, s, {}), CapabilityError);
}

TEST_CASE("softmax normalization") {
  RawScores raw{{1, 3}, {0.0, 0.0}, std::nullopt};
  auto w = normalize(raw, Scheme::kAttention);
  CHECK(w.weights == std::vector<double>{0.5, 0.5});
  CHECK(w.target_weight == 1.0);
  CHECK(w.unit_context_mass);

  raw.values = {std::log(2.0), 0.0};
  w = normalize(raw, Scheme::kIntegratedGradients);
  CHECK(w.weights[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(w.weights[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  w = normalize(raw, Scheme::kAttention, {false, false});
  CHECK(w.target_weight == 0.0);
  CHECK_FALSE(w.include_target);

  raw.target_score = std::log(2.0);
  w = normalize(raw, Scheme::kAttention, {true, true});
  CHECK(w.weights[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(w.weights[1] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(w.target_weight == doctest::Approx(0.4).epsilon(1e-15));
  CHECK_FALSE(w.unit_context_mass);

  raw.target_score.reset();
  CHECK_THROWS_AS(normalize(raw, Scheme::kAttention, {true, true}), ConsistencyError);
  CHECK_THROWS_AS(normalize(RawScores{}, Scheme::kAttention), DegenerateInputError);
  CHECK_NOTHROW(normalize(RawScores{}, Scheme::kUniformOne));
}

TEST_CASE("fixed schemes ignore the raw scores") {
  const RawScores raw{{1, 2, 4}, {0.3, -7.0, 12.0}, 0.5};
  const auto t = normalize(raw, Scheme::kTargetOnly, {false, false});
  CHECK(t.target_weight == 1.0);
  CHECK(t.weights == std::vector<double>{0.0, 0.0, 0.0});
  const auto u = normalize(raw, Scheme::kUniformOne);
  CHECK(u.target_weight == 1.0);
  CHECK(u.weights == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("softmax properties over random scores") {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> score(-5.0, 5.0), shift(-100.0, 100.0);
  std::uniform_int_distribution<int> count(1, 20);
  for (int trial = 0; trial < 200; ++trial) {
    RawScores raw;
    const int n = count(gen);
    for (int i = 0; i < n; ++i) {
      raw.positions.push_back(static_cast<std::size_t>(i + 1));
      raw.values.push_back(score(gen));
    }
    const auto w = normalize(raw, Scheme::kAttention);
    CHECK(std::abs(w.context_mass() - 1.0) < 1e-9);
    for (double x : w.weights) CHECK(x >= 0.0);
    const auto arg_raw = std::max_element(raw.values.begin(), raw.values.end()) - raw.values.begin();
    const auto arg_w = std::max_element(w.weights.begin(), w.weights.end()) - w.weights.begin();
    CHECK(arg_raw == arg_w);

    RawScores shifted = raw;
    const double c = shift(gen);
    for (double& x : shifted.values) x += c;
    const auto ws = normalize(shifted, Scheme::kAttention);
    for (int i = 0; i < n; ++i) CHECK(std::abs(ws.weights[i] - w.weights[i]) < 1e-12);
  }
}

TEST_CASE("attribution dump covers context and target tokens") {
  const auto v = builtin_vocabulary();
  const auto enc = encoder_for(v, 4, 2);
  const auto s = sentence_with_target(v, "the bright day", "bright");
  const auto raw = attention_scores(enc.encode(s.token_ids), s, {1, 4});
  const auto w = normalize(raw, Scheme::kAttention);
  const auto lines = attribution_dump(s, raw, w);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0]["token"] == "the");
  CHECK(lines[1]["token"] == "bright");
  CHECK(lines[1]["target"] == true);
  CHECK(lines[1]["weight"] == 1.0);
  CHECK(lines[2]["scheme"] == "attention");
  CHECK(lines[0]["weight"].get<double>() + lines[2]["weight"].get<double>() ==
        doctest::Approx(1.0).epsilon(1e-12));
}
