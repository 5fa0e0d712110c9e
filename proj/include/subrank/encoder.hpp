#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "subrank/errors.hpp"

namespace subrank {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using TokenId = std::int32_t;

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_layers = 6;
  std::size_t ffn_dim = 64;
  std::size_t max_positions = 128;
  std::uint64_t seed = 42;

  // Throws ConfigError naming the first violated constraint.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// hidden[0] is the embedding-layer output (token + position), hidden[l] the
// output of layer l. attentions[l - 1] holds layer l as heads x T x T with
// rows indexing queries.
struct EncoderOutput {
  std::vector<Matrix> hidden;
  std::vector<std::vector<Matrix>> attentions;
  Matrix logits;

  std::size_t sequence_length() const { return logits.rows(); }
  std::size_t n_layers() const { return attentions.size(); }
  const Matrix& final_hidden() const { return hidden.back(); }
};

enum class TargetMode { kVocabProb, kL2Norm };

// The scalar F whose gradient integrated gradients accumulates.
struct TargetFunction {
  TargetMode mode = TargetMode::kVocabProb;
  std::size_t position = 0;
  std::optional<TokenId> token_id;
  // Multiplies F. Only tests set this (linearity checks).
  double scale = 1.0;
};

double evaluate_target(const EncoderOutput& output, const TargetFunction& fn);

// Capabilities any encoder must provide to be ranked against. Hidden states and
// attentions are mandatory; embedding injection and gradients are optional and
// advertised through the supports_* queries.
class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;

  virtual std::size_t n_layers() const = 0;
  virtual std::size_t d_model() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t max_positions() const = 0;

  virtual EncoderOutput encode(std::span<const TokenId> token_ids) const = 0;

  virtual bool supports_gradients() const { return false; }
  // Token-embedding rows for ids, without positional terms.
  virtual Matrix embed(std::span<const TokenId> token_ids) const;
  virtual EncoderOutput encode_from_embeddings(const Matrix& token_embeddings) const;
  virtual Matrix gradient_wrt_embeddings(const Matrix& token_embeddings,
                                         const TargetFunction& fn) const;
};

// SplitMix64 as published by Vigna; used for weight initialization so that
// every implementation reproduces the same reference model.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();
  // Uniform in [-0.1, 0.1) from the top 53 bits of the next draw.
  double next_weight();

 private:
  std::uint64_t state_;
};

struct LayerWeights {
  Matrix w_q, w_k, w_v, w_o;  // d_model x d_model
  Matrix w_ffn1;              // d_model x ffn_dim
  Matrix w_ffn2;              // ffn_dim x d_model
};

struct EncoderWeights {
  Matrix token_embedding;  // vocab_size x d_model, also the output head
  std::vector<LayerWeights> layers;
};

Matrix sinusoidal_positions(std::size_t length, std::size_t d_model);

// Post-LN transformer encoder in double precision with exact reverse-mode
// gradients. Immutable after construction.
class ReferenceEncoder final : public EncoderBackend {
 public:
  static constexpr double kLayerNormEps = 1e-5;

  explicit ReferenceEncoder(const EncoderConfig& config);
  ReferenceEncoder(const EncoderConfig& config, EncoderWeights weights);

  const EncoderConfig& config() const { return config_; }
  const EncoderWeights& weights() const { return weights_; }

  std::size_t n_layers() const override { return config_.n_layers; }
  std::size_t d_model() const override { return config_.d_model; }
  std::size_t vocab_size() const override { return config_.vocab_size; }
  std::size_t max_positions() const override { return config_.max_positions; }

  EncoderOutput encode(std::span<const TokenId> token_ids) const override;
  bool supports_gradients() const override { return true; }
  Matrix embed(std::span<const TokenId> token_ids) const override;
  EncoderOutput encode_from_embeddings(const Matrix& token_embeddings) const override;
  Matrix gradient_wrt_embeddings(const Matrix& token_embeddings,
                                 const TargetFunction& fn) const override;

  // FNV-1a over the raw bytes of every weight in fill order.
  std::uint64_t checksum() const;

  // Binary layout: "SUBRANK1", seven little-endian u64 config fields
  // (vocab_size, d_model, n_heads, n_layers, ffn_dim, max_positions, seed),
  // then every weight as a little-endian f64 in fill order.
  void save(const std::filesystem::path& path) const;
  static ReferenceEncoder load(const std::filesystem::path& path);

 private:
  struct LayerCache;
  EncoderOutput forward(const Matrix& token_embeddings,
                        std::vector<LayerCache>* cache) const;
  void check_embeddings(const Matrix& token_embeddings) const;

  EncoderConfig config_;
  EncoderWeights weights_;
};

// Visits every weight matrix in initialization order.
template <typename Weights, typename Fn>
void for_each_weight_matrix(Weights& weights, Fn&& fn) {
  fn(weights.token_embedding);
  for (auto& layer : weights.layers) {
    fn(layer.w_q);
    fn(layer.w_k);
    fn(layer.w_v);
    fn(layer.w_o);
    fn(layer.w_ffn1);
    fn(layer.w_ffn2);
  }
}

}  // namespace subrank
