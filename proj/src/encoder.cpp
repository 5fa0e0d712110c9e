#include "subrank/encoder.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace subrank {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'U', 'B', 'R', 'A', 'N', 'K', '1'};

void softmax_rows(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp().matrix();
    row /= row.sum();
  }
}

// Row-wise layer norm with unit gain and zero offset. Returns the normalized
// matrix and stores 1/sqrt(var + eps) per row for the backward pass.
Matrix layer_norm(const Matrix& x, Vector* inv_std) {
  Matrix y(x.rows(), x.cols());
  if (inv_std) inv_std->resize(x.rows());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / n;
    const auto centered = (x.row(r).array() - mean).matrix();
    const double var = centered.squaredNorm() / n;
    const double inv = 1.0 / std::sqrt(var + ReferenceEncoder::kLayerNormEps);
    y.row(r) = centered * inv;
    if (inv_std) (*inv_std)(r) = inv;
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& grad_out, const Matrix& normalized,
                           const Vector& inv_std) {
  Matrix grad_in(grad_out.rows(), grad_out.cols());
  const double n = static_cast<double>(grad_out.cols());
  for (Eigen::Index r = 0; r < grad_out.rows(); ++r) {
    const double mean_g = grad_out.row(r).sum() / n;
    const double mean_gy = grad_out.row(r).dot(normalized.row(r)) / n;
    grad_in.row(r) = inv_std(r) * (grad_out.row(r).array() - mean_g -
                                   normalized.row(r).array() * mean_gy)
                                      .matrix();
  }
  return grad_in;
}

void write_u64(std::ostream& os, std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap64(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw InputError("weight file truncated");
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap64(v);
  return v;
}

EncoderWeights allocate_weights(const EncoderConfig& c) {
  EncoderWeights w;
  w.token_embedding = Matrix::Zero(c.vocab_size, c.d_model);
  w.layers.resize(c.n_layers);
  for (auto& layer : w.layers) {
    layer.w_q = Matrix::Zero(c.d_model, c.d_model);
    layer.w_k = Matrix::Zero(c.d_model, c.d_model);
    layer.w_v = Matrix::Zero(c.d_model, c.d_model);
    layer.w_o = Matrix::Zero(c.d_model, c.d_model);
    layer.w_ffn1 = Matrix::Zero(c.d_model, c.ffn_dim);
    layer.w_ffn2 = Matrix::Zero(c.ffn_dim, c.d_model);
  }
  return w;
}

}  // namespace

void EncoderConfig::validate() const {
  if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
  if (d_model == 0) throw ConfigError("d_model must be positive");
  if (n_heads == 0) throw ConfigError("n_heads must be positive");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (n_layers == 0) throw ConfigError("n_layers must be positive");
  if (ffn_dim == 0) throw ConfigError("ffn_dim must be positive");
  if (max_positions == 0) throw ConfigError("max_positions must be positive");
}

std::uint64_t SplitMix64::next() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double SplitMix64::next_weight() {
  return static_cast<double>(next() >> 11) * 0x1.0p-53 * 0.2 - 0.1;
}

Matrix sinusoidal_positions(std::size_t length, std::size_t d_model) {
  Matrix pe(length, d_model);
  for (std::size_t p = 0; p < length; ++p) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const std::size_t pair = i - (i % 2);
      const double angle = static_cast<double>(p) /
                           std::pow(10000.0, static_cast<double>(pair) / d_model);
      pe(p, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

double evaluate_target(const EncoderOutput& output, const TargetFunction& fn) {
  if (fn.position >= output.sequence_length()) {
    throw InputError("target position out of range");
  }
  switch (fn.mode) {
    case TargetMode::kVocabProb: {
      if (!fn.token_id || *fn.token_id < 0 ||
          static_cast<Eigen::Index>(*fn.token_id) >= output.logits.cols()) {
        throw InputError("vocab_prob target needs a token id inside the vocabulary");
      }
      const auto row = output.logits.row(fn.position);
      const double mx = row.maxCoeff();
      const double denom = (row.array() - mx).exp().sum();
      return fn.scale * std::exp(row(*fn.token_id) - mx) / denom;
    }
    case TargetMode::kL2Norm:
      return fn.scale * output.final_hidden().row(fn.position).norm();
  }
  throw InputError("unknown target mode");
}

Matrix EncoderBackend::embed(std::span<const TokenId>) const {
  throw CapabilityError("backend does not expose token embeddings");
}

EncoderOutput EncoderBackend::encode_from_embeddings(const Matrix&) const {
  throw CapabilityError("backend does not support embedding injection");
}

Matrix EncoderBackend::gradient_wrt_embeddings(const Matrix&, const TargetFunction&) const {
  throw CapabilityError("backend does not support gradients");
}

struct ReferenceEncoder::LayerCache {
  Matrix input;
  Matrix q, k, v;
  std::vector<Matrix> attn;
  Matrix heads;  // concatenated per-head outputs before W_O
  Matrix norm1;
  Vector inv1;
  Matrix ffn_pre;
  Matrix norm2;
  Vector inv2;
};

ReferenceEncoder::ReferenceEncoder(const EncoderConfig& config) : config_(config) {
  config_.validate();
  weights_ = allocate_weights(config_);
  SplitMix64 rng(config_.seed);
  for_each_weight_matrix(weights_, [&](Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.next_weight();
  });
}

ReferenceEncoder::ReferenceEncoder(const EncoderConfig& config, EncoderWeights weights)
    : config_(config), weights_(std::move(weights)) {
  config_.validate();
  const EncoderWeights shape = allocate_weights(config_);
  bool ok = weights_.layers.size() == shape.layers.size() &&
            weights_.token_embedding.rows() == shape.token_embedding.rows() &&
            weights_.token_embedding.cols() == shape.token_embedding.cols();
  for (std::size_t l = 0; ok && l < shape.layers.size(); ++l) {
    const auto& a = weights_.layers[l];
    const auto& b = shape.layers[l];
    ok = a.w_q.rows() == b.w_q.rows() && a.w_q.cols() == b.w_q.cols() &&
         a.w_k.rows() == b.w_k.rows() && a.w_k.cols() == b.w_k.cols() &&
         a.w_v.rows() == b.w_v.rows() && a.w_v.cols() == b.w_v.cols() &&
         a.w_o.rows() == b.w_o.rows() && a.w_o.cols() == b.w_o.cols() &&
         a.w_ffn1.rows() == b.w_ffn1.rows() && a.w_ffn1.cols() == b.w_ffn1.cols() &&
         a.w_ffn2.rows() == b.w_ffn2.rows() && a.w_ffn2.cols() == b.w_ffn2.cols();
  }
  if (!ok) throw ConfigError("weight shapes do not match the encoder config");
}

Matrix ReferenceEncoder::embed(std::span<const TokenId> token_ids) const {
  if (token_ids.empty()) throw InputError("empty token sequence");
  if (token_ids.size() > config_.max_positions) {
    throw InputError("sequence length " + std::to_string(token_ids.size()) +
                     " exceeds max_positions " + std::to_string(config_.max_positions));
  }
  Matrix x(token_ids.size(), config_.d_model);
  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    const TokenId id = token_ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw InputError("token id " + std::to_string(id) + " outside vocabulary");
    }
    x.row(i) = weights_.token_embedding.row(id);
  }
  return x;
}

EncoderOutput ReferenceEncoder::encode(std::span<const TokenId> token_ids) const {
  return forward(embed(token_ids), nullptr);
}

void ReferenceEncoder::check_embeddings(const Matrix& x) const {
  if (x.rows() == 0 || static_cast<std::size_t>(x.rows()) > config_.max_positions) {
    throw InputError("injected embedding row count out of range");
  }
  if (static_cast<std::size_t>(x.cols()) != config_.d_model) {
    throw InputError("injected embedding width " + std::to_string(x.cols()) +
                     " != d_model " + std::to_string(config_.d_model));
  }
}

EncoderOutput ReferenceEncoder::encode_from_embeddings(const Matrix& token_embeddings) const {
  check_embeddings(token_embeddings);
  return forward(token_embeddings, nullptr);
}

EncoderOutput ReferenceEncoder::forward(const Matrix& token_embeddings,
                                        std::vector<LayerCache>* cache) const {
  const std::size_t t = token_embeddings.rows();
  const std::size_t heads = config_.n_heads;
  const std::size_t dk = config_.d_model / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  EncoderOutput out;
  out.hidden.reserve(config_.n_layers + 1);
  out.attentions.reserve(config_.n_layers);
  if (cache) cache->resize(config_.n_layers);

  Matrix x = token_embeddings + sinusoidal_positions(t, config_.d_model);
  out.hidden.push_back(x);

  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const LayerWeights& w = weights_.layers[l];
    Matrix q = x * w.w_q;
    Matrix k = x * w.w_k;
    Matrix v = x * w.w_v;
    Matrix concat(t, config_.d_model);
    std::vector<Matrix> attn(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      const auto cols = Eigen::seqN(h * dk, dk);
      Matrix scores = (q(Eigen::all, cols) * k(Eigen::all, cols).transpose()) * scale;
      softmax_rows(scores);
      concat(Eigen::all, cols) = scores * v(Eigen::all, cols);
      attn[h] = std::move(scores);
    }
    Vector inv1;
    Matrix norm1 = layer_norm(x + concat * w.w_o, &inv1);
    Matrix ffn_pre = norm1 * w.w_ffn1;
    Matrix ffn = ffn_pre.cwiseMax(0.0) * w.w_ffn2;
    Vector inv2;
    Matrix norm2 = layer_norm(norm1 + ffn, &inv2);

    if (cache) {
      LayerCache& c = (*cache)[l];
      c.input = x;
      c.q = std::move(q);
      c.k = std::move(k);
      c.v = std::move(v);
      c.attn = attn;
      c.heads = std::move(concat);
      c.norm1 = std::move(norm1);
      c.inv1 = std::move(inv1);
      c.ffn_pre = std::move(ffn_pre);
      c.norm2 = norm2;
      c.inv2 = std::move(inv2);
    }
    out.attentions.push_back(std::move(attn));
    x = std::move(norm2);
    out.hidden.push_back(x);
  }
  out.logits = x * weights_.token_embedding.transpose();
  return out;
}

Matrix ReferenceEncoder::gradient_wrt_embeddings(const Matrix& token_embeddings,
                                                 const TargetFunction& fn) const {
  check_embeddings(token_embeddings);
  std::vector<LayerCache> cache;
  const EncoderOutput out = forward(token_embeddings, &cache);
  const std::size_t t = token_embeddings.rows();
  if (fn.position >= t) throw InputError("target position out of range");

  Matrix grad = Matrix::Zero(t, config_.d_model);
  switch (fn.mode) {
    case TargetMode::kVocabProb: {
      if (!fn.token_id || *fn.token_id < 0 ||
          static_cast<std::size_t>(*fn.token_id) >= config_.vocab_size) {
        throw InputError("vocab_prob target needs a token id inside the vocabulary");
      }
      Eigen::RowVectorXd p = out.logits.row(fn.position);
      p = (p.array() - p.maxCoeff()).exp().matrix();
      p /= p.sum();
      const double pt = p(*fn.token_id);
      Eigen::RowVectorXd dlogits = -pt * p;
      dlogits(*fn.token_id) += pt;
      grad.row(fn.position) = fn.scale * dlogits * weights_.token_embedding;
      break;
    }
    case TargetMode::kL2Norm: {
      const auto h = out.final_hidden().row(fn.position);
      const double norm = h.norm();
      if (norm > 0.0) grad.row(fn.position) = fn.scale * h / norm;
      break;
    }
  }

  const std::size_t heads = config_.n_heads;
  const std::size_t dk = config_.d_model / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  for (std::size_t l = config_.n_layers; l-- > 0;) {
    const LayerWeights& w = weights_.layers[l];
    const LayerCache& c = cache[l];

    // out = LN(norm1 + relu(norm1 W1) W2)
    Matrix d_res2 = layer_norm_backward(grad, c.norm2, c.inv2);
    Matrix d_hidden = (d_res2 * w.w_ffn2.transpose()).cwiseProduct(
        (c.ffn_pre.array() > 0.0).cast<double>().matrix());
    Matrix d_norm1 = d_res2 + d_hidden * w.w_ffn1.transpose();

    // norm1 = LN(x + heads W_O)
    Matrix d_res1 = layer_norm_backward(d_norm1, c.norm1, c.inv1);
    Matrix d_heads = d_res1 * w.w_o.transpose();
    Matrix d_q(t, config_.d_model), d_k(t, config_.d_model), d_v(t, config_.d_model);
    for (std::size_t h = 0; h < heads; ++h) {
      const auto cols = Eigen::seqN(h * dk, dk);
      const Matrix& a = c.attn[h];
      Matrix d_out = d_heads(Eigen::all, cols);
      Matrix d_a = d_out * c.v(Eigen::all, cols).transpose();
      d_v(Eigen::all, cols) = a.transpose() * d_out;
      Vector row_dot = (d_a.cwiseProduct(a)).rowwise().sum();
      Matrix d_scores = a.cwiseProduct(d_a - row_dot.replicate(1, t)) * scale;
      d_q(Eigen::all, cols) = d_scores * c.k(Eigen::all, cols);
      d_k(Eigen::all, cols) = d_scores.transpose() * c.q(Eigen::all, cols);
    }
    grad = d_res1 + d_q * w.w_q.transpose() + d_k * w.w_k.transpose() +
           d_v * w.w_v.transpose();
  }
  return grad;
}

std::uint64_t ReferenceEncoder::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for_each_weight_matrix(weights_, [&](const Matrix& m) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
    for (std::size_t i = 0; i < m.size() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  });
  return h;
}

void ReferenceEncoder::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open " + path.string() + " for writing");
  os.write(kMagic.data(), kMagic.size());
  for (std::uint64_t v : {std::uint64_t(config_.vocab_size), std::uint64_t(config_.d_model),
                          std::uint64_t(config_.n_heads), std::uint64_t(config_.n_layers),
                          std::uint64_t(config_.ffn_dim), std::uint64_t(config_.max_positions),
                          config_.seed}) {
    write_u64(os, v);
  }
  for_each_weight_matrix(weights_, [&](const Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      write_u64(os, std::bit_cast<std::uint64_t>(m.data()[i]));
    }
  });
  if (!os) throw InputError("failed writing " + path.string());
}

ReferenceEncoder ReferenceEncoder::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open weight file " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw InputError(path.string() + ": bad magic");
  EncoderConfig c;
  c.vocab_size = read_u64(is);
  c.d_model = read_u64(is);
  c.n_heads = read_u64(is);
  c.n_layers = read_u64(is);
  c.ffn_dim = read_u64(is);
  c.max_positions = read_u64(is);
  c.seed = read_u64(is);
  c.validate();
  EncoderWeights w = allocate_weights(c);
  for_each_weight_matrix(w, [&](Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = std::bit_cast<double>(read_u64(is));
    }
  });
  if (is.peek() != std::char_traits<char>::eof()) {
    throw InputError(path.string() + ": trailing bytes after weights");
  }
  return ReferenceEncoder(c, std::move(w));
}

}  // namespace subrank
