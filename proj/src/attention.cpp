#include "xmodal/attention.hpp"

#include <cmath>

#include "xmodal/error.hpp"

namespace xmodal {

void AttentionConfig::validate() const {
  auto positive = [](std::size_t v, const char* field) {
    if (v == 0) fail(ErrorKind::config, std::string(field) + " must be positive");
  };
  positive(model_dim, "model.d_model");
  positive(heads, "model.heads");
  positive(ff_dim, "model.ff_dim");
  positive(encoder_layers, "model.encoder_layers");
  positive(crossmodal_layers, "model.crossmodal_layers");
  positive(decoder_layers, "model.decoder_layers");
  if (model_dim % heads != 0) {
    fail(ErrorKind::config, "model.d_model (" + std::to_string(model_dim) +
                                ") must be divisible by model.heads (" + std::to_string(heads) + ")");
  }
  if (!(layer_norm_eps > 0.0)) fail(ErrorKind::config, "model.layer_norm_eps must be positive");
}

// ---------------------------------------------------------------------------
// Masks

AttentionMask AttentionMask::causal() {
  AttentionMask m;
  m.kind_ = Kind::causal;
  return m;
}

AttentionMask AttentionMask::key_padding(std::size_t valid, std::size_t total) {
  if (valid > total) {
    fail(ErrorKind::index, "valid key length " + std::to_string(valid) + " exceeds " +
                               std::to_string(total));
  }
  std::vector<std::uint8_t> v(total, 0);
  std::fill(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(valid), 1);
  return key_padding(std::move(v));
}

AttentionMask AttentionMask::key_padding(std::vector<std::uint8_t> key_valid) {
  AttentionMask m;
  m.kind_ = Kind::key_padding;
  m.key_valid_ = std::move(key_valid);
  return m;
}

std::vector<std::uint8_t> AttentionMask::allowed(std::size_t n_q, std::size_t n_k) const {
  std::vector<std::uint8_t> out;
  switch (kind_) {
    case Kind::none:
      break;
    case Kind::causal:
      out.assign(n_q * n_k, 0);
      for (std::size_t i = 0; i < n_q; ++i)
        for (std::size_t j = 0; j <= i && j < n_k; ++j) out[i * n_k + j] = 1;
      break;
    case Kind::key_padding:
      if (key_valid_.size() != n_k) {
        fail(ErrorKind::dimension, "key-padding mask covers " + std::to_string(key_valid_.size()) +
                                       " keys, attention has " + std::to_string(n_k));
      }
      out.resize(n_q * n_k);
      for (std::size_t i = 0; i < n_q; ++i)
        std::copy(key_valid_.begin(), key_valid_.end(), out.begin() + static_cast<std::ptrdiff_t>(i * n_k));
      break;
  }
  return out;
}

AttentionResult scaled_dot_attention(Var q, Var k, Var v, const AttentionMask& mask) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  if (qv.rank() != 2 || kv.rank() != 2 || qv.cols() != kv.cols()) {
    fail(ErrorKind::dimension, "attention query " + shape_string(qv.shape()) + " and key " +
                                   shape_string(kv.shape()) + " must share the last dimension");
  }
  if (v.value().rank() != 2 || v.value().rows() != kv.rows()) {
    fail(ErrorKind::dimension, "attention value " + shape_string(v.value().shape()) +
                                   " must have one row per key " + shape_string(kv.shape()));
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(qv.cols()));
  Var scores = scale(matmul_nt(q, k), inv_sqrt_d);
  const auto allowed = mask.allowed(qv.rows(), kv.rows());
  Var weights = masked_softmax(scores, allowed);
  return {matmul(weights, v), weights};
}

Tensor positional_encoding(std::size_t length, std::size_t model_dim) {
  Tensor pe({length, model_dim});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < model_dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(model_dim));
      const double angle = static_cast<double>(pos) * freq;
      pe.at(pos, i) = std::sin(angle);
      if (i + 1 < model_dim) pe.at(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Tensor normal_scaled(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

// ---------------------------------------------------------------------------
// Building blocks

Linear::Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
               bool bias, Rng& rng) {
  weight_ = &params.add(name + ".weight", uniform_fan_in({in, out}, in, rng));
  if (bias) bias_ = &params.add(name + ".bias", Tensor({out}));
}

Var Linear::operator()(Var x) const {
  Tape& t = x.tape();
  Var y = matmul(x, t.parameter(*weight_));
  if (bias_) y = add_bias(y, t.parameter(*bias_));
  return y;
}

LayerNorm::LayerNorm(ParameterSet& params, const std::string& name, std::size_t dim, double eps)
    : eps_(eps) {
  gain_ = &params.add(name + ".gain", Tensor({dim}, 1.0));
  bias_ = &params.add(name + ".bias", Tensor({dim}));
}

Var LayerNorm::operator()(Var x) const {
  Tape& t = x.tape();
  return layer_norm(x, t.parameter(*gain_), t.parameter(*bias_), eps_);
}

FeedForward::FeedForward(ParameterSet& params, const std::string& name, std::size_t model_dim,
                         std::size_t ff_dim, Rng& rng)
    : inner_(params, name + ".inner", model_dim, ff_dim, true, rng),
      outer_(params, name + ".outer", ff_dim, model_dim, true, rng) {}

Var FeedForward::operator()(Var x) const { return outer_(gelu(inner_(x))); }

MultiHeadAttention::MultiHeadAttention(ParameterSet& params, const std::string& name,
                                       std::size_t model_dim, std::size_t heads, Rng& rng)
    : q_(params, name + ".query", model_dim, model_dim, false, rng),
      k_(params, name + ".key", model_dim, model_dim, false, rng),
      v_(params, name + ".value", model_dim, model_dim, false, rng),
      out_(params, name + ".output", model_dim, model_dim, true, rng),
      heads_(heads) {
  if (heads == 0 || model_dim % heads != 0) {
    fail(ErrorKind::config, "attention " + name + ": model dim not divisible by heads");
  }
}

Var MultiHeadAttention::operator()(Var query, Var memory, const AttentionMask& mask,
                                   std::vector<Tensor>* weights) const {
  Var q = q_(query);
  Var k = k_(memory);
  Var v = v_(memory);
  if (weights) weights->clear();
  if (heads_ == 1) {
    auto r = scaled_dot_attention(q, k, v, mask);
    if (weights) weights->push_back(r.weights.value());
    return out_(r.output);
  }
  const std::size_t dh = q.value().cols() / heads_;
  std::vector<Var> outputs;
  outputs.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    auto r = scaled_dot_attention(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh),
                                  slice_cols(v, h * dh, dh), mask);
    if (weights) weights->push_back(r.weights.value());
    outputs.push_back(r.output);
  }
  return out_(concat_cols(outputs));
}

EncoderLayer::EncoderLayer(ParameterSet& params, const std::string& name,
                           const AttentionConfig& cfg, Rng& rng)
    : norm1_(params, name + ".attn_norm", cfg.model_dim, cfg.layer_norm_eps),
      attn_(params, name + ".self_attn", cfg.model_dim, cfg.heads, rng),
      norm2_(params, name + ".ff_norm", cfg.model_dim, cfg.layer_norm_eps),
      ff_(params, name + ".ff", cfg.model_dim, cfg.ff_dim, rng) {}

Var EncoderLayer::operator()(Var x, const AttentionMask& mask) const {
  Var h = norm1_(x);
  x = add(x, attn_(h, h, mask));
  return add(x, ff_(norm2_(x)));
}

CrossModalLayer::CrossModalLayer(ParameterSet& params, const std::string& name,
                                 const AttentionConfig& cfg, Rng& rng)
    : target_norm_(params, name + ".target_norm", cfg.model_dim, cfg.layer_norm_eps),
      source_norm_(params, name + ".source_norm", cfg.model_dim, cfg.layer_norm_eps),
      attn_(params, name + ".cross_attn", cfg.model_dim, cfg.heads, rng),
      ff_norm_(params, name + ".ff_norm", cfg.model_dim, cfg.layer_norm_eps),
      ff_(params, name + ".ff", cfg.model_dim, cfg.ff_dim, rng) {}

Var CrossModalLayer::operator()(Var target, Var source, const AttentionMask& source_mask) const {
  Var x = add(target, attn_(target_norm_(target), source_norm_(source), source_mask));
  return add(x, ff_(ff_norm_(x)));
}

DecoderLayer::DecoderLayer(ParameterSet& params, const std::string& name,
                           const AttentionConfig& cfg, Rng& rng)
    : norm1_(params, name + ".self_norm", cfg.model_dim, cfg.layer_norm_eps),
      self_attn_(params, name + ".self_attn", cfg.model_dim, cfg.heads, rng),
      norm2_(params, name + ".cross_norm", cfg.model_dim, cfg.layer_norm_eps),
      cross_attn_(params, name + ".cross_attn", cfg.model_dim, cfg.heads, rng),
      norm3_(params, name + ".ff_norm", cfg.model_dim, cfg.layer_norm_eps),
      ff_(params, name + ".ff", cfg.model_dim, cfg.ff_dim, rng) {}

Var DecoderLayer::operator()(Var y, Var memory, const AttentionMask& memory_mask) const {
  Var h = norm1_(y);
  y = add(y, self_attn_(h, h, AttentionMask::causal()));
  y = add(y, cross_attn_(norm2_(y), memory, memory_mask));
  return add(y, ff_(norm3_(y)));
}

EncoderStack::EncoderStack(ParameterSet& params, const std::string& name,
                           const AttentionConfig& cfg, std::size_t layers, Rng& rng) {
  for (std::size_t i = 0; i < layers; ++i)
    layers_.emplace_back(params, name + ".layer" + std::to_string(i), cfg, rng);
  final_norm_ = LayerNorm(params, name + ".final_norm", cfg.model_dim, cfg.layer_norm_eps);
}

Var EncoderStack::operator()(Var x, const AttentionMask& mask) const {
  for (const auto& layer : layers_) x = layer(x, mask);
  return final_norm_(x);
}

CrossModalStack::CrossModalStack(ParameterSet& params, const std::string& name,
                                 const AttentionConfig& cfg, std::size_t layers, Rng& rng) {
  for (std::size_t i = 0; i < layers; ++i)
    layers_.emplace_back(params, name + ".layer" + std::to_string(i), cfg, rng);
  final_norm_ = LayerNorm(params, name + ".final_norm", cfg.model_dim, cfg.layer_norm_eps);
}

Var CrossModalStack::operator()(Var target, Var source, const AttentionMask& source_mask) const {
  for (const auto& layer : layers_) target = layer(target, source, source_mask);
  return final_norm_(target);
}

DecoderStack::DecoderStack(ParameterSet& params, const std::string& name,
                           const AttentionConfig& cfg, std::size_t layers, Rng& rng) {
  for (std::size_t i = 0; i < layers; ++i)
    layers_.emplace_back(params, name + ".layer" + std::to_string(i), cfg, rng);
  final_norm_ = LayerNorm(params, name + ".final_norm", cfg.model_dim, cfg.layer_norm_eps);
}

Var DecoderStack::operator()(Var y, Var memory, const AttentionMask& memory_mask) const {
  for (const auto& layer : layers_) y = layer(y, memory, memory_mask);
  return final_norm_(y);
}

}  // namespace xmodal
