#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "xmodal/autodiff.hpp"

namespace xmodal {

using Rng = std::mt19937_64;

struct AttentionConfig {
  std::size_t model_dim = 512;
  std::size_t heads = 4;
  std::size_t ff_dim = 200;
  std::size_t encoder_layers = 4;
  std::size_t crossmodal_layers = 4;
  std::size_t decoder_layers = 2;
  double layer_norm_eps = 1e-6;

  std::size_t head_dim() const { return model_dim / heads; }
  /// Throws a config error naming the offending field.
  void validate() const;
};

/// Which keys each query may see. Masked entries receive exactly zero weight.
class AttentionMask {
 public:
  enum class Kind { none, causal, key_padding };

  AttentionMask() = default;
  static AttentionMask none() { return {}; }
  static AttentionMask causal();
  /// First `valid` of `total` keys are visible.
  static AttentionMask key_padding(std::size_t valid, std::size_t total);
  static AttentionMask key_padding(std::vector<std::uint8_t> key_valid);

  Kind kind() const noexcept { return kind_; }
  const std::vector<std::uint8_t>& key_valid() const noexcept { return key_valid_; }

  /// Row-major n_q×n_k visibility matrix; empty when nothing is masked.
  std::vector<std::uint8_t> allowed(std::size_t n_q, std::size_t n_k) const;

 private:
  Kind kind_ = Kind::none;
  std::vector<std::uint8_t> key_valid_;
};

struct AttentionResult {
  Var output;
  Var weights;
};

/// softmax(Q Kᵀ / √d) V with masked scores pushed to −1e9 before the softmax.
AttentionResult scaled_dot_attention(Var q, Var k, Var v, const AttentionMask& mask = {});

/// Sinusoidal table: even columns sin(pos / 10000^(2i/d)), odd columns cos.
Tensor positional_encoding(std::size_t length, std::size_t model_dim);

// Parameter initialization.
Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng);
Tensor normal_scaled(Shape shape, double stddev, Rng& rng);

/// y = x W (+ b), W stored in×out.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
         bool bias, Rng& rng);

  Var operator()(Var x) const;
  Parameter& weight() const { return *weight_; }
  Parameter* bias() const { return bias_; }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet& params, const std::string& name, std::size_t dim, double eps);

  Var operator()(Var x) const;
  Parameter& gain() const { return *gain_; }
  Parameter& bias() const { return *bias_; }

 private:
  Parameter* gain_ = nullptr;
  Parameter* bias_ = nullptr;
  double eps_ = 1e-6;
};

/// Linear → GELU → Linear.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterSet& params, const std::string& name, std::size_t model_dim,
              std::size_t ff_dim, Rng& rng);

  Var operator()(Var x) const;
  const Linear& inner() const { return inner_; }
  const Linear& outer() const { return outer_; }

 private:
  Linear inner_;
  Linear outer_;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet& params, const std::string& name, std::size_t model_dim,
                     std::size_t heads, Rng& rng);

  /// Queries from `query`, keys and values from `memory`. When `weights`
  /// is given it receives each head's attention matrix.
  Var operator()(Var query, Var memory, const AttentionMask& mask,
                 std::vector<Tensor>* weights = nullptr) const;

  const Linear& query_proj() const { return q_; }
  const Linear& key_proj() const { return k_; }
  const Linear& value_proj() const { return v_; }
  const Linear& output_proj() const { return out_; }
  std::size_t heads() const { return heads_; }

 private:
  Linear q_, k_, v_, out_;
  std::size_t heads_ = 1;
};

/// Pre-norm self-attention block: x + Attn(LN(x)), then + FFN(LN(·)).
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(ParameterSet& params, const std::string& name, const AttentionConfig& cfg, Rng& rng);

  Var operator()(Var x, const AttentionMask& mask = {}) const;

  const LayerNorm& attn_norm() const { return norm1_; }
  const MultiHeadAttention& attention() const { return attn_; }
  const LayerNorm& ff_norm() const { return norm2_; }
  const FeedForward& feed_forward() const { return ff_; }

 private:
  LayerNorm norm1_;
  MultiHeadAttention attn_;
  LayerNorm norm2_;
  FeedForward ff_;
};

/// Queries from the (audio) target stream, keys/values from a source
/// modality; output keeps the target length.
class CrossModalLayer {
 public:
  CrossModalLayer() = default;
  CrossModalLayer(ParameterSet& params, const std::string& name, const AttentionConfig& cfg,
                  Rng& rng);

  Var operator()(Var target, Var source, const AttentionMask& source_mask = {}) const;

  const LayerNorm& target_norm() const { return target_norm_; }
  const LayerNorm& source_norm() const { return source_norm_; }
  const MultiHeadAttention& attention() const { return attn_; }
  const LayerNorm& ff_norm() const { return ff_norm_; }
  const FeedForward& feed_forward() const { return ff_; }

 private:
  LayerNorm target_norm_;
  LayerNorm source_norm_;
  MultiHeadAttention attn_;
  LayerNorm ff_norm_;
  FeedForward ff_;
};

/// Causal self-attention, cross-attention into encoder memory, FFN.
class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(ParameterSet& params, const std::string& name, const AttentionConfig& cfg, Rng& rng);

  Var operator()(Var y, Var memory, const AttentionMask& memory_mask = {}) const;

  const MultiHeadAttention& self_attention() const { return self_attn_; }
  const MultiHeadAttention& cross_attention() const { return cross_attn_; }

 private:
  LayerNorm norm1_;
  MultiHeadAttention self_attn_;
  LayerNorm norm2_;
  MultiHeadAttention cross_attn_;
  LayerNorm norm3_;
  FeedForward ff_;
};

/// Stack of encoder layers followed by a final LayerNorm.
class EncoderStack {
 public:
  EncoderStack() = default;
  EncoderStack(ParameterSet& params, const std::string& name, const AttentionConfig& cfg,
               std::size_t layers, Rng& rng);
  Var operator()(Var x, const AttentionMask& mask = {}) const;

 private:
  std::vector<EncoderLayer> layers_;
  LayerNorm final_norm_;
};

class CrossModalStack {
 public:
  CrossModalStack() = default;
  CrossModalStack(ParameterSet& params, const std::string& name, const AttentionConfig& cfg,
                  std::size_t layers, Rng& rng);
  Var operator()(Var target, Var source, const AttentionMask& source_mask = {}) const;

 private:
  std::vector<CrossModalLayer> layers_;
  LayerNorm final_norm_;
};

class DecoderStack {
 public:
  DecoderStack() = default;
  DecoderStack(ParameterSet& params, const std::string& name, const AttentionConfig& cfg,
               std::size_t layers, Rng& rng);
  Var operator()(Var y, Var memory, const AttentionMask& memory_mask = {}) const;

 private:
  std::vector<DecoderLayer> layers_;
  LayerNorm final_norm_;
};

}  // namespace xmodal
