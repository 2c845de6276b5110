#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "xmodal/joint_encoder.hpp"

namespace xmodal {

struct Checkpoint;

/// Report-column order.
inline constexpr std::size_t kEmotionCount = 6;
inline constexpr std::array<std::string_view, kEmotionCount> kEmotionClasses = {
    "happy", "sad", "anger", "surprise", "disgust", "fear"};

/// 1 where the Likert score is strictly positive. Scores must lie in [0, 3].
Tensor binarize_likert(const Tensor& scores);

struct ClassWeights {
  Tensor pos_weight;  // {C}
};

/// pos_weight_c = negatives_c / positives_c over the training labels.
ClassWeights compute_class_weights(const Tensor& train_labels);

/// Mean-pooled fused encoder output → affine → 6 logits.
class EmotionHead {
 public:
  EmotionHead() = default;
  EmotionHead(const JointEncoderConfig& cfg, ParameterSet& params, Rng& rng,
              const std::string& prefix = "emotion");

  Var logits(Var memory, std::size_t valid_length) const;
  const Linear& classifier() const { return classifier_; }

 private:
  Linear classifier_;
};

class EmotionModel {
 public:
  EmotionModel(const JointEncoderConfig& cfg, std::uint64_t seed);

  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }
  const JointEncoderConfig& config() const noexcept { return cfg_; }
  const JointEncoder& encoder() const noexcept { return encoder_; }
  const EmotionHead& head() const noexcept { return head_; }

  /// B × 6 logits.
  Var logits(Tape& tape, const ModalBatch& batch, const ModalityWeights& w) const;
  Var loss(Tape& tape, const ModalBatch& batch, const ModalityWeights& w,
           const ClassWeights& class_weights) const;

 private:
  JointEncoderConfig cfg_;
  ParameterSet params_;
  JointEncoder encoder_;
  EmotionHead head_;
};

Tensor emotion_logits(const EmotionModel& model, const ModalBatch& batch, const ModalityWeights& w);

/// Fresh emotion model whose encoder (input projections and all branches)
/// is copied from a pretraining checkpoint. Heads start from `seed`; every
/// parameter stays trainable.
EmotionModel load_pretrained_encoder(const Checkpoint& checkpoint, const JointEncoderConfig& cfg,
                                     std::uint64_t seed);

}  // namespace xmodal
