#pragma once

#include <optional>
#include <string>
#include <vector>

#include "xmodal/attention.hpp"

namespace xmodal {

/// Fusion weights of the three encoder branches. Ablation zeroes entries
/// without renormalizing.
struct ModalityWeights {
  double audio = 0.4;
  double video = 0.4;
  double text = 0.2;

  static ModalityWeights equal() { return {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}; }
  void validate() const;
  friend bool operator==(const ModalityWeights&, const ModalityWeights&) = default;
};

struct TaskWeights {
  double asr = 0.8;
  double pid = 0.2;

  void validate() const;
  friend bool operator==(const TaskWeights&, const TaskWeights&) = default;
};

struct JointEncoderConfig {
  AttentionConfig attention;
  std::size_t lfbe_dim = 40;
  std::size_t stack_size = 5;
  std::size_t video_dim = 4096;
  std::size_t text_dim = 300;
  ModalityWeights modality_weights;
  /// Fusion weights while training the emotion classifier.
  ModalityWeights finetune_weights = ModalityWeights::equal();
  TaskWeights task_weights;
  /// Zero means "take it from the data".
  std::size_t vocab_size = 0;
  std::size_t speaker_count = 0;

  std::size_t audio_dim() const { return lfbe_dim * stack_size; }
  void validate() const;
};

/// One example's unpadded inputs. A missing video or text stream is an
/// empty tensor.
struct ExampleInputs {
  Tensor audio;  // n_a × audio_dim
  Tensor video;  // n_v × video_dim
  Tensor text;   // n_t × text_dim
};

/// Padded batch. Rows past an example's valid length are padding and never
/// reach the model; a zero video/text length marks that stream missing.
struct ModalBatch {
  Tensor audio;  // B × n_a × audio_dim
  Tensor video;  // B × n_v × video_dim
  Tensor text;   // B × n_t × text_dim
  std::vector<std::size_t> audio_lengths;
  std::vector<std::size_t> video_lengths;
  std::vector<std::size_t> text_lengths;
  std::vector<std::vector<int>> asr_targets;  // bos … eos, optionally right-padded
  std::vector<int> speaker_targets;
  std::optional<Tensor> emotion_targets;      // B × 6 of {0,1}
  std::vector<std::string> ids;

  std::size_t size() const noexcept { return audio_lengths.size(); }
  ExampleInputs example(std::size_t b) const;
  void validate(const JointEncoderConfig& cfg) const;
};

struct ProjectedInputs {
  Var audio;
  Var video;
  Var text;
};

/// Per-branch encoder outputs, all of audio length. Branches that were not
/// computed are null.
struct BranchOutputs {
  Var audio;
  Var video;
  Var text;
};

/// Audio self-encoder plus video→audio and text→audio cross-modal stacks,
/// fused by a fixed weighted sum.
class JointEncoder {
 public:
  JointEncoder() = default;
  JointEncoder(const JointEncoderConfig& cfg, ParameterSet& params, Rng& rng,
               const std::string& prefix = "encoder");

  /// Affine map of each present modality to d_model plus positions.
  ProjectedInputs project_inputs(Tape& tape, const ExampleInputs& ex) const;
  /// Runs only the branches whose weight is non-zero.
  BranchOutputs branches(Tape& tape, const ExampleInputs& ex, const ModalityWeights& w) const;
  /// Weighted sum in the fixed order audio, text, video; zero-weight terms skipped.
  static Var fuse(const BranchOutputs& b, const ModalityWeights& w);
  Var encode(Tape& tape, const ExampleInputs& ex, const ModalityWeights& w) const;

  const JointEncoderConfig& config() const { return cfg_; }
  const Linear& audio_projection() const { return audio_proj_; }
  const Linear& video_projection() const { return video_proj_; }
  const Linear& text_projection() const { return text_proj_; }

 private:
  void check_inputs(const ExampleInputs& ex, const ModalityWeights& w) const;

  JointEncoderConfig cfg_;
  Linear audio_proj_;
  Linear video_proj_;
  Linear text_proj_;
  EncoderStack audio_encoder_;
  CrossModalStack video_branch_;
  CrossModalStack text_branch_;
};

/// Fused encoder output for a whole batch, B × n_a × d_model with zero rows
/// past each example's audio length.
Tensor encode_joint(const JointEncoder& encoder, const ModalBatch& batch, const ModalityWeights& w);

/// Validates inference-time ablation weights: non-negative, audio > 0.
ModalityWeights set_ablation_weights(const ModalityWeights& w);

}  // namespace xmodal
