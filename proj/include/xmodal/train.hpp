#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "xmodal/checkpoint.hpp"
#include "xmodal/emotion.hpp"
#include "xmodal/eval.hpp"
#include "xmodal/manifest.hpp"
#include "xmodal/pretrain_tasks.hpp"

namespace xmodal {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 8;
  std::size_t warmup = 100;
  double lr_scale = 1.0;  // k in the schedule
  AdamConfig adam;
  double clip_norm = 5.0;  // 0 disables clipping
  std::uint64_t seed = 1;
  std::size_t eval_every = 100;
  std::size_t runs = 10;

  void validate(const std::string& section = "train") const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// k·d^−0.5·min(step^−0.5, step·warmup^−1.5). Step 0 is a domain error.
double noam_lr(std::size_t step, std::size_t d_model, std::size_t warmup, double k);

/// Per-parameter first/second moments keyed by parameter order.
struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// Bias-corrected Adam update of every parameter from its .grad.
void adam_step(ParameterSet& params, AdamState& state, double lr, const AdamConfig& cfg);

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_gradients(ParameterSet& params, double max_norm);

struct PretrainStep {
  std::uint64_t step = 0;
  double lr = 0.0;
  TaskLossBreakdown losses;
};

/// Resumable pretraining loop. The data set must outlive the trainer.
class PretrainTrainer {
 public:
  PretrainTrainer(const JointEncoderConfig& cfg, const TrainConfig& train, const Dataset& data);
  /// Resumes from a checkpoint written by checkpoint().
  PretrainTrainer(const Checkpoint& ckpt, const TrainConfig& train, const Dataset& data);

  PretrainStep step();
  std::uint64_t steps_done() const noexcept { return adam_.step; }
  Checkpoint checkpoint() const;
  const PretrainModel& model() const noexcept { return *model_; }
  PretrainModel& model() noexcept { return *model_; }

 private:
  TrainConfig train_;
  const Dataset* data_;
  std::unique_ptr<PretrainModel> model_;
  AdamState adam_;
  BatchSampler sampler_;
};

/// Teacher-forced losses and accuracies over a whole data set.
TaskLossBreakdown evaluate_pretrain(const PretrainModel& model, const Dataset& data,
                                    std::size_t batch_size = 16);

/// Writes one JSON object per line; null stream disables tracing.
class MetricsTrace {
 public:
  explicit MetricsTrace(std::ostream* os = nullptr) : os_(os) {}
  void pretrain(const PretrainStep& s);
  void finetune(std::uint64_t step, double lr, double loss);
  void finetune_eval(std::uint64_t step, const EvalReport& dev);

 private:
  std::ostream* os_;
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<PretrainStep> trace;
};

/// Fresh model from `seed`, `train.steps` updates. Breakdowns are logged
/// every eval interval.
PretrainResult pretrain_run(const JointEncoderConfig& cfg, TrainConfig train, const Dataset& data,
                            std::uint64_t seed, MetricsTrace* trace = nullptr);

struct FinetuneStep {
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

class FinetuneTrainer {
 public:
  /// Random initialization from train.seed, or the encoder of `init`.
  FinetuneTrainer(const JointEncoderConfig& cfg, const TrainConfig& train, const Dataset& data,
                  const Checkpoint* init = nullptr);
  /// Resumes an emotion checkpoint written by checkpoint().
  FinetuneTrainer(const Checkpoint& resume, const TrainConfig& train, const Dataset& data);

  FinetuneStep step();
  std::uint64_t steps_done() const noexcept { return adam_.step; }
  Checkpoint checkpoint() const;
  const EmotionModel& model() const noexcept { return *model_; }
  EmotionModel& model() noexcept { return *model_; }
  const ClassWeights& class_weights() const noexcept { return weights_; }

 private:
  TrainConfig train_;
  const Dataset* data_;
  std::unique_ptr<EmotionModel> model_;
  ClassWeights weights_;
  AdamState adam_;
  BatchSampler sampler_;
};

struct FinetuneResult {
  std::unique_ptr<EmotionModel> model;
  Checkpoint checkpoint;
  std::vector<FinetuneStep> trace;
  /// Dev reports at every eval interval; the last one is the final model.
  std::vector<EvalReport> dev_reports;
};

FinetuneResult finetune_run(const JointEncoderConfig& cfg, TrainConfig train, const Dataset& train_data,
                            const Dataset& dev_data, const Checkpoint* init, std::uint64_t seed,
                            MetricsTrace* trace = nullptr);

/// Index of the run maximizing (mean WA + mean F1)/2; ties go to the
/// lowest index.
std::size_t select_best_of_n(std::span<const EvalReport> runs);

/// Model rebuilt from an emotion checkpoint.
EmotionModel emotion_model_from_checkpoint(const Checkpoint& ckpt);
PretrainModel pretrain_model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace xmodal
