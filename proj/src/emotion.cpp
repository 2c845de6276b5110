#include "xmodal/emotion.hpp"

#include <sstream>

#include "xmodal/checkpoint.hpp"
#include "xmodal/error.hpp"

namespace xmodal {

Tensor binarize_likert(const Tensor& scores) {
  Tensor out(scores.shape());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores[i];
    if (!(s >= 0.0 && s <= 3.0)) {
      fail(ErrorKind::validation, "Likert score " + std::to_string(s) + " outside [0, 3]");
    }
    out[i] = s > 0.0 ? 1.0 : 0.0;
  }
  return out;
}

ClassWeights compute_class_weights(const Tensor& train_labels) {
  if (train_labels.rank() != 2) {
    fail(ErrorKind::dimension, "class weights need an n×C label matrix");
  }
  const std::size_t n = train_labels.rows(), c = train_labels.cols();
  ClassWeights w{Tensor({c})};
  for (std::size_t j = 0; j < c; ++j) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) pos += train_labels.at(i, j) > 0.5 ? 1 : 0;
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) {
      const std::string name = j < kEmotionCount ? std::string(kEmotionClasses[j]) : std::to_string(j);
      fail(ErrorKind::degenerate_class, "class '" + name + "' has " + std::to_string(pos) +
                                            " positives and " + std::to_string(neg) + " negatives");
    }
    w.pos_weight[j] = static_cast<double>(neg) / static_cast<double>(pos);
  }
  return w;
}

EmotionHead::EmotionHead(const JointEncoderConfig& cfg, ParameterSet& params, Rng& rng,
                         const std::string& prefix)
    : classifier_(params, prefix + ".classifier", cfg.attention.model_dim, kEmotionCount, true, rng) {}

Var EmotionHead::logits(Var memory, std::size_t valid_length) const {
  Var pooled = mean_pool(memory, valid_length);
  return classifier_(reshape(pooled, {1, pooled.value().size()}));
}

EmotionModel::EmotionModel(const JointEncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  encoder_ = JointEncoder(cfg_, params_, rng, "encoder");
  head_ = EmotionHead(cfg_, params_, rng, "emotion");
}

Var EmotionModel::logits(Tape& tape, const ModalBatch& batch, const ModalityWeights& w) const {
  batch.validate(cfg_);
  std::vector<Var> rows;
  rows.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Var memory = encoder_.encode(tape, batch.example(b), w);
    rows.push_back(head_.logits(memory, batch.audio_lengths[b]));
  }
  return concat_rows(rows);
}

Var EmotionModel::loss(Tape& tape, const ModalBatch& batch, const ModalityWeights& w,
                       const ClassWeights& class_weights) const {
  if (!batch.emotion_targets) fail(ErrorKind::validation, "batch has no emotion targets");
  return binary_cross_entropy_with_weights(logits(tape, batch, w), *batch.emotion_targets,
                                           class_weights.pos_weight);
}

Tensor emotion_logits(const EmotionModel& model, const ModalBatch& batch, const ModalityWeights& w) {
  Tape tape(false);
  return model.logits(tape, batch, w).value();
}

EmotionModel load_pretrained_encoder(const Checkpoint& checkpoint, const JointEncoderConfig& cfg,
                                     std::uint64_t seed) {
  std::vector<std::string> differences = architecture_differences(checkpoint.config, cfg);
  EmotionModel model(cfg, seed);
  const std::string prefix = "encoder.";
  for (auto& p : model.parameters()) {
    if (!p->name().starts_with(prefix)) continue;
    const Tensor* stored = checkpoint.find_parameter(p->name());
    if (!stored) {
      differences.push_back(p->name() + ": missing from checkpoint");
    } else if (stored->shape() != p->value().shape()) {
      differences.push_back(p->name() + ": checkpoint " + shape_string(stored->shape()) +
                            " vs model " + shape_string(p->value().shape()));
    }
  }
  if (!differences.empty()) {
    std::ostringstream os;
    os << "checkpoint is incompatible with the configured encoder:";
    for (const auto& d : differences) os << "\n  " << d;
    fail(ErrorKind::incompatible, os.str());
  }
  for (auto& p : model.parameters()) {
    if (p->name().starts_with(prefix)) p->assign(*checkpoint.find_parameter(p->name()));
  }
  return model;
}

}  // namespace xmodal
