#include "xmodal/joint_encoder.hpp"

#include <cmath>

#include "xmodal/error.hpp"

namespace xmodal {

namespace {

void check_weight(double w, const char* name) {
  if (!std::isfinite(w) || w < 0.0) {
    fail(ErrorKind::config, std::string(name) + " weight must be finite and non-negative");
  }
}

Tensor slice_example(const Tensor& padded, std::size_t b, std::size_t length) {
  if (length == 0) return {};
  const std::size_t n = padded.dim(1), d = padded.dim(2);
  if (length > n) {
    fail(ErrorKind::index, "valid length " + std::to_string(length) + " exceeds padded length " +
                               std::to_string(n));
  }
  const double* src = padded.data() + b * n * d;
  return Tensor({length, d}, std::vector<double>(src, src + length * d));
}

void check_stream(const Tensor& t, const std::vector<std::size_t>& lengths, std::size_t batch,
                  std::size_t dim, const char* name) {
  if (lengths.size() != batch) {
    fail(ErrorKind::validation, std::string(name) + " lengths do not cover the batch");
  }
  std::size_t longest = 0;
  for (auto l : lengths) longest = std::max(longest, l);
  if (longest == 0 && t.empty()) return;
  if (t.rank() != 3 || t.dim(0) != batch) {
    fail(ErrorKind::validation, std::string(name) + " tensor " + shape_string(t.shape()) +
                                    " is not B×n×D for B=" + std::to_string(batch));
  }
  if (t.dim(2) != dim) {
    fail(ErrorKind::config, std::string(name) + " feature dim " + std::to_string(t.dim(2)) +
                                " does not match config " + std::to_string(dim));
  }
  if (longest > t.dim(1)) {
    fail(ErrorKind::validation, std::string(name) + " valid length exceeds padded length");
  }
}

}  // namespace

void ModalityWeights::validate() const {
  check_weight(audio, "audio");
  check_weight(video, "video");
  check_weight(text, "text");
}

void TaskWeights::validate() const {
  check_weight(asr, "asr task");
  check_weight(pid, "pid task");
  if (std::abs(asr + pid - 1.0) > 1e-9) fail(ErrorKind::config, "weights.task must sum to 1");
}

void JointEncoderConfig::validate() const {
  attention.validate();
  if (lfbe_dim == 0) fail(ErrorKind::config, "model.lfbe_dim must be positive");
  if (stack_size == 0) fail(ErrorKind::config, "model.stack_size must be positive");
  if (video_dim == 0) fail(ErrorKind::config, "model.video_dim must be positive");
  if (text_dim == 0) fail(ErrorKind::config, "model.text_dim must be positive");
  modality_weights.validate();
  finetune_weights.validate();
  task_weights.validate();
}

ExampleInputs ModalBatch::example(std::size_t b) const {
  if (b >= size()) fail(ErrorKind::index, "example " + std::to_string(b) + " outside batch");
  ExampleInputs ex;
  ex.audio = slice_example(audio, b, audio_lengths[b]);
  if (!video_lengths.empty()) ex.video = slice_example(video, b, video_lengths[b]);
  if (!text_lengths.empty()) ex.text = slice_example(text, b, text_lengths[b]);
  return ex;
}

void ModalBatch::validate(const JointEncoderConfig& cfg) const {
  const std::size_t batch = size();
  if (batch == 0) fail(ErrorKind::validation, "empty batch");
  check_stream(audio, audio_lengths, batch, cfg.audio_dim(), "audio");
  check_stream(video, video_lengths, batch, cfg.video_dim, "video");
  check_stream(text, text_lengths, batch, cfg.text_dim, "text");
  for (auto l : audio_lengths) {
    if (l == 0) fail(ErrorKind::unsupported_ablation, "audio stream missing; audio is required");
  }
  if (!asr_targets.empty() && asr_targets.size() != batch) {
    fail(ErrorKind::validation, "asr targets do not cover the batch");
  }
  if (!speaker_targets.empty() && speaker_targets.size() != batch) {
    fail(ErrorKind::validation, "speaker targets do not cover the batch");
  }
  if (emotion_targets && (emotion_targets->rank() != 2 || emotion_targets->dim(0) != batch)) {
    fail(ErrorKind::validation, "emotion targets are not B×C");
  }
}

// ---------------------------------------------------------------------------

JointEncoder::JointEncoder(const JointEncoderConfig& cfg, ParameterSet& params, Rng& rng,
                           const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  const auto& a = cfg_.attention;
  audio_proj_ = Linear(params, prefix + ".audio_proj", cfg_.audio_dim(), a.model_dim, true, rng);
  video_proj_ = Linear(params, prefix + ".video_proj", cfg_.video_dim, a.model_dim, true, rng);
  text_proj_ = Linear(params, prefix + ".text_proj", cfg_.text_dim, a.model_dim, true, rng);
  audio_encoder_ = EncoderStack(params, prefix + ".audio", a, a.encoder_layers, rng);
  video_branch_ = CrossModalStack(params, prefix + ".video_to_audio", a, a.crossmodal_layers, rng);
  text_branch_ = CrossModalStack(params, prefix + ".text_to_audio", a, a.crossmodal_layers, rng);
}

ProjectedInputs JointEncoder::project_inputs(Tape& tape, const ExampleInputs& ex) const {
  auto project = [&](const Linear& proj, const Tensor& x, std::size_t dim, const char* name) -> Var {
    if (x.empty()) return {};
    if (x.rank() != 2 || x.cols() != dim) {
      fail(ErrorKind::config, std::string(name) + " input " + shape_string(x.shape()) +
                                  " does not match configured dim " + std::to_string(dim));
    }
    Var y = proj(tape.constant(x));
    return add(y, tape.constant(positional_encoding(x.rows(), cfg_.attention.model_dim)));
  };
  ProjectedInputs out;
  out.audio = project(audio_proj_, ex.audio, cfg_.audio_dim(), "audio");
  out.video = project(video_proj_, ex.video, cfg_.video_dim, "video");
  out.text = project(text_proj_, ex.text, cfg_.text_dim, "text");
  return out;
}

void JointEncoder::check_inputs(const ExampleInputs& ex, const ModalityWeights& w) const {
  w.validate();
  if (w.audio == 0.0 && w.video == 0.0 && w.text == 0.0) {
    fail(ErrorKind::config, "all modality weights are zero");
  }
  if (ex.audio.empty()) {
    fail(ErrorKind::unsupported_ablation, "audio stream missing; cross-modal queries need audio");
  }
  if (w.video > 0.0 && ex.video.empty()) {
    fail(ErrorKind::validation, "video weight is non-zero but the video stream is missing");
  }
  if (w.text > 0.0 && ex.text.empty()) {
    fail(ErrorKind::validation, "text weight is non-zero but the text stream is missing");
  }
}

BranchOutputs JointEncoder::branches(Tape& tape, const ExampleInputs& ex,
                                     const ModalityWeights& w) const {
  check_inputs(ex, w);
  ExampleInputs used;
  used.audio = ex.audio;
  if (w.video > 0.0) used.video = ex.video;
  if (w.text > 0.0) used.text = ex.text;
  const ProjectedInputs p = project_inputs(tape, used);
  BranchOutputs out;
  if (w.audio > 0.0) out.audio = audio_encoder_(p.audio);
  if (w.video > 0.0) out.video = video_branch_(p.audio, p.video);
  if (w.text > 0.0) out.text = text_branch_(p.audio, p.text);
  return out;
}

Var JointEncoder::fuse(const BranchOutputs& b, const ModalityWeights& w) {
  Var sum;
  auto term = [&sum](Var x, double weight) {
    if (weight == 0.0) return;
    if (!x) fail(ErrorKind::validation, "missing branch output for a non-zero weight");
    Var scaled = scale(x, weight);
    sum = sum ? add(sum, scaled) : scaled;
  };
  term(b.audio, w.audio);
  term(b.text, w.text);
  term(b.video, w.video);
  if (!sum) fail(ErrorKind::config, "all modality weights are zero");
  return sum;
}

Var JointEncoder::encode(Tape& tape, const ExampleInputs& ex, const ModalityWeights& w) const {
  return fuse(branches(tape, ex, w), w);
}

Tensor encode_joint(const JointEncoder& encoder, const ModalBatch& batch, const ModalityWeights& w) {
  const auto& cfg = encoder.config();
  batch.validate(cfg);
  const std::size_t n = batch.audio.dim(1), d = cfg.attention.model_dim;
  Tensor out({batch.size(), n, d});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Tape tape(false);
    const Tensor& y = encoder.encode(tape, batch.example(b), w).value();
    std::copy(y.data(), y.data() + y.size(), out.data() + b * n * d);
  }
  return out;
}

ModalityWeights set_ablation_weights(const ModalityWeights& w) {
  w.validate();
  if (!(w.audio > 0.0)) {
    fail(ErrorKind::unsupported_ablation, "audio weight must be positive; audio cannot be ablated");
  }
  return w;
}

}  // namespace xmodal
