#include "xmodal/train.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "xmodal/error.hpp"

namespace xmodal {

namespace {

// Sampler streams are decorrelated from the parameter-init stream.
constexpr std::uint64_t kSamplerSalt = 0x9e3779b97f4a7c15ULL;

void ensure_moments(const ParameterSet& params, AdamState& s) {
  if (s.m.size() == params.count()) return;
  s.m.clear();
  s.v.clear();
  for (const auto& p : params) {
    s.m.emplace_back(p->value().shape());
    s.v.emplace_back(p->value().shape());
  }
}

OptimizerState export_moments(const ParameterSet& params, const AdamState& s) {
  OptimizerState o;
  o.step = s.step;
  if (s.m.size() != params.count()) return o;
  std::size_t i = 0;
  for (const auto& p : params) {
    o.first_moment.push_back({p->name(), s.m[i]});
    o.second_moment.push_back({p->name(), s.v[i]});
    ++i;
  }
  return o;
}

AdamState import_moments(const ParameterSet& params, const OptimizerState& o) {
  AdamState s;
  s.step = o.step;
  if (o.first_moment.empty()) return s;
  if (o.first_moment.size() != params.count() || o.second_moment.size() != params.count()) {
    fail(ErrorKind::incompatible, "optimizer state does not cover the model's parameters");
  }
  std::size_t i = 0;
  for (const auto& p : params) {
    const auto& m = o.first_moment[i];
    const auto& v = o.second_moment[i];
    if (m.name != p->name() || v.name != p->name() || m.value.shape() != p->value().shape() ||
        v.value.shape() != p->value().shape()) {
      fail(ErrorKind::incompatible, "optimizer moments for '" + p->name() + "' do not match the model");
    }
    s.m.push_back(m.value);
    s.v.push_back(v.value);
    ++i;
  }
  return s;
}

double optimizer_update(ParameterSet& params, AdamState& adam, const TrainConfig& train, std::size_t d_model) {
  const double lr = noam_lr(adam.step + 1, d_model, train.warmup, train.lr_scale);
  if (train.clip_norm > 0.0) clip_gradients(params, train.clip_norm);
  adam_step(params, adam, lr, train.adam);
  return lr;
}

JointEncoderConfig with_data_counts(JointEncoderConfig cfg, const Dataset& data) {
  if (cfg.speaker_count == 0) cfg.speaker_count = data.speaker_count();
  if (cfg.vocab_size == 0) fail(ErrorKind::config, "model.vocab_size must be set before pretraining");
  return cfg;
}

}  // namespace

void TrainConfig::validate(const std::string& section) const {
  auto need = [&](bool ok, const char* field, const char* what) {
    if (!ok) fail(ErrorKind::config, section + "." + field + " " + what);
  };
  need(steps >= 1, "steps", "must be at least 1");
  need(batch_size >= 1, "batch_size", "must be at least 1");
  need(warmup >= 1, "warmup", "must be at least 1");
  need(lr_scale > 0.0, "lr_scale", "must be positive");
  need(adam.beta1 >= 0.0 && adam.beta1 < 1.0, "beta1", "must lie in [0, 1)");
  need(adam.beta2 >= 0.0 && adam.beta2 < 1.0, "beta2", "must lie in [0, 1)");
  need(adam.epsilon > 0.0, "epsilon", "must be positive");
  need(clip_norm >= 0.0, "clip_norm", "must be non-negative");
  need(eval_every >= 1, "eval_every", "must be at least 1");
  need(runs >= 1, "runs", "must be at least 1");
}

double noam_lr(std::size_t step, std::size_t d_model, std::size_t warmup, double k) {
  if (step == 0) fail(ErrorKind::domain, "noam_lr is undefined at step 0");
  if (warmup == 0 || d_model == 0) fail(ErrorKind::domain, "noam_lr needs positive warmup and d_model");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return k * std::pow(static_cast<double>(d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

void adam_step(ParameterSet& params, AdamState& state, double lr, const AdamConfig& cfg) {
  ensure_moments(params, state);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  std::size_t i = 0;
  for (auto& p : params) {
    Tensor& value = p->value();
    const Tensor& g = p->grad();
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      value[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.epsilon);
    }
    ++i;
  }
}

double clip_gradients(ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p->grad().values()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params)
      for (double& g : p->grad().values()) g *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Pretraining

PretrainTrainer::PretrainTrainer(const JointEncoderConfig& cfg, const TrainConfig& train, const Dataset& data)
    : train_(train),
      data_(&data),
      model_(std::make_unique<PretrainModel>(with_data_counts(cfg, data), train.seed)),
      sampler_(data.size(), train.batch_size, train.seed ^ kSamplerSalt) {
  train_.validate("pretrain");
}

PretrainTrainer::PretrainTrainer(const Checkpoint& ckpt, const TrainConfig& train, const Dataset& data)
    : train_(train),
      data_(&data),
      model_(std::make_unique<PretrainModel>(ckpt.config, train.seed)),
      sampler_(data.size(), train.batch_size, train.seed ^ kSamplerSalt) {
  if (ckpt.model_kind != "pretrain") {
    fail(ErrorKind::incompatible, "cannot resume pretraining from a '" + ckpt.model_kind + "' checkpoint");
  }
  train_.validate("pretrain");
  restore_parameters(model_->parameters(), ckpt.parameters);
  adam_ = import_moments(model_->parameters(), ckpt.optimizer);
  if (!ckpt.rng_state.empty()) sampler_.restore(ckpt.rng_state);
}

PretrainStep PretrainTrainer::step() {
  const ModalBatch batch = collate(*data_, sampler_.next());
  auto& params = model_->parameters();
  params.zero_grad();
  Tape tape;
  const MultitaskLoss loss = model_->forward(tape, batch);
  PretrainStep out;
  out.step = adam_.step + 1;
  out.losses = loss.breakdown;
  if (!std::isfinite(out.losses.combined)) {
    fail(ErrorKind::divergence, "non-finite pretraining loss at step " + std::to_string(out.step));
  }
  tape.backward(loss.combined);
  out.lr = optimizer_update(params, adam_, train_, model_->config().attention.model_dim);
  return out;
}

Checkpoint PretrainTrainer::checkpoint() const {
  Checkpoint c;
  c.model_kind = "pretrain";
  c.config = model_->config();
  c.parameters = snapshot_parameters(model_->parameters());
  c.optimizer = export_moments(model_->parameters(), adam_);
  c.rng_state = sampler_.state();
  c.metadata["step"] = std::to_string(adam_.step);
  c.metadata["seed"] = std::to_string(train_.seed);
  return c;
}

TaskLossBreakdown evaluate_pretrain(const PretrainModel& model, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) fail(ErrorKind::validation, "cannot evaluate an empty data set");
  double asr_sum = 0.0, asr_correct = 0.0, pid_sum = 0.0, pid_correct = 0.0;
  std::size_t asr_n = 0, pid_n = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const ModalBatch batch = collate(data, idx);
    Tape tape(false);
    std::vector<Var> memories;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      memories.push_back(model.encoder().encode(tape, batch.example(b), model.config().modality_weights));
    }
    const auto asr = asr_loss(model.asr_head(), memories, batch.asr_targets);
    const auto pid = pid_loss(model.pid_head(), memories, batch.audio_lengths, batch.speaker_targets,
                              model.config().speaker_count);
    asr_sum += asr.loss.value().item() * static_cast<double>(asr.count);
    asr_correct += asr.accuracy * static_cast<double>(asr.count);
    asr_n += asr.count;
    pid_sum += pid.loss.value().item() * static_cast<double>(pid.count);
    pid_correct += pid.accuracy * static_cast<double>(pid.count);
    pid_n += pid.count;
  }
  TaskLossBreakdown b;
  b.asr_loss = asr_sum / static_cast<double>(asr_n);
  b.pid_loss = pid_sum / static_cast<double>(pid_n);
  b.token_accuracy = asr_correct / static_cast<double>(asr_n);
  b.speaker_accuracy = pid_correct / static_cast<double>(pid_n);
  const auto& tw = model.config().task_weights;
  b.combined = tw.asr * b.asr_loss + tw.pid * b.pid_loss;
  return b;
}

void MetricsTrace::pretrain(const PretrainStep& s) {
  if (!os_) return;
  nlohmann::ordered_json j;
  j["stage"] = "pretrain";
  j["step"] = s.step;
  j["lr"] = s.lr;
  j["loss"] = s.losses.combined;
  j["asr_loss"] = s.losses.asr_loss;
  j["pid_loss"] = s.losses.pid_loss;
  j["token_accuracy"] = s.losses.token_accuracy;
  j["speaker_accuracy"] = s.losses.speaker_accuracy;
  *os_ << j.dump() << '\n';
}

void MetricsTrace::finetune(std::uint64_t step, double lr, double loss) {
  if (!os_) return;
  nlohmann::ordered_json j;
  j["stage"] = "finetune";
  j["step"] = step;
  j["lr"] = lr;
  j["loss"] = loss;
  *os_ << j.dump() << '\n';
}

void MetricsTrace::finetune_eval(std::uint64_t step, const EvalReport& dev) {
  if (!os_) return;
  nlohmann::ordered_json j;
  j["stage"] = "finetune-dev";
  j["step"] = step;
  j["mean_wa"] = dev.mean_wa;
  j["mean_f1"] = dev.mean_f1;
  j["score"] = dev.selection_score();
  *os_ << j.dump() << '\n';
}

PretrainResult pretrain_run(const JointEncoderConfig& cfg, TrainConfig train, const Dataset& data,
                            std::uint64_t seed, MetricsTrace* trace) {
  train.seed = seed;
  PretrainTrainer t(cfg, train, data);
  PretrainResult r;
  for (std::size_t i = 0; i < train.steps; ++i) {
    PretrainStep s = t.step();
    if (trace && (s.step % train.eval_every == 0 || s.step == train.steps)) trace->pretrain(s);
    r.trace.push_back(s);
  }
  r.checkpoint = t.checkpoint();
  return r;
}

// ---------------------------------------------------------------------------
// Fine-tuning

namespace {

std::unique_ptr<EmotionModel> initial_emotion_model(const JointEncoderConfig& cfg, const TrainConfig& train,
                                                    const Checkpoint* init) {
  if (init) return std::make_unique<EmotionModel>(load_pretrained_encoder(*init, cfg, train.seed));
  return std::make_unique<EmotionModel>(cfg, train.seed);
}

}  // namespace

FinetuneTrainer::FinetuneTrainer(const JointEncoderConfig& cfg, const TrainConfig& train, const Dataset& data,
                                 const Checkpoint* init)
    : train_(train),
      data_(&data),
      model_(initial_emotion_model(cfg, train, init)),
      weights_(compute_class_weights(data.label_matrix())),
      sampler_(data.size(), train.batch_size, train.seed ^ kSamplerSalt) {
  train_.validate("finetune");
}

FinetuneTrainer::FinetuneTrainer(const Checkpoint& resume, const TrainConfig& train, const Dataset& data)
    : train_(train),
      data_(&data),
      model_(std::make_unique<EmotionModel>(resume.config, train.seed)),
      weights_(compute_class_weights(data.label_matrix())),
      sampler_(data.size(), train.batch_size, train.seed ^ kSamplerSalt) {
  if (resume.model_kind != "emotion") {
    fail(ErrorKind::incompatible, "cannot resume fine-tuning from a '" + resume.model_kind + "' checkpoint");
  }
  train_.validate("finetune");
  restore_parameters(model_->parameters(), resume.parameters);
  adam_ = import_moments(model_->parameters(), resume.optimizer);
  if (!resume.rng_state.empty()) sampler_.restore(resume.rng_state);
}

FinetuneStep FinetuneTrainer::step() {
  const ModalBatch batch = collate(*data_, sampler_.next());
  auto& params = model_->parameters();
  params.zero_grad();
  Tape tape;
  Var loss = model_->loss(tape, batch, model_->config().finetune_weights, weights_);
  FinetuneStep out;
  out.step = adam_.step + 1;
  out.loss = loss.value().item();
  if (!std::isfinite(out.loss)) {
    fail(ErrorKind::divergence, "non-finite fine-tuning loss at step " + std::to_string(out.step));
  }
  tape.backward(loss);
  out.lr = optimizer_update(params, adam_, train_, model_->config().attention.model_dim);
  return out;
}

Checkpoint FinetuneTrainer::checkpoint() const {
  Checkpoint c;
  c.model_kind = "emotion";
  c.config = model_->config();
  c.parameters = snapshot_parameters(model_->parameters());
  c.optimizer = export_moments(model_->parameters(), adam_);
  c.rng_state = sampler_.state();
  c.metadata["step"] = std::to_string(adam_.step);
  c.metadata["seed"] = std::to_string(train_.seed);
  return c;
}

FinetuneResult finetune_run(const JointEncoderConfig& cfg, TrainConfig train, const Dataset& train_data,
                            const Dataset& dev_data, const Checkpoint* init, std::uint64_t seed,
                            MetricsTrace* trace) {
  train.seed = seed;
  FinetuneTrainer t(cfg, train, train_data, init);
  FinetuneResult r;
  for (std::size_t i = 0; i < train.steps; ++i) {
    FinetuneStep s = t.step();
    r.trace.push_back(s);
    if (trace) trace->finetune(s.step, s.lr, s.loss);
    if (s.step % train.eval_every == 0 || s.step == train.steps) {
      EvalReport dev = evaluate_model(t.model(), dev_data, dev_data, t.model().config().finetune_weights);
      dev.split = "dev";
      dev.seed = seed;
      if (trace) trace->finetune_eval(s.step, dev);
      r.dev_reports.push_back(std::move(dev));
    }
  }
  r.checkpoint = t.checkpoint();
  r.model = std::make_unique<EmotionModel>(std::move(t.model()));
  return r;
}

std::size_t select_best_of_n(std::span<const EvalReport> runs) {
  if (runs.empty()) fail(ErrorKind::validation, "select_best_of_n needs at least one run");
  std::size_t best = 0;
  for (std::size_t i = 1; i < runs.size(); ++i)
    if (runs[i].selection_score() > runs[best].selection_score()) best = i;
  return best;
}

EmotionModel emotion_model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.model_kind != "emotion") {
    fail(ErrorKind::incompatible, "expected an emotion checkpoint, got '" + ckpt.model_kind + "'");
  }
  EmotionModel m(ckpt.config, 0);
  restore_parameters(m.parameters(), ckpt.parameters);
  return m;
}

PretrainModel pretrain_model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.model_kind != "pretrain") {
    fail(ErrorKind::incompatible, "expected a pretraining checkpoint, got '" + ckpt.model_kind + "'");
  }
  PretrainModel m(ckpt.config, 0);
  restore_parameters(m.parameters(), ckpt.parameters);
  return m;
}

}  // namespace xmodal
