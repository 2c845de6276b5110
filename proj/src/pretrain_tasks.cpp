#include "xmodal/pretrain_tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "xmodal/error.hpp"

namespace xmodal {

namespace {

constexpr const char* kSpecialNames[] = {"<pad>", "<bos>", "<eos>"};

std::size_t argmax_row(const Tensor& m, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < m.cols(); ++j)
    if (m.at(row, j) > m.at(row, best)) best = j;
  return best;
}

}  // namespace

std::vector<std::string> utf8_chars(const std::string& text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size();) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    if (i + len > text.size()) fail(ErrorKind::validation, "truncated UTF-8 sequence");
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

// ---------------------------------------------------------------------------
// CharVocabulary

CharVocabulary::CharVocabulary(std::vector<std::string> chars) {
  for (const char* s : kSpecialNames) symbols_.emplace_back(s);
  for (auto& c : chars) {
    if (utf8_chars(c).size() != 1) {
      fail(ErrorKind::validation, "vocabulary entry '" + c + "' is not a single character");
    }
    if (index_.contains(c)) fail(ErrorKind::validation, "duplicate vocabulary character '" + c + "'");
    index_.emplace(c, static_cast<int>(symbols_.size()));
    symbols_.push_back(std::move(c));
  }
}

const std::string& CharVocabulary::symbol(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    fail(ErrorKind::index, "character id " + std::to_string(id) + " outside vocabulary");
  }
  return symbols_[static_cast<std::size_t>(id)];
}

int CharVocabulary::index(const std::string& ch) const {
  auto it = index_.find(ch);
  if (it == index_.end()) fail(ErrorKind::index, "character '" + ch + "' not in vocabulary");
  return it->second;
}

std::vector<int> CharVocabulary::encode_chars(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& ch : utf8_chars(text)) ids.push_back(index(ch));
  return ids;
}

std::vector<int> CharVocabulary::encode(const std::string& text) const {
  std::vector<int> ids{bos};
  for (int id : encode_chars(text)) ids.push_back(id);
  ids.push_back(eos);
  return ids;
}

std::string CharVocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < specials) continue;
    out += symbol(id);
  }
  return out;
}

void CharVocabulary::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write vocabulary " + path.string());
  for (const auto& s : symbols_) os << s << '\n';
}

CharVocabulary CharVocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::load, "cannot read vocabulary " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.size() < specials) fail(ErrorKind::load, "vocabulary file lacks the special symbols");
  for (int i = 0; i < specials; ++i) {
    if (lines[static_cast<std::size_t>(i)] != kSpecialNames[i]) {
      fail(ErrorKind::load, std::string("vocabulary line ") + std::to_string(i + 1) +
                                " must be " + kSpecialNames[i]);
    }
  }
  return CharVocabulary(std::vector<std::string>(lines.begin() + specials, lines.end()));
}

// ---------------------------------------------------------------------------
// Heads

AsrHead::AsrHead(const JointEncoderConfig& cfg, ParameterSet& params, Rng& rng,
                 const std::string& prefix)
    : model_dim_(cfg.attention.model_dim), vocab_size_(cfg.vocab_size) {
  if (vocab_size_ <= CharVocabulary::specials) {
    fail(ErrorKind::config, "model.vocab_size must exceed the 3 special symbols");
  }
  const double d = static_cast<double>(model_dim_);
  embedding_ = &params.add(prefix + ".embedding",
                           normal_scaled({vocab_size_, model_dim_}, 1.0 / std::sqrt(d), rng));
  decoder_ = DecoderStack(params, prefix + ".decoder", cfg.attention, cfg.attention.decoder_layers, rng);
  output_ = Linear(params, prefix + ".output", model_dim_, vocab_size_, true, rng);
}

Var AsrHead::logits(Var memory, std::span<const int> inputs) const {
  Tape& t = memory.tape();
  Var emb = scale(gather_rows(t.parameter(*embedding_), inputs),
                  std::sqrt(static_cast<double>(model_dim_)));
  Var y = add(emb, t.constant(positional_encoding(inputs.size(), model_dim_)));
  return output_(decoder_(y, memory));
}

PidHead::PidHead(const JointEncoderConfig& cfg, ParameterSet& params, Rng& rng,
                 const std::string& prefix) {
  if (cfg.speaker_count == 0) fail(ErrorKind::config, "model.speaker_count must be positive");
  classifier_ = Linear(params, prefix + ".classifier", cfg.attention.model_dim, cfg.speaker_count,
                       true, rng);
}

Var PidHead::logits(Var memory, std::size_t valid_length) const {
  Var pooled = mean_pool(memory, valid_length);
  return classifier_(reshape(pooled, {1, pooled.value().size()}));
}

// ---------------------------------------------------------------------------
// Losses

std::size_t framed_length(std::span<const int> target) {
  if (target.empty() || std::all_of(target.begin(), target.end(),
                                    [](int id) { return id == CharVocabulary::pad; })) {
    fail(ErrorKind::empty_sequence, "empty ASR target");
  }
  if (target.front() != CharVocabulary::bos) {
    fail(ErrorKind::validation, "ASR target must start with bos");
  }
  auto eos = std::find(target.begin(), target.end(), CharVocabulary::eos);
  if (eos == target.end()) fail(ErrorKind::validation, "ASR target must end with eos");
  const auto len = static_cast<std::size_t>(eos - target.begin()) + 1;
  if (len < 2) fail(ErrorKind::empty_sequence, "empty ASR target");
  return len;
}

LossAndAccuracy asr_loss(const AsrHead& head, std::span<const Var> memories,
                         const std::vector<std::vector<int>>& targets) {
  if (memories.size() != targets.size() || memories.empty()) {
    fail(ErrorKind::validation, "asr_loss needs one target per encoded example");
  }
  std::vector<Var> logits;
  std::vector<int> outputs;
  for (std::size_t b = 0; b < memories.size(); ++b) {
    const auto& t = targets[b];
    const std::size_t len = framed_length(t);
    std::span<const int> inputs(t.data(), len - 1);
    logits.push_back(head.logits(memories[b], inputs));
    outputs.insert(outputs.end(), t.begin() + 1, t.begin() + static_cast<std::ptrdiff_t>(len));
  }
  Var all = concat_rows(logits);
  LossAndAccuracy r;
  r.loss = cross_entropy(all, outputs, CharVocabulary::pad);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (outputs[i] == CharVocabulary::pad) continue;
    ++r.count;
    if (static_cast<int>(argmax_row(all.value(), i)) == outputs[i]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
  return r;
}

LossAndAccuracy pid_loss(const PidHead& head, std::span<const Var> memories,
                         std::span<const std::size_t> valid_lengths, std::span<const int> speakers,
                         std::size_t speaker_count) {
  if (memories.size() != speakers.size() || memories.size() != valid_lengths.size() ||
      memories.empty()) {
    fail(ErrorKind::validation, "pid_loss needs one speaker per encoded example");
  }
  for (int s : speakers) {
    if (s < 0 || static_cast<std::size_t>(s) >= speaker_count) {
      fail(ErrorKind::index, "speaker id " + std::to_string(s) + " outside [0, " +
                                 std::to_string(speaker_count) + ")");
    }
  }
  std::vector<Var> logits;
  for (std::size_t b = 0; b < memories.size(); ++b) {
    logits.push_back(head.logits(memories[b], valid_lengths[b]));
  }
  Var all = concat_rows(logits);
  LossAndAccuracy r;
  r.loss = cross_entropy(all, speakers);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < speakers.size(); ++i) {
    if (static_cast<int>(argmax_row(all.value(), i)) == speakers[i]) ++correct;
  }
  r.count = speakers.size();
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
  return r;
}

MultitaskLoss multitask_loss(const LossAndAccuracy& asr, const LossAndAccuracy& pid,
                             const TaskWeights& weights) {
  weights.validate();
  MultitaskLoss out;
  auto& b = out.breakdown;
  b.asr_loss = asr.loss.value().item();
  b.pid_loss = pid.loss.value().item();
  b.token_accuracy = asr.accuracy;
  b.speaker_accuracy = pid.accuracy;
  if (weights.asr > 0.0) out.combined = scale(asr.loss, weights.asr);
  if (weights.pid > 0.0) {
    Var p = scale(pid.loss, weights.pid);
    out.combined = out.combined ? add(out.combined, p) : p;
  }
  b.combined = out.combined.value().item();
  return out;
}

std::string greedy_decode(const AsrHead& head, const Tensor& memory, const CharVocabulary& vocab,
                          std::size_t max_len) {
  if (max_len == 0) fail(ErrorKind::validation, "greedy_decode needs max_len >= 1");
  std::vector<int> seq{CharVocabulary::bos};
  for (std::size_t step = 0; step < max_len; ++step) {
    Tape tape(false);
    const Tensor& logits = head.logits(tape.constant(memory), seq).value();
    const int next = static_cast<int>(argmax_row(logits, logits.rows() - 1));
    if (next == CharVocabulary::eos) break;
    seq.push_back(next);
  }
  return vocab.decode(seq);
}

// ---------------------------------------------------------------------------
// PretrainModel

PretrainModel::PretrainModel(const JointEncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  encoder_ = JointEncoder(cfg_, params_, rng, "encoder");
  asr_ = AsrHead(cfg_, params_, rng, "asr");
  pid_ = PidHead(cfg_, params_, rng, "pid");
}

MultitaskLoss PretrainModel::forward(Tape& tape, const ModalBatch& batch) const {
  return forward(tape, batch, cfg_.modality_weights, cfg_.task_weights);
}

MultitaskLoss PretrainModel::forward(Tape& tape, const ModalBatch& batch, const ModalityWeights& mw,
                                     const TaskWeights& tw) const {
  batch.validate(cfg_);
  std::vector<Var> memories;
  std::vector<std::size_t> lengths;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    memories.push_back(encoder_.encode(tape, batch.example(b), mw));
    lengths.push_back(batch.audio_lengths[b]);
  }
  const auto asr = asr_loss(asr_, memories, batch.asr_targets);
  const auto pid = pid_loss(pid_, memories, lengths, batch.speaker_targets, cfg_.speaker_count);
  return multitask_loss(asr, pid, tw);
}

}  // namespace xmodal
