#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "xmodal/joint_encoder.hpp"

namespace xmodal {

/// Character inventory with three leading specials. Characters are single
/// UTF-8 code points.
class CharVocabulary {
 public:
  static constexpr int pad = 0;
  static constexpr int bos = 1;
  static constexpr int eos = 2;
  static constexpr int specials = 3;

  CharVocabulary() = default;
  explicit CharVocabulary(std::vector<std::string> chars);

  std::size_t size() const noexcept { return symbols_.size(); }
  const std::string& symbol(int id) const;
  int index(const std::string& ch) const;
  bool contains(const std::string& ch) const { return index_.contains(ch); }

  /// Character ids without framing.
  std::vector<int> encode_chars(const std::string& text) const;
  /// bos, characters, eos.
  std::vector<int> encode(const std::string& text) const;
  /// Concatenates character symbols, skipping specials.
  std::string decode(std::span<const int> ids) const;

  /// One symbol per line, specials first.
  void save(const std::filesystem::path& path) const;
  static CharVocabulary load(const std::filesystem::path& path);

  friend bool operator==(const CharVocabulary& a, const CharVocabulary& b) {
    return a.symbols_ == b.symbols_;
  }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

/// Splits UTF-8 text into code points.
std::vector<std::string> utf8_chars(const std::string& text);

/// Transformer decoder over character embeddings with an output projection.
class AsrHead {
 public:
  AsrHead() = default;
  AsrHead(const JointEncoderConfig& cfg, ParameterSet& params, Rng& rng,
          const std::string& prefix = "asr");

  /// Next-character logits for every input position, L × V.
  Var logits(Var memory, std::span<const int> inputs) const;
  std::size_t vocab_size() const { return vocab_size_; }

 private:
  Parameter* embedding_ = nullptr;
  DecoderStack decoder_;
  Linear output_;
  std::size_t model_dim_ = 0;
  std::size_t vocab_size_ = 0;
};

/// Mean-pool over the sequence, then an affine map to speaker logits.
class PidHead {
 public:
  PidHead() = default;
  PidHead(const JointEncoderConfig& cfg, ParameterSet& params, Rng& rng,
          const std::string& prefix = "pid");

  /// 1 × S logits from the first `valid_length` rows of `memory`.
  Var logits(Var memory, std::size_t valid_length) const;
  const Linear& classifier() const { return classifier_; }

 private:
  Linear classifier_;
};

struct LossAndAccuracy {
  Var loss;
  double accuracy = 0.0;
  std::size_t count = 0;
};

/// Length of a bos…eos target with right padding removed.
std::size_t framed_length(std::span<const int> target);

/// Teacher-forced character cross-entropy over all scored positions of the
/// batch; padding is ignored.
LossAndAccuracy asr_loss(const AsrHead& head, std::span<const Var> memories,
                         const std::vector<std::vector<int>>& targets);

LossAndAccuracy pid_loss(const PidHead& head, std::span<const Var> memories,
                         std::span<const std::size_t> valid_lengths, std::span<const int> speakers,
                         std::size_t speaker_count);

struct TaskLossBreakdown {
  double asr_loss = 0.0;
  double pid_loss = 0.0;
  double combined = 0.0;
  double token_accuracy = 0.0;
  double speaker_accuracy = 0.0;
};

struct MultitaskLoss {
  Var combined;
  TaskLossBreakdown breakdown;
};

/// combined = w_asr·asr + w_pid·pid. A zero-weight task is left out of the
/// graph entirely.
MultitaskLoss multitask_loss(const LossAndAccuracy& asr, const LossAndAccuracy& pid,
                             const TaskWeights& weights);

/// Argmax decoding from bos until eos or `max_len` characters.
std::string greedy_decode(const AsrHead& head, const Tensor& memory, const CharVocabulary& vocab,
                          std::size_t max_len);

/// Shared joint encoder with the ASR and speaker-identification heads.
class PretrainModel {
 public:
  PretrainModel(const JointEncoderConfig& cfg, std::uint64_t seed);

  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }
  const JointEncoderConfig& config() const noexcept { return cfg_; }
  const JointEncoder& encoder() const noexcept { return encoder_; }
  const AsrHead& asr_head() const noexcept { return asr_; }
  const PidHead& pid_head() const noexcept { return pid_; }

  MultitaskLoss forward(Tape& tape, const ModalBatch& batch) const;
  MultitaskLoss forward(Tape& tape, const ModalBatch& batch, const ModalityWeights& mw,
                        const TaskWeights& tw) const;

 private:
  JointEncoderConfig cfg_;
  ParameterSet params_;
  JointEncoder encoder_;
  AsrHead asr_;
  PidHead pid_;
};

}  // namespace xmodal
