#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "xmodal/features.hpp"
#include "xmodal/manifest.hpp"
#include "xmodal/pretrain_tasks.hpp"

namespace xmodal {

/// Planted-signal corpus. Each segment has six latent emotion factors z.
/// Every modality sees its own noisy copy c_m = s_m·z + σ·ε (one per
/// segment), written into dedicated directions of its feature space:
/// audio frames get it added to character templates and a speaker offset,
/// video frames to a speaker face vector, and the text gets emotion words
/// (one synonym of class k whenever c_text,k > 0) whose embedding rows
/// carry a fixed class direction. Downstream labels are z > 0.
struct SyntheticSpec {
  std::size_t speakers = 8;              // pretraining speakers
  std::size_t downstream_speakers = 32;
  std::size_t vocab_size = 16;           // including the three specials
  std::size_t lexicon_size = 40;
  std::size_t synonyms = 2;              // emotion words per class
  std::size_t min_word_length = 2;
  std::size_t max_word_length = 4;
  std::size_t min_fillers = 1;
  std::size_t max_fillers = 2;
  std::size_t min_frames_per_char = 2;
  std::size_t max_frames_per_char = 3;
  std::size_t min_video_frames = 3;
  std::size_t max_video_frames = 6;
  std::size_t lfbe_dim = 40;
  std::size_t video_dim = 16;
  std::size_t text_dim = 300;
  double audio_strength = 0.5;
  double video_strength = 1.0;
  double text_strength = 2.0;
  double noise = 0.5;
  /// Scales both the per-speaker offsets and, during pretraining, each
  /// speaker's habitual emotion style. Zero leaves nothing speaker-specific.
  double speaker_strength = 1.0;
  std::array<double, 6> prevalence = {0.45, 0.30, 0.25, 0.20, 0.20, 0.15};
  std::size_t pretrain_size = 2000;
  std::size_t train_size = 600;
  std::size_t dev_size = 300;
  std::size_t test_size = 600;
  std::uint64_t embedding_seed = 17;

  /// Throws a spec error describing the first unsatisfiable setting.
  void validate() const;
};

struct SyntheticCorpus {
  CharVocabulary vocab;
  EmbeddingTable embeddings;
  Manifest pretrain;
  Manifest downstream;
};

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed);

/// vocab.txt, embeddings.txt, pretrain.jsonl, downstream.jsonl (+ tensors/).
void write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir, bool sidecar = true);
SyntheticCorpus load_corpus(const std::filesystem::path& dir);

/// Φ⁻¹, by bisection on erfc; accurate to ~1e-13 on (0, 1).
double inverse_normal_cdf(double p);

}  // namespace xmodal
