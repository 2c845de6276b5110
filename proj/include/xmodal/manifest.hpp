#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "xmodal/features.hpp"
#include "xmodal/joint_encoder.hpp"
#include "xmodal/pretrain_tasks.hpp"

namespace xmodal {

enum class Split { train, dev, test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

/// One segment. Audio is raw T×40 LFBE frames (stacking happens at load).
/// An empty video tensor or token list means that stream is missing.
struct SegmentRecord {
  std::string id;
  Split split = Split::train;
  int speaker = -1;
  std::string transcript;
  std::vector<int> tokens;
  Tensor audio;
  Tensor video;
  std::optional<std::array<double, 6>> likert;
  std::optional<std::array<int, 6>> labels;
  bool keep = true;

  friend bool operator==(const SegmentRecord&, const SegmentRecord&) = default;
};

struct Manifest {
  std::vector<SegmentRecord> records;

  std::vector<const SegmentRecord*> select(Split split) const;
};

struct ManifestWriteOptions {
  /// Arrays go to <dir>/<sidecar_dir>/<id>.{audio,video}.xmt instead of inline.
  bool sidecar = false;
  std::string sidecar_dir = "tensors";
};

/// One JSON object per line. Sidecar paths resolve against the manifest's
/// directory.
void write_manifest(const Manifest& m, const std::filesystem::path& path,
                    const ManifestWriteOptions& opts = {});
Manifest read_manifest(const std::filesystem::path& path);

/// Binary emotion labels of a record; Likert scores take precedence.
std::optional<Tensor> record_labels(const SegmentRecord& r);

/// A model-ready segment: stacked audio, embedded text, framed transcript.
struct Example {
  std::string id;
  Tensor audio;  // n_a × audio_dim
  Tensor video;  // n_v × video_dim, empty if missing
  Tensor text;   // n_t × text_dim, empty if missing
  std::vector<int> transcript;  // bos … eos, empty if no transcript
  int speaker = -1;
  std::optional<Tensor> labels;  // {6}
};

struct Dataset {
  std::vector<Example> examples;

  std::size_t size() const noexcept { return examples.size(); }
  /// n × 6 label matrix; every example must carry labels.
  Tensor label_matrix() const;
  /// 1 + the largest speaker id.
  std::size_t speaker_count() const;
};

struct FeatureContext {
  const EmbeddingTable* embeddings = nullptr;
  const CharVocabulary* vocab = nullptr;
  std::size_t stack_size = 5;
};

/// Records with keep == false are dropped. Errors carry the record id.
Dataset prepare_dataset(const Manifest& m, std::optional<Split> split, const FeatureContext& ctx,
                        const JointEncoderConfig& cfg);

/// Pads to the longest example per modality.
ModalBatch collate(const Dataset& data, std::span<const std::size_t> indices);

/// Endless epoch-by-epoch index stream; the order depends only on the seed.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed, bool shuffle = true);

  /// Next batch of indices; the last batch of an epoch may be short.
  std::vector<std::size_t> next();
  std::size_t epoch() const noexcept { return epoch_; }

  std::string state() const;
  void restore(const std::string& state);

 private:
  void reshuffle();

  std::size_t n_;
  std::size_t batch_;
  bool shuffle_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

/// One pass over a split in sampler order.
std::vector<ModalBatch> load_manifest(const std::filesystem::path& path, Split split,
                                      const FeatureContext& ctx, const JointEncoderConfig& cfg,
                                      std::size_t batch_size, std::uint64_t seed, bool shuffle = true);

}  // namespace xmodal
