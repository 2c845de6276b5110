#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal {

/// Concatenates non-overlapping groups of k frames: T×F → ceil(T/k)×(k·F).
/// A trailing partial group is filled by repeating the last frame.
Tensor stack_frames(const Tensor& frames, std::size_t k);

/// Inverse of stack_frames, dropping the padding frames.
Tensor unstack_frames(const Tensor& stacked, std::size_t frame_count, std::size_t k);

/// Word embedding table (GloVe-style text format).
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::vector<std::string> words, Tensor table);

  std::size_t size() const noexcept { return words_.size(); }
  std::size_t dim() const { return table_.cols(); }
  const std::vector<std::string>& words() const noexcept { return words_; }
  const Tensor& table() const noexcept { return table_; }

  /// First line "W D", then one token followed by D numbers per line.
  void save(const std::filesystem::path& path) const;
  static EmbeddingTable load(const std::filesystem::path& path);

 private:
  std::vector<std::string> words_;
  Tensor table_;
};

/// Gathers rows of `table`; ids outside [0, W) map to a zero row.
Tensor embed_tokens(std::span<const int> ids, const Tensor& table);

/// Sidecar tensor file: "XMT1", u32 rank, u32 dims, little-endian f32 payload.
void write_tensor_file(const Tensor& t, const std::filesystem::path& path);
Tensor read_tensor_file(const std::filesystem::path& path);

/// Rounds every value to the nearest f32 so sidecar storage is lossless.
Tensor round_to_float(Tensor t);

/// Shortest text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace xmodal
