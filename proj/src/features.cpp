#include "xmodal/features.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "xmodal/error.hpp"

namespace xmodal {

static_assert(std::endian::native == std::endian::little, "sidecar IO assumes a little-endian host");

Tensor stack_frames(const Tensor& frames, std::size_t k) {
  if (frames.empty()) fail(ErrorKind::empty_sequence, "stack_frames on zero frames");
  if (frames.rank() != 2) fail(ErrorKind::dimension, "stack_frames expects T×F frames");
  if (k == 0) fail(ErrorKind::validation, "stack size must be at least 1");
  const std::size_t t = frames.rows(), f = frames.cols();
  const std::size_t groups = (t + k - 1) / k;
  Tensor out({groups, k * f});
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t src = std::min(g * k + j, t - 1);
      std::memcpy(out.data() + g * k * f + j * f, frames.data() + src * f, f * sizeof(double));
    }
  }
  return out;
}

Tensor unstack_frames(const Tensor& stacked, std::size_t frame_count, std::size_t k) {
  if (stacked.rank() != 2 || k == 0 || stacked.cols() % k != 0) {
    fail(ErrorKind::dimension, "unstack_frames shape " + shape_string(stacked.shape()) +
                                   " incompatible with stack size " + std::to_string(k));
  }
  const std::size_t f = stacked.cols() / k;
  if (frame_count == 0 || frame_count > stacked.rows() * k) {
    fail(ErrorKind::index, "unstack_frames frame count out of range");
  }
  std::vector<double> v(stacked.data(), stacked.data() + frame_count * f);
  return Tensor({frame_count, f}, std::move(v));
}

// ---------------------------------------------------------------------------

EmbeddingTable::EmbeddingTable(std::vector<std::string> words, Tensor table)
    : words_(std::move(words)), table_(std::move(table)) {
  if (table_.rank() != 2 || table_.rows() != words_.size()) {
    fail(ErrorKind::dimension, "embedding table " + shape_string(table_.shape()) + " for " +
                                   std::to_string(words_.size()) + " words");
  }
}

void EmbeddingTable::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write embedding table " + path.string());
  os << table_.rows() << ' ' << table_.cols() << '\n';
  for (std::size_t i = 0; i < words_.size(); ++i) {
    os << words_[i];
    for (std::size_t j = 0; j < table_.cols(); ++j) os << ' ' << format_double(table_.at(i, j));
    os << '\n';
  }
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::load, "cannot read embedding table " + path.string());
  std::size_t w = 0, d = 0;
  std::string header;
  std::getline(is, header);
  std::istringstream hs(header);
  if (!(hs >> w >> d) || w == 0 || d == 0) {
    fail(ErrorKind::load, path.string() + ": header must be 'W D'");
  }
  std::vector<std::string> words;
  std::vector<double> values;
  values.reserve(w * d);
  std::string line;
  for (std::size_t i = 0; i < w; ++i) {
    if (!std::getline(is, line)) {
      fail(ErrorKind::load, path.string() + ": expected " + std::to_string(w) + " rows");
    }
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    std::size_t got = 0;
    for (std::string tok; ls >> tok; ++got) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        fail(ErrorKind::load, path.string() + ": bad number '" + tok + "' in row " + std::to_string(i + 1));
      }
      values.push_back(v);
    }
    if (got != d) {
      fail(ErrorKind::load, path.string() + ": row " + std::to_string(i + 1) + " has " +
                                std::to_string(got) + " values, expected " + std::to_string(d));
    }
    words.push_back(std::move(word));
  }
  return EmbeddingTable(std::move(words), Tensor({w, d}, std::move(values)));
}

Tensor embed_tokens(std::span<const int> ids, const Tensor& table) {
  if (table.rank() != 2) fail(ErrorKind::dimension, "embedding table must be a matrix");
  if (ids.empty()) return {};
  const std::size_t d = table.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows()) continue;
    std::memcpy(out.data() + i * d, table.data() + static_cast<std::size_t>(ids[i]) * d,
                d * sizeof(double));
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_tensor_file(const Tensor& t, const std::filesystem::path& path) {
  if (t.empty()) fail(ErrorKind::validation, "cannot write an empty tensor to " + path.string());
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write tensor file " + path.string());
  os.write("XMT1", 4);
  const auto rank = static_cast<std::uint32_t>(t.rank());
  os.write(reinterpret_cast<const char*>(&rank), 4);
  for (auto d : t.shape()) {
    const auto dim = static_cast<std::uint32_t>(d);
    os.write(reinterpret_cast<const char*>(&dim), 4);
  }
  std::vector<float> payload(t.values().begin(), t.values().end());
  os.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(payload.size() * sizeof(float)));
}

Tensor read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::load, "cannot read tensor file " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "XMT1", 4) != 0) {
    fail(ErrorKind::load, path.string() + ": missing XMT1 magic");
  }
  std::uint32_t rank = 0;
  is.read(reinterpret_cast<char*>(&rank), 4);
  if (!is || rank == 0 || rank > 8) fail(ErrorKind::load, path.string() + ": bad rank");
  Shape shape(rank);
  for (auto& d : shape) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is || v == 0) fail(ErrorKind::load, path.string() + ": bad dimension");
    d = v;
  }
  std::vector<float> payload(shape_size(shape));
  is.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!is) fail(ErrorKind::load, path.string() + ": truncated payload");
  return Tensor(std::move(shape), std::vector<double>(payload.begin(), payload.end()));
}

Tensor round_to_float(Tensor t) {
  for (auto& v : t.values()) v = static_cast<double>(static_cast<float>(v));
  return t;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace xmodal
