#include "xmodal/manifest.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "xmodal/emotion.hpp"
#include "xmodal/error.hpp"

namespace xmodal {

using ojson = nlohmann::ordered_json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  fail(ErrorKind::validation, "unknown split '" + s + "'");
}

std::vector<const SegmentRecord*> Manifest::select(Split split) const {
  std::vector<const SegmentRecord*> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(&r);
  return out;
}

namespace {

ojson matrix_json(const Tensor& t) {
  ojson rows = ojson::array();
  for (std::size_t i = 0; i < t.rows(); ++i) {
    ojson row = ojson::array();
    for (std::size_t j = 0; j < t.cols(); ++j) row.push_back(t.at(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Tensor matrix_from_json(const ojson& j, const std::string& id, const char* field) {
  if (!j.is_array() || j.empty()) {
    fail(ErrorKind::load, "record '" + id + "': " + field + " must be a non-empty 2-D array");
  }
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) fail(ErrorKind::load, "record '" + id + "': " + field + " rows must be non-empty arrays");
  std::vector<double> v;
  v.reserve(rows * cols);
  for (const auto& row : j) {
    if (!row.is_array() || row.size() != cols) {
      fail(ErrorKind::load, "record '" + id + "': " + field + " is ragged");
    }
    for (const auto& x : row) {
      if (!x.is_number()) fail(ErrorKind::load, "record '" + id + "': " + field + " has a non-number");
      v.push_back(x.get<double>());
    }
  }
  return Tensor({rows, cols}, std::move(v));
}

Tensor array_field(const ojson& rec, const char* field, const std::string& id,
                   const std::filesystem::path& base) {
  auto it = rec.find(field);
  if (it == rec.end() || it->is_null()) return {};
  if (it->is_string()) {
    Tensor t;
    try {
      t = read_tensor_file(base / it->get<std::string>());
    } catch (const Error& e) {
      fail(ErrorKind::load, "record '" + id + "': " + e.what());
    }
    if (t.rank() != 2) fail(ErrorKind::load, "record '" + id + "': " + field + " sidecar is not 2-D");
    return t;
  }
  return matrix_from_json(*it, id, field);
}

template <typename T>
std::array<T, 6> six(const ojson& j, const std::string& id, const char* field) {
  if (!j.is_array() || j.size() != 6) {
    fail(ErrorKind::load, "record '" + id + "': " + field + " must have 6 entries");
  }
  std::array<T, 6> out{};
  for (std::size_t i = 0; i < 6; ++i) {
    if (!j[i].is_number()) fail(ErrorKind::load, "record '" + id + "': " + field + " has a non-number");
    out[i] = j[i].get<T>();
  }
  return out;
}

}  // namespace

void write_manifest(const Manifest& m, const std::filesystem::path& path,
                    const ManifestWriteOptions& opts) {
  const auto base = path.parent_path();
  if (opts.sidecar) std::filesystem::create_directories(base / opts.sidecar_dir);
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write manifest " + path.string());
  for (const auto& r : m.records) {
    ojson j;
    j["id"] = r.id;
    j["split"] = to_string(r.split);
    j["speaker"] = r.speaker;
    j["transcript"] = r.transcript;
    j["tokens"] = r.tokens;
    auto put = [&](const char* field, const Tensor& t) {
      if (t.empty()) return;
      if (opts.sidecar) {
        const std::string rel = opts.sidecar_dir + "/" + r.id + "." + field + ".xmt";
        write_tensor_file(t, base / rel);
        j[field] = rel;
      } else {
        j[field] = matrix_json(t);
      }
    };
    put("audio", r.audio);
    put("video", r.video);
    if (r.likert) j["likert"] = *r.likert;
    if (r.labels) j["labels"] = *r.labels;
    if (!r.keep) j["keep"] = false;
    os << j.dump() << '\n';
  }
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::load, "cannot read manifest " + path.string());
  const auto base = path.parent_path();
  Manifest m;
  std::set<std::string> seen;
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::load, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string()) {
      fail(ErrorKind::load, path.string() + ":" + std::to_string(lineno) + ": record without a string id");
    }
    SegmentRecord r;
    r.id = j["id"].get<std::string>();
    if (!seen.insert(r.id).second) fail(ErrorKind::load, "duplicate record id '" + r.id + "'");
    try {
      r.split = parse_split(j.value("split", std::string("train")));
      r.speaker = j.value("speaker", -1);
      r.transcript = j.value("transcript", std::string());
      if (j.contains("tokens")) r.tokens = j["tokens"].get<std::vector<int>>();
      r.keep = j.value("keep", true);
    } catch (const std::exception& e) {
      fail(ErrorKind::load, "record '" + r.id + "': " + e.what());
    }
    r.audio = array_field(j, "audio", r.id, base);
    if (r.audio.empty()) fail(ErrorKind::load, "record '" + r.id + "': audio is required");
    r.video = array_field(j, "video", r.id, base);
    if (j.contains("likert")) r.likert = six<double>(j["likert"], r.id, "likert");
    if (j.contains("labels")) r.labels = six<int>(j["labels"], r.id, "labels");
    m.records.push_back(std::move(r));
  }
  return m;
}

std::optional<Tensor> record_labels(const SegmentRecord& r) {
  if (r.likert) {
    return binarize_likert(Tensor({6}, std::vector<double>(r.likert->begin(), r.likert->end())));
  }
  if (r.labels) {
    Tensor t({6});
    for (std::size_t i = 0; i < 6; ++i) {
      const int v = (*r.labels)[i];
      if (v != 0 && v != 1) fail(ErrorKind::validation, "record '" + r.id + "': labels must be 0 or 1");
      t[i] = v;
    }
    return t;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

Tensor Dataset::label_matrix() const {
  Tensor out({examples.size(), kEmotionCount});
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!examples[i].labels) fail(ErrorKind::validation, "example '" + examples[i].id + "' has no labels");
    for (std::size_t c = 0; c < kEmotionCount; ++c) out.at(i, c) = (*examples[i].labels)[c];
  }
  return out;
}

std::size_t Dataset::speaker_count() const {
  int top = -1;
  for (const auto& e : examples) top = std::max(top, e.speaker);
  return static_cast<std::size_t>(top + 1);
}

Dataset prepare_dataset(const Manifest& m, std::optional<Split> split, const FeatureContext& ctx,
                        const JointEncoderConfig& cfg) {
  if (!ctx.embeddings || !ctx.vocab) fail(ErrorKind::validation, "feature context is incomplete");
  if (ctx.embeddings->dim() != cfg.text_dim) {
    fail(ErrorKind::config, "embedding table dim " + std::to_string(ctx.embeddings->dim()) +
                                " does not match model.text_dim " + std::to_string(cfg.text_dim));
  }
  Dataset d;
  for (const auto& r : m.records) {
    if (split && r.split != *split) continue;
    if (!r.keep) continue;
    try {
      Example ex;
      ex.id = r.id;
      if (r.audio.cols() != cfg.lfbe_dim) {
        fail(ErrorKind::load, "audio has " + std::to_string(r.audio.cols()) + " features, expected " +
                                  std::to_string(cfg.lfbe_dim));
      }
      ex.audio = stack_frames(r.audio, ctx.stack_size);
      if (!r.video.empty()) {
        if (r.video.cols() != cfg.video_dim) {
          fail(ErrorKind::load, "video has " + std::to_string(r.video.cols()) +
                                    " features, expected " + std::to_string(cfg.video_dim));
        }
        ex.video = r.video;
      }
      ex.text = embed_tokens(r.tokens, ctx.embeddings->table());
      if (!r.transcript.empty()) ex.transcript = ctx.vocab->encode(r.transcript);
      ex.speaker = r.speaker;
      ex.labels = record_labels(r);
      d.examples.push_back(std::move(ex));
    } catch (const Error& e) {
      fail(ErrorKind::load, "record '" + r.id + "': " + e.what());
    }
  }
  return d;
}

ModalBatch collate(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) fail(ErrorKind::validation, "cannot collate an empty batch");
  const std::size_t b = indices.size();
  ModalBatch batch;
  auto pad = [&](auto member, std::vector<std::size_t>& lengths) {
    std::size_t longest = 0, dim = 0;
    for (auto i : indices) {
      const Tensor& t = data.examples.at(i).*member;
      lengths.push_back(t.empty() ? 0 : t.rows());
      if (!t.empty()) {
        longest = std::max(longest, t.rows());
        dim = t.cols();
      }
    }
    if (longest == 0) return Tensor();
    Tensor out({b, longest, dim});
    for (std::size_t k = 0; k < b; ++k) {
      const Tensor& t = data.examples[indices[k]].*member;
      if (t.empty()) continue;
      if (t.cols() != dim) fail(ErrorKind::dimension, "feature dims differ within a batch");
      std::memcpy(out.data() + k * longest * dim, t.data(), t.size() * sizeof(double));
    }
    return out;
  };
  batch.audio = pad(&Example::audio, batch.audio_lengths);
  batch.video = pad(&Example::video, batch.video_lengths);
  batch.text = pad(&Example::text, batch.text_lengths);
  bool all_labels = true;
  for (auto i : indices) {
    const auto& ex = data.examples.at(i);
    batch.ids.push_back(ex.id);
    batch.asr_targets.push_back(ex.transcript);
    batch.speaker_targets.push_back(ex.speaker);
    all_labels = all_labels && ex.labels.has_value();
  }
  if (all_labels) {
    Tensor y({b, kEmotionCount});
    for (std::size_t k = 0; k < b; ++k)
      for (std::size_t c = 0; c < kEmotionCount; ++c) y.at(k, c) = (*data.examples[indices[k]].labels)[c];
    batch.emotion_targets = std::move(y);
  }
  return batch;
}

// ---------------------------------------------------------------------------

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed, bool shuffle)
    : n_(dataset_size), batch_(batch_size), shuffle_(shuffle), rng_(seed) {
  if (n_ == 0) fail(ErrorKind::validation, "cannot sample from an empty dataset");
  if (batch_ == 0) fail(ErrorKind::validation, "batch size must be positive");
  reshuffle();
}

void BatchSampler::reshuffle() {
  order_.resize(n_);
  for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
  // Fisher-Yates with explicit draws; std::shuffle's draw pattern is
  // implementation-defined.
  if (shuffle_) {
    for (std::size_t i = n_ - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(rng_() % (i + 1));
      std::swap(order_[i], order_[j]);
    }
  }
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
  if (cursor_ >= n_) {
    reshuffle();
    ++epoch_;
  }
  const std::size_t end = std::min(n_, cursor_ + batch_);
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return out;
}

std::string BatchSampler::state() const {
  std::ostringstream os;
  os << n_ << ' ' << batch_ << ' ' << shuffle_ << ' ' << cursor_ << ' ' << epoch_ << ' ';
  for (auto i : order_) os << i << ' ';
  os << rng_;
  return os.str();
}

void BatchSampler::restore(const std::string& state) {
  std::istringstream is(state);
  std::size_t n = 0, batch = 0;
  bool shuffle = false;
  is >> n >> batch >> shuffle;
  if (!is || n != n_ || batch != batch_ || shuffle != shuffle_) {
    fail(ErrorKind::load, "sampler state does not match this dataset or batch size");
  }
  is >> cursor_ >> epoch_;
  order_.assign(n_, 0);
  for (auto& i : order_) is >> i;
  is >> rng_;
  if (!is) fail(ErrorKind::load, "truncated sampler state");
}

std::vector<ModalBatch> load_manifest(const std::filesystem::path& path, Split split,
                                      const FeatureContext& ctx, const JointEncoderConfig& cfg,
                                      std::size_t batch_size, std::uint64_t seed, bool shuffle) {
  const Dataset data = prepare_dataset(read_manifest(path), split, ctx, cfg);
  if (data.size() == 0) return {};
  BatchSampler sampler(data.size(), batch_size, seed, shuffle);
  std::vector<ModalBatch> out;
  const std::size_t batches = (data.size() + batch_size - 1) / batch_size;
  for (std::size_t i = 0; i < batches; ++i) out.push_back(collate(data, sampler.next()));
  return out;
}

}  // namespace xmodal
