#include "xmodal/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "xmodal/emotion.hpp"
#include "xmodal/error.hpp"

namespace xmodal {

namespace {

constexpr std::size_t kSpeakerDims = 6;
constexpr double kWordDirection = 1.0;  // length of the class direction in emotion-word rows

using Gen = std::mt19937_64;

double gauss(Gen& g) { return std::normal_distribution<double>(0.0, 1.0)(g); }

std::size_t uniform_int(Gen& g, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(g);
}

// Rows of the result are orthonormal vectors of length `dim`.
std::vector<std::vector<double>> orthonormal_rows(std::size_t count, std::size_t dim, Gen& g) {
  std::vector<std::vector<double>> rows;
  while (rows.size() < count) {
    std::vector<double> v(dim);
    for (auto& x : v) x = gauss(g);
    for (const auto& r : rows) {
      const double p = std::inner_product(v.begin(), v.end(), r.begin(), 0.0);
      for (std::size_t i = 0; i < dim; ++i) v[i] -= p * r[i];
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-6) continue;
    for (auto& x : v) x /= norm;
    rows.push_back(std::move(v));
  }
  return rows;
}

void axpy(std::vector<double>& y, double a, const std::vector<double>& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

double spelling_capacity(std::size_t letters, std::size_t lo, std::size_t hi) {
  double total = 0.0;
  for (std::size_t len = lo; len <= hi; ++len) total += std::pow(static_cast<double>(letters), static_cast<double>(len));
  return total;
}

struct World {
  std::vector<std::string> letters;              // vocabulary characters, space first
  std::vector<std::string> words;                // lexicon spellings
  std::vector<std::vector<double>> audio_emotion;  // 6 × lfbe
  std::vector<std::vector<double>> audio_speaker;  // k × lfbe
  std::vector<std::vector<double>> audio_rest;     // remaining directions
  std::vector<std::vector<double>> video_emotion;
  std::vector<std::vector<double>> video_speaker;
  std::vector<std::vector<double>> templates;    // one per character
};

struct Speaker {
  std::vector<double> audio_offset;
  std::vector<double> face;
  std::array<double, 6> style{};
};

std::vector<std::string> make_lexicon(const SyntheticSpec& spec, const std::vector<std::string>& letters, Gen& g) {
  const std::size_t l = letters.size();
  std::vector<std::string> pool;
  const double capacity = spelling_capacity(l, spec.min_word_length, spec.max_word_length);
  if (capacity < 4.0 * static_cast<double>(spec.lexicon_size)) {
    // Small alphabets: enumerate every spelling and sample without replacement.
    for (std::size_t len = spec.min_word_length; len <= spec.max_word_length; ++len) {
      std::vector<std::size_t> digits(len, 0);
      while (true) {
        std::string w;
        for (auto d : digits) w += letters[d];
        pool.push_back(std::move(w));
        std::size_t i = 0;
        while (i < len && ++digits[i] == l) digits[i++] = 0;
        if (i == len) break;
      }
    }
    for (std::size_t i = 0; i < spec.lexicon_size; ++i) {
      std::swap(pool[i], pool[i + uniform_int(g, 0, pool.size() - i - 1)]);
    }
    pool.resize(spec.lexicon_size);
    return pool;
  }
  std::set<std::string> seen;
  while (pool.size() < spec.lexicon_size) {
    std::string w;
    const std::size_t len = uniform_int(g, spec.min_word_length, spec.max_word_length);
    for (std::size_t i = 0; i < len; ++i) w += letters[uniform_int(g, 0, l - 1)];
    if (seen.insert(w).second) pool.push_back(std::move(w));
  }
  return pool;
}

Tensor rows_to_tensor(const std::vector<std::vector<double>>& rows) {
  const std::size_t cols = rows.front().size();
  Tensor t({rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j) t.at(i, j) = rows[i][j];
  return round_to_float(std::move(t));
}

class Generator {
 public:
  Generator(const SyntheticSpec& spec, std::uint64_t seed) : spec_(spec), rng_(seed) {}

  SyntheticCorpus run() {
    SyntheticCorpus out;
    build_text_world(out);
    build_signal_world();
    auto pre_speakers = make_speakers(spec_.speakers, spec_.speaker_strength);
    auto down_speakers = make_speakers(spec_.downstream_speakers, 0.0);

    for (std::size_t i = 0; i < spec_.pretrain_size; ++i) {
      const std::size_t s = uniform_int(rng_, 0, spec_.speakers - 1);
      std::array<double, 6> z{};
      for (std::size_t c = 0; c < 6; ++c) z[c] = pre_speakers[s].style[c] + gauss(rng_);
      out.pretrain.records.push_back(segment("pre-" + pad(i), Split::train, s, pre_speakers[s], z, false));
    }

    const std::array<std::pair<Split, std::size_t>, 3> splits = {
        {{Split::train, spec_.train_size}, {Split::dev, spec_.dev_size}, {Split::test, spec_.test_size}}};
    for (const auto& [split, n] : splits) {
      const auto latents = stratified_latents(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t s = uniform_int(rng_, 0, spec_.downstream_speakers - 1);
        out.downstream.records.push_back(
            segment(to_string(split) + "-" + pad(i), split, s, down_speakers[s], latents[i], true));
      }
    }
    return out;
  }

 private:
  static std::string pad(std::size_t i) {
    std::string s = std::to_string(i);
    return std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s;
  }

  void build_text_world(SyntheticCorpus& out) {
    Gen g(spec_.embedding_seed);
    world_.letters.push_back(" ");
    for (std::size_t i = 0; i + 4 < spec_.vocab_size; ++i) {
      world_.letters.push_back(std::string(1, static_cast<char>('a' + i)));
    }
    out.vocab = CharVocabulary(world_.letters);
    std::vector<std::string> letters(world_.letters.begin() + 1, world_.letters.end());
    world_.words = make_lexicon(spec_, letters, g);

    const std::size_t d = spec_.text_dim;
    const auto dirs = orthonormal_rows(kEmotionCount, d, g);
    std::vector<std::vector<double>> rows;
    for (std::size_t w = 0; w < world_.words.size(); ++w) {
      std::vector<double> v(d);
      for (auto& x : v) x = gauss(g) / std::sqrt(static_cast<double>(d));
      for (const auto& u : dirs) axpy(v, -std::inner_product(v.begin(), v.end(), u.begin(), 0.0), u);
      if (w < kEmotionCount * spec_.synonyms) axpy(v, kWordDirection, dirs[w / spec_.synonyms]);
      rows.push_back(std::move(v));
    }
    out.embeddings = EmbeddingTable(world_.words, rows_to_tensor(rows));
  }

  void build_signal_world() {
    auto audio = orthonormal_rows(spec_.lfbe_dim, spec_.lfbe_dim, rng_);
    world_.audio_emotion.assign(audio.begin(), audio.begin() + kEmotionCount);
    world_.audio_speaker.assign(audio.begin() + kEmotionCount, audio.begin() + kEmotionCount + kSpeakerDims);
    world_.audio_rest.assign(audio.begin() + kEmotionCount + kSpeakerDims, audio.end());
    auto video = orthonormal_rows(kEmotionCount + kSpeakerDims, spec_.video_dim, rng_);
    world_.video_emotion.assign(video.begin(), video.begin() + kEmotionCount);
    world_.video_speaker.assign(video.begin() + kEmotionCount, video.end());
    for (std::size_t ch = 0; ch < world_.letters.size(); ++ch) {
      std::vector<double> t(spec_.lfbe_dim, 0.0);
      for (const auto& r : world_.audio_rest) axpy(t, gauss(rng_), r);
      world_.templates.push_back(std::move(t));
    }
  }

  std::vector<Speaker> make_speakers(std::size_t count, double style_scale) {
    std::vector<Speaker> out(count);
    for (auto& s : out) {
      s.audio_offset.assign(spec_.lfbe_dim, 0.0);
      s.face.assign(spec_.video_dim, 0.0);
      for (const auto& r : world_.audio_speaker) axpy(s.audio_offset, spec_.speaker_strength * gauss(rng_), r);
      for (const auto& r : world_.video_speaker) axpy(s.face, spec_.speaker_strength * gauss(rng_), r);
      for (auto& x : s.style) x = style_scale * gauss(rng_);
    }
    return out;
  }

  // Latin-hypercube draws per class so each split hits its prevalence.
  std::vector<std::array<double, 6>> stratified_latents(std::size_t n) {
    std::vector<std::array<double, 6>> z(n);
    for (std::size_t c = 0; c < kEmotionCount; ++c) {
      const double mu = inverse_normal_cdf(spec_.prevalence[c]);
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[uniform_int(rng_, 0, i - 1)]);
      for (std::size_t i = 0; i < n; ++i) {
        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
        double p = (static_cast<double>(perm[i]) + u) / static_cast<double>(n);
        p = std::clamp(p, 1e-12, 1.0 - 1e-12);
        z[i][c] = mu + inverse_normal_cdf(p);
      }
    }
    return z;
  }

  std::array<double, 6> observe(const std::array<double, 6>& z, double strength) {
    std::array<double, 6> c{};
    for (std::size_t k = 0; k < 6; ++k) c[k] = strength * z[k] + spec_.noise * gauss(rng_);
    return c;
  }

  SegmentRecord segment(std::string id, Split split, std::size_t speaker_id, const Speaker& spk,
                        const std::array<double, 6>& z, bool labelled) {
    SegmentRecord r;
    r.id = std::move(id);
    r.split = split;
    r.speaker = static_cast<int>(speaker_id);

    const auto ca = observe(z, spec_.audio_strength);
    const auto cv = observe(z, spec_.video_strength);
    const auto ct = observe(z, spec_.text_strength);

    std::vector<int> tokens;
    for (std::size_t k = 0; k < kEmotionCount; ++k) {
      if (ct[k] > 0.0) tokens.push_back(static_cast<int>(k * spec_.synonyms + uniform_int(rng_, 0, spec_.synonyms - 1)));
    }
    const std::size_t first_filler = kEmotionCount * spec_.synonyms;
    const std::size_t fillers = uniform_int(rng_, spec_.min_fillers, spec_.max_fillers);
    for (std::size_t i = 0; i < fillers; ++i) {
      tokens.push_back(static_cast<int>(uniform_int(rng_, first_filler, spec_.lexicon_size - 1)));
    }
    for (std::size_t i = tokens.size(); i > 1; --i) std::swap(tokens[i - 1], tokens[uniform_int(rng_, 0, i - 1)]);
    r.tokens = tokens;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) r.transcript += ' ';
      r.transcript += world_.words[static_cast<std::size_t>(tokens[i])];
    }

    std::vector<double> audio_base = spk.audio_offset;
    for (std::size_t k = 0; k < kEmotionCount; ++k) axpy(audio_base, ca[k], world_.audio_emotion[k]);
    std::vector<std::vector<double>> frames;
    for (char ch : r.transcript) {
      const auto pos = std::find(world_.letters.begin(), world_.letters.end(), std::string(1, ch));
      const auto& tmpl = world_.templates[static_cast<std::size_t>(pos - world_.letters.begin())];
      const std::size_t reps = uniform_int(rng_, spec_.min_frames_per_char, spec_.max_frames_per_char);
      for (std::size_t i = 0; i < reps; ++i) {
        std::vector<double> f = audio_base;
        axpy(f, 1.0, tmpl);
        for (auto& x : f) x += spec_.noise * gauss(rng_);
        frames.push_back(std::move(f));
      }
    }
    r.audio = rows_to_tensor(frames);

    std::vector<double> video_base = spk.face;
    for (std::size_t k = 0; k < kEmotionCount; ++k) axpy(video_base, cv[k], world_.video_emotion[k]);
    std::vector<std::vector<double>> vframes;
    const std::size_t nv = uniform_int(rng_, spec_.min_video_frames, spec_.max_video_frames);
    for (std::size_t i = 0; i < nv; ++i) {
      std::vector<double> f = video_base;
      for (auto& x : f) x += spec_.noise * gauss(rng_);
      vframes.push_back(std::move(f));
    }
    r.video = rows_to_tensor(vframes);

    if (labelled) {
      std::array<double, 6> likert{};
      for (std::size_t k = 0; k < 6; ++k) {
        likert[k] = z[k] > 0.0 ? std::clamp(std::round(3.0 * z[k]) / 3.0, 1.0 / 3.0, 3.0) : 0.0;
      }
      r.likert = likert;
    }
    return r;
  }

  const SyntheticSpec& spec_;
  Gen rng_;
  World world_;
};

}  // namespace

void SyntheticSpec::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) fail(ErrorKind::spec, msg);
  };
  need(vocab_size >= 5, "synthetic.vocab_size must be at least 5 (3 specials, space, one letter)");
  need(vocab_size <= 30, "synthetic.vocab_size must be at most 30 (letters a-z)");
  need(speakers >= 1 && downstream_speakers >= 1, "speaker counts must be positive");
  need(synonyms >= 1, "synthetic.synonyms must be positive");
  need(min_word_length >= 1 && min_word_length <= max_word_length, "bad word length range");
  need(min_fillers >= 1 && min_fillers <= max_fillers, "bad filler range (at least one filler)");
  need(min_frames_per_char >= 1 && min_frames_per_char <= max_frames_per_char, "bad frames-per-char range");
  need(min_video_frames >= 1 && min_video_frames <= max_video_frames, "bad video frame range");
  need(lexicon_size > kEmotionCount * synonyms, "synthetic.lexicon_size must exceed the emotion words");
  need(spelling_capacity(vocab_size - 4, min_word_length, max_word_length) >= static_cast<double>(lexicon_size),
       "too few distinct spellings for synthetic.lexicon_size");
  need(lfbe_dim > kEmotionCount + kSpeakerDims, "synthetic audio dim too small for planted directions");
  need(video_dim >= kEmotionCount + kSpeakerDims, "synthetic video dim too small for planted directions");
  need(text_dim > kEmotionCount, "synthetic text dim too small");
  need(noise >= 0.0 && audio_strength >= 0.0 && video_strength >= 0.0 && text_strength >= 0.0 &&
           speaker_strength >= 0.0,
       "strengths and noise must be non-negative");
  for (double p : prevalence) need(p > 0.0 && p < 1.0, "prevalences must lie in (0, 1)");
  need(pretrain_size + train_size + dev_size + test_size > 0, "corpus is empty");
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  return Generator(spec, seed).run();
}

void write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir, bool sidecar) {
  std::filesystem::create_directories(dir);
  corpus.vocab.save(dir / "vocab.txt");
  corpus.embeddings.save(dir / "embeddings.txt");
  ManifestWriteOptions opts;
  opts.sidecar = sidecar;
  write_manifest(corpus.pretrain, dir / "pretrain.jsonl", opts);
  write_manifest(corpus.downstream, dir / "downstream.jsonl", opts);
}

SyntheticCorpus load_corpus(const std::filesystem::path& dir) {
  SyntheticCorpus c;
  c.vocab = CharVocabulary::load(dir / "vocab.txt");
  c.embeddings = EmbeddingTable::load(dir / "embeddings.txt");
  if (std::filesystem::exists(dir / "pretrain.jsonl")) c.pretrain = read_manifest(dir / "pretrain.jsonl");
  if (std::filesystem::exists(dir / "downstream.jsonl")) c.downstream = read_manifest(dir / "downstream.jsonl");
  return c;
}

double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) fail(ErrorKind::domain, "inverse_normal_cdf needs p in (0, 1)");
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace xmodal
