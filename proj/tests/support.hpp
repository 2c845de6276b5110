#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "xmodal/autodiff.hpp"
#include "xmodal/error.hpp"
#include "xmodal/grad_check.hpp"
#include "xmodal/joint_encoder.hpp"

namespace xt {

using namespace xmodal;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = n(rng);
  return t;
}

inline std::vector<int> random_ids(std::size_t n, int bound, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, bound - 1);
  std::vector<int> out(n);
  for (auto& v : out) v = d(rng);
  return out;
}

// Runs `body` and reports the ErrorKind it threw; fails the test if it did not throw.
template <class F>
ErrorKind error_kind(F&& body) {
  try {
    body();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an xmodal::Error");
  return ErrorKind::usage;
}

inline double max_rel_error(const LossFn& f, ParameterSet& params, double step = 1e-5) {
  GradCheckOptions o;
  o.step = step;
  return grad_check(f, params, o).max_rel_error;
}

// Small model used across the model-level suites.
inline JointEncoderConfig tiny_config() {
  JointEncoderConfig c;
  c.attention.model_dim = 8;
  c.attention.heads = 2;
  c.attention.ff_dim = 12;
  c.attention.encoder_layers = 2;
  c.attention.crossmodal_layers = 2;
  c.attention.decoder_layers = 2;
  c.lfbe_dim = 4;
  c.stack_size = 2;
  c.video_dim = 3;
  c.text_dim = 5;
  c.vocab_size = 7;
  c.speaker_count = 3;
  return c;
}

inline ExampleInputs random_inputs(const JointEncoderConfig& c, std::size_t na, std::size_t nv, std::size_t nt,
                                   std::mt19937_64& rng) {
  ExampleInputs ex;
  ex.audio = random_tensor({na, c.audio_dim()}, rng);
  if (nv) ex.video = random_tensor({nv, c.video_dim}, rng);
  if (nt) ex.text = random_tensor({nt, c.text_dim}, rng);
  return ex;
}

// Pads examples into a ModalBatch the way collate() does.
inline ModalBatch make_batch(const JointEncoderConfig& c, const std::vector<ExampleInputs>& xs,
                             std::size_t extra_pad = 0) {
  ModalBatch b;
  std::size_t na = 1, nv = 1, nt = 1;
  for (const auto& x : xs) {
    na = std::max(na, x.audio.rows());
    if (!x.video.empty()) nv = std::max(nv, x.video.rows());
    if (!x.text.empty()) nt = std::max(nt, x.text.rows());
  }
  na += extra_pad;
  nv += extra_pad;
  nt += extra_pad;
  const std::size_t n = xs.size();
  b.audio = Tensor({n, na, c.audio_dim()});
  b.video = Tensor({n, nv, c.video_dim});
  b.text = Tensor({n, nt, c.text_dim});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& x = xs[i];
    auto fill = [&](Tensor& dst, const Tensor& src, std::vector<std::size_t>& lens) {
      lens.push_back(src.empty() ? 0 : src.rows());
      if (src.empty()) return;
      for (std::size_t r = 0; r < src.rows(); ++r)
        for (std::size_t k = 0; k < src.cols(); ++k) dst.at(i, r, k) = src.at(r, k);
    };
    fill(b.audio, x.audio, b.audio_lengths);
    fill(b.video, x.video, b.video_lengths);
    fill(b.text, x.text, b.text_lengths);
    b.ids.push_back("ex" + std::to_string(i));
  }
  return b;
}

}  // namespace xt
