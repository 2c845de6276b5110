#include <cmath>

#include "support.hpp"
#include "xmodal/joint_encoder.hpp"

using namespace xmodal;
using xt::random_inputs;
using xt::random_tensor;

namespace {

struct Fixture {
  JointEncoderConfig cfg = xt::tiny_config();
  ParameterSet params;
  Rng rng{42};
  JointEncoder enc{cfg, params, rng};
};

Tensor encode(const JointEncoder& e, const ExampleInputs& ex, const ModalityWeights& w) {
  Tape t(false);
  return e.encode(t, ex, w).value();
}

Var zeros_like(Tape& t, Var v) { return t.constant(Tensor(v.shape())); }

}  // namespace

TEST_SUITE("joint encoder") {
  TEST_CASE("weight and config validation") {
    CHECK(xt::error_kind([] { ModalityWeights{-0.1, 0.5, 0.5}.validate(); }) == ErrorKind::config);
    CHECK(xt::error_kind([] { TaskWeights{0.7, 0.2}.validate(); }) == ErrorKind::config);
    CHECK(ModalityWeights{} == ModalityWeights{0.4, 0.4, 0.2});
    CHECK(TaskWeights{} == TaskWeights{0.8, 0.2});
    CHECK(JointEncoderConfig{}.audio_dim() == 200);
    CHECK(JointEncoderConfig{}.video_dim == 4096);
    CHECK(JointEncoderConfig{}.text_dim == 300);
  }

  TEST_CASE("audio-only weights equal the audio self-encoder bit for bit") {
    Fixture f;
    const ExampleInputs ex = random_inputs(f.cfg, 5, 3, 4, f.rng);
    Tape t(false);
    const BranchOutputs b = f.enc.branches(t, ex, {1, 0, 0});
    CHECK(!b.video);
    CHECK(!b.text);
    CHECK(f.enc.encode(t, ex, {1, 0, 0}).value() == b.audio.value());
  }

  TEST_CASE("branch outputs of ones fuse to ones") {
    Tape t(false);
    BranchOutputs b;
    b.audio = t.constant(Tensor({4, 8}, 1.0));
    b.video = t.constant(Tensor({4, 8}, 1.0));
    b.text = t.constant(Tensor({4, 8}, 1.0));
    for (double v : JointEncoder::fuse(b, {0.4, 0.4, 0.2}).value().values()) CHECK(std::abs(v - 1.0) < 1e-15);
  }

  TEST_CASE("zero weight equals zeroing that branch") {
    Fixture f;
    for (int trial = 0; trial < 10; ++trial) {
      const ExampleInputs ex = random_inputs(f.cfg, 3 + trial % 4, 2 + trial % 3, 1 + trial % 5, f.rng);
      const ModalityWeights full{0.4, 0.4, 0.2};
      Tape t(false);
      const BranchOutputs b = f.enc.branches(t, ex, full);

      BranchOutputs no_text = b;
      no_text.text = zeros_like(t, b.text);
      CHECK(max_abs_diff(encode(f.enc, ex, {0.4, 0.4, 0}), JointEncoder::fuse(no_text, full).value()) < 1e-12);

      BranchOutputs no_video = b;
      no_video.video = zeros_like(t, b.video);
      CHECK(max_abs_diff(encode(f.enc, ex, {0.4, 0, 0.2}), JointEncoder::fuse(no_video, full).value()) < 1e-12);

      BranchOutputs audio_only = no_video;
      audio_only.text = zeros_like(t, b.text);
      CHECK(max_abs_diff(encode(f.enc, ex, {0.4, 0, 0}), JointEncoder::fuse(audio_only, full).value()) < 1e-12);
    }
  }

  TEST_CASE("fusion is linear in the weights") {
    Fixture f;
    const ExampleInputs ex = random_inputs(f.cfg, 6, 3, 4, f.rng);
    const Tensor one = encode(f.enc, ex, {0.4, 0.4, 0.2});
    const Tensor two = encode(f.enc, ex, {0.8, 0.8, 0.4});
    for (std::size_t i = 0; i < one.size(); ++i) CHECK(two[i] == 2.0 * one[i]);
  }

  TEST_CASE("output length follows the audio") {
    Fixture f;
    for (std::size_t nv = 1; nv <= 7; nv += 3)
      for (std::size_t nt = 1; nt <= 9; nt += 4) {
        const ExampleInputs ex = random_inputs(f.cfg, 5, nv, nt, f.rng);
        CHECK(encode(f.enc, ex, {0.4, 0.4, 0.2}).shape() == Shape{5, 8});
      }
  }

  TEST_CASE("ablated streams cannot influence the output") {
    Fixture f;
    ExampleInputs ex = random_inputs(f.cfg, 5, 3, 4, f.rng);
    const Tensor ref = encode(f.enc, ex, {1, 0, 0});
    ex.video = random_tensor({9, 3}, f.rng, 100.0);
    ex.text = random_tensor({2, 5}, f.rng, 100.0);
    CHECK(encode(f.enc, ex, {1, 0, 0}) == ref);
    ex.video = Tensor();
    ex.text = Tensor();
    CHECK(encode(f.enc, ex, {1, 0, 0}) == ref);
  }

  TEST_CASE("encode errors") {
    Fixture f;
    ExampleInputs ex = random_inputs(f.cfg, 5, 3, 4, f.rng);
    CHECK(xt::error_kind([&] { encode(f.enc, ex, {0, 0, 0}); }) == ErrorKind::config);
    ExampleInputs no_audio = ex;
    no_audio.audio = Tensor();
    CHECK(xt::error_kind([&] { encode(f.enc, no_audio, {0.4, 0.4, 0.2}); }) == ErrorKind::unsupported_ablation);
    ExampleInputs wrong = ex;
    wrong.video = random_tensor({3, 4}, f.rng);
    CHECK(xt::error_kind([&] { encode(f.enc, wrong, {0.4, 0.4, 0.2}); }) == ErrorKind::config);
  }

  TEST_CASE("zero projections leave only positions") {
    Fixture f;
    for (auto* lin : {&f.enc.audio_projection(), &f.enc.video_projection(), &f.enc.text_projection()})
      lin->weight().assign(Tensor(lin->weight().value().shape()));
    const ExampleInputs ex = random_inputs(f.cfg, 5, 3, 4, f.rng);
    Tape t(false);
    const ProjectedInputs p = f.enc.project_inputs(t, ex);
    CHECK(p.audio.value() == positional_encoding(5, 8));
    CHECK(p.video.value() == positional_encoding(3, 8));
    CHECK(p.text.value() == positional_encoding(4, 8));
  }

  TEST_CASE("full-scale projection shapes") {
    JointEncoderConfig cfg;  // 200 → 512, 4096 → 512, 300 → 512
    cfg.attention.encoder_layers = cfg.attention.crossmodal_layers = 1;
    ParameterSet ps;
    Rng rng(1);
    JointEncoder enc(cfg, ps, rng);
    CHECK(enc.audio_projection().weight().value().shape() == Shape{200, 512});
    CHECK(enc.video_projection().weight().value().shape() == Shape{4096, 512});
    CHECK(enc.text_projection().weight().value().shape() == Shape{300, 512});
    Tape t(false);
    ExampleInputs ex;
    ex.audio = Tensor({2, 200}, 0.1);
    ex.video = Tensor({3, 4096}, 0.1);
    ex.text = Tensor({1, 300}, 0.1);
    const ProjectedInputs p = enc.project_inputs(t, ex);
    CHECK(p.audio.shape() == Shape{2, 512});
    CHECK(p.video.shape() == Shape{3, 512});
    CHECK(p.text.shape() == Shape{1, 512});
  }

  TEST_CASE("projection and fused encoder pass grad_check") {
    Fixture f;
    const ExampleInputs ex = random_inputs(f.cfg, 4, 3, 2, f.rng);
    const Tensor w = random_tensor({1, 32}, f.rng);
    const double err = xt::max_rel_error([&](Tape& t) {
      const Var y = f.enc.encode(t, ex, {0.4, 0.4, 0.2});
      return reshape(matmul_nt(reshape(y, {1, 32}), t.constant(w)), {1});
    }, f.params);
    CHECK(err < 1e-4);
  }

  TEST_CASE("set_ablation_weights") {
    CHECK(set_ablation_weights({0.4, 0, 0.2}) == ModalityWeights{0.4, 0, 0.2});
    CHECK(set_ablation_weights({0.4, 0.4, 0.2}) == ModalityWeights{0.4, 0.4, 0.2});
    CHECK(xt::error_kind([] { set_ablation_weights({0, 0.4, 0.2}); }) == ErrorKind::unsupported_ablation);
    CHECK(xt::error_kind([] { set_ablation_weights({0.4, -1, 0.2}); }) == ErrorKind::config);
  }

  TEST_CASE("batch encoding ignores padding") {
    Fixture f;
    std::vector<ExampleInputs> xs{random_inputs(f.cfg, 3, 2, 4, f.rng), random_inputs(f.cfg, 5, 3, 1, f.rng)};
    const ModalBatch tight = xt::make_batch(f.cfg, xs);
    ModalBatch loose = xt::make_batch(f.cfg, xs, 3);
    for (auto& v : loose.video.values())
      if (v == 0.0) v = 1e3;
    const Tensor a = encode_joint(f.enc, tight, {0.4, 0.4, 0.2});
    const Tensor b = encode_joint(f.enc, loose, {0.4, 0.4, 0.2});
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t r = 0; r < xs[i].audio.rows(); ++r)
        for (std::size_t c = 0; c < 8; ++c) CHECK(a.at(i, r, c) == b.at(i, r, c));
    CHECK(a.at(0, 4, 0) == 0.0);
  }
}
