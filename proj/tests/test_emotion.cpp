#include <cmath>

#include "support.hpp"
#include "xmodal/checkpoint.hpp"
#include "xmodal/emotion.hpp"
#include "xmodal/train.hpp"

using namespace xmodal;
using xt::random_inputs;
using xt::random_tensor;

namespace {

Dataset labelled(const JointEncoderConfig& cfg, std::size_t n, std::mt19937_64& rng) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    ex.id = "seg" + std::to_string(i);
    const ExampleInputs in = random_inputs(cfg, 3 + i % 3, 2, 2 + i % 2, rng);
    ex.audio = in.audio;
    ex.video = in.video;
    ex.text = in.text;
    ex.transcript = {CharVocabulary::bos, 3 + static_cast<int>(i % 4), CharVocabulary::eos};
    ex.speaker = static_cast<int>(i % cfg.speaker_count);
    Tensor y({kEmotionCount});
    for (std::size_t c = 0; c < kEmotionCount; ++c) y[c] = (i + c) % 3 == 0 ? 1.0 : 0.0;
    ex.labels = y;
    d.examples.push_back(ex);
  }
  return d;
}

TrainConfig short_train(std::size_t steps) {
  TrainConfig t;
  t.steps = steps;
  t.batch_size = 3;
  t.warmup = 10;
  t.seed = 4;
  return t;
}

}  // namespace

TEST_SUITE("emotion head") {
  TEST_CASE("binarize Likert scores") {
    const Tensor s = Tensor::vector({0.0, 0.5, 3.0, 1.0, 0.0, 2.25});
    const Tensor b = binarize_likert(s);
    CHECK(b == Tensor::vector({0, 1, 1, 1, 0, 1}));
    CHECK(binarize_likert(b) == b);
    CHECK(xt::error_kind([] { binarize_likert(Tensor::vector({3.5})); }) == ErrorKind::validation);
    CHECK(xt::error_kind([] { binarize_likert(Tensor::vector({-0.01})); }) == ErrorKind::validation);
    CHECK(xt::error_kind([] { binarize_likert(Tensor::vector({std::nan("")})); }) == ErrorKind::validation);
  }

  TEST_CASE("class weights are negatives over positives") {
    Tensor y({6, 2});
    for (std::size_t i = 0; i < 6; ++i) y.at(i, 0) = i < 3 ? 1.0 : 0.0;
    y.at(0, 1) = 1.0;
    const ClassWeights w = compute_class_weights(y);
    CHECK(w.pos_weight[0] == 1.0);
    CHECK(w.pos_weight[1] == 5.0);

    Tensor all({4, 1}, 1.0);
    CHECK(xt::error_kind([&] { compute_class_weights(all); }) == ErrorKind::degenerate_class);
    Tensor none({4, 1});
    CHECK(xt::error_kind([&] { compute_class_weights(none); }) == ErrorKind::degenerate_class);
  }

  TEST_CASE("zeroed classifier emits zero logits") {
    std::mt19937_64 rng(1);
    const JointEncoderConfig cfg = xt::tiny_config();
    EmotionModel m(cfg, 3);
    for (auto& p : m.parameters())
      if (p->name().starts_with("emotion.")) p->assign(Tensor(p->value().shape()));
    std::vector<ExampleInputs> xs{random_inputs(cfg, 4, 2, 3, rng), random_inputs(cfg, 2, 1, 1, rng)};
    const Tensor z = emotion_logits(m, xt::make_batch(cfg, xs), cfg.modality_weights);
    CHECK(z.shape() == Shape{2, 6});
    for (double v : z.values()) CHECK(v == 0.0);
  }

  TEST_CASE("logits ignore batch padding") {
    std::mt19937_64 rng(2);
    const JointEncoderConfig cfg = xt::tiny_config();
    EmotionModel m(cfg, 5);
    std::vector<ExampleInputs> xs{random_inputs(cfg, 4, 2, 3, rng), random_inputs(cfg, 2, 3, 1, rng)};
    const Tensor a = emotion_logits(m, xt::make_batch(cfg, xs), cfg.modality_weights);
    ModalBatch loose = xt::make_batch(cfg, xs, 4);
    for (auto& v : loose.audio.values())
      if (v == 0.0) v = -7.0;
    CHECK(emotion_logits(m, loose, cfg.modality_weights) == a);

    // one example alone equals its row in the batch
    const Tensor solo = emotion_logits(m, xt::make_batch(cfg, {xs[1]}), cfg.modality_weights);
    for (std::size_t c = 0; c < 6; ++c) CHECK(solo.at(0, c) == a.at(1, c));
  }

  TEST_CASE("weighted loss over head and encoder passes grad_check") {
    std::mt19937_64 rng(3);
    const JointEncoderConfig cfg = xt::tiny_config();
    EmotionModel m(cfg, 7);
    std::vector<ExampleInputs> xs{random_inputs(cfg, 3, 2, 2, rng), random_inputs(cfg, 4, 1, 3, rng)};
    ModalBatch b = xt::make_batch(cfg, xs);
    b.emotion_targets = Tensor::matrix({{1, 0, 0, 1, 0, 0}, {0, 1, 1, 0, 0, 1}});
    const ClassWeights w{Tensor::vector({1.0, 5.0, 0.5, 2.0, 1.0, 3.0})};
    GradCheckOptions o;
    o.widen_small_gradients = true;
    const auto r = grad_check([&](Tape& t) { return m.loss(t, b, cfg.modality_weights, w); }, m.parameters(), o);
    CHECK(r.max_rel_error < 1e-4);
  }

  TEST_CASE("loss needs targets") {
    std::mt19937_64 rng(4);
    const JointEncoderConfig cfg = xt::tiny_config();
    EmotionModel m(cfg, 1);
    const ModalBatch b = xt::make_batch(cfg, {random_inputs(cfg, 3, 2, 2, rng)});
    Tape t(false);
    CHECK(xt::error_kind([&] { m.loss(t, b, cfg.modality_weights, {Tensor({6}, 1.0)}); }) == ErrorKind::validation);
  }

  TEST_CASE("pretrained encoder transfer") {
    std::mt19937_64 rng(5);
    const JointEncoderConfig cfg = xt::tiny_config();
    const Dataset data = labelled(cfg, 6, rng);
    PretrainTrainer pre(cfg, short_train(5), data);
    for (int i = 0; i < 5; ++i) pre.step();
    const Checkpoint ckpt = pre.checkpoint();

    const EmotionModel m = load_pretrained_encoder(ckpt, cfg, 11);
    std::size_t copied = 0;
    for (const auto& p : m.parameters()) {
      if (!p->name().starts_with("encoder.")) continue;
      REQUIRE(ckpt.find_parameter(p->name()));
      CHECK(p->value() == *ckpt.find_parameter(p->name()));
      ++copied;
    }
    std::size_t in_pretrain = 0;
    for (const auto& p : pre.model().parameters()) in_pretrain += p->name().starts_with("encoder.") ? 1 : 0;
    CHECK(copied == in_pretrain);

    // the head comes from the seed, not the checkpoint
    const EmotionModel fresh(cfg, 11);
    CHECK(m.head().classifier().weight().value() == fresh.head().classifier().weight().value());

    JointEncoderConfig wider = cfg;
    wider.attention.model_dim = 12;
    CHECK(xt::error_kind([&] { load_pretrained_encoder(ckpt, wider, 1); }) == ErrorKind::incompatible);
    JointEncoderConfig deeper = cfg;
    deeper.attention.encoder_layers = 3;
    CHECK(xt::error_kind([&] { load_pretrained_encoder(ckpt, deeper, 1); }) == ErrorKind::incompatible);

    Checkpoint broken = ckpt;
    broken.parameters.erase(broken.parameters.begin());
    CHECK(xt::error_kind([&] { load_pretrained_encoder(broken, cfg, 1); }) == ErrorKind::incompatible);
  }

  TEST_CASE("fine-tuning updates the transferred encoder") {
    std::mt19937_64 rng(6);
    const JointEncoderConfig cfg = xt::tiny_config();
    const Dataset data = labelled(cfg, 6, rng);
    PretrainTrainer pre(cfg, short_train(3), data);
    for (int i = 0; i < 3; ++i) pre.step();
    const Checkpoint ckpt = pre.checkpoint();

    FinetuneTrainer ft(cfg, short_train(1), data, &ckpt);
    for (const auto& p : ft.model().parameters())
      if (p->name().starts_with("encoder.")) CHECK(p->value() == *ckpt.find_parameter(p->name()));
    ft.step();
    std::size_t moved = 0, total = 0;
    for (const auto& p : ft.model().parameters()) {
      if (!p->name().starts_with("encoder.")) continue;
      ++total;
      if (!(p->value() == *ckpt.find_parameter(p->name()))) ++moved;
    }
    CHECK(total > 0);
    CHECK(moved == total);
  }
}
