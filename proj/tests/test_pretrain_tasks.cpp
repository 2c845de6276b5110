#include <cmath>
#include <filesystem>

#include "support.hpp"
#include "xmodal/manifest.hpp"
#include "xmodal/pretrain_tasks.hpp"
#include "xmodal/train.hpp"

using namespace xmodal;
using xt::random_inputs;
using xt::random_tensor;

namespace {

CharVocabulary letters() { return CharVocabulary({" ", "a", "b", "c"}); }  // V = 7

ModalBatch random_batch(const JointEncoderConfig& cfg, std::size_t n, std::mt19937_64& rng) {
  std::vector<ExampleInputs> xs;
  for (std::size_t i = 0; i < n; ++i) xs.push_back(random_inputs(cfg, 3 + i % 3, 2 + i % 2, 1 + i % 4, rng));
  ModalBatch b = xt::make_batch(cfg, xs);
  const CharVocabulary v = letters();
  const char* words[] = {"ab", "c a", "bca", "a", "cc b"};
  for (std::size_t i = 0; i < n; ++i) {
    b.asr_targets.push_back(v.encode(words[i % 5]));
    b.speaker_targets.push_back(static_cast<int>(i % cfg.speaker_count));
  }
  return b;
}

std::vector<Var> encode_all(const PretrainModel& m, Tape& t, const ModalBatch& b) {
  std::vector<Var> out;
  for (std::size_t i = 0; i < b.size(); ++i) out.push_back(m.encoder().encode(t, b.example(i), m.config().modality_weights));
  return out;
}

Dataset toy_dataset(const JointEncoderConfig& cfg, std::size_t n, std::mt19937_64& rng) {
  const CharVocabulary v = letters();
  const char* words[] = {"abc", "cab", "b a", "ca c"};
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    ex.id = "toy" + std::to_string(i);
    const ExampleInputs in = random_inputs(cfg, 4, 2, 3, rng);
    ex.audio = in.audio;
    ex.video = in.video;
    ex.text = in.text;
    ex.transcript = v.encode(words[i % 4]);
    ex.speaker = static_cast<int>(i % 4);
    d.examples.push_back(ex);
  }
  return d;
}

TrainConfig fast_train(std::size_t steps) {
  TrainConfig t;
  t.steps = steps;
  t.batch_size = 4;
  t.warmup = 30;
  t.lr_scale = 1.0;
  t.seed = 3;
  return t;
}

}  // namespace

TEST_SUITE("pretrain tasks") {
  TEST_CASE("vocabulary") {
    const CharVocabulary v = letters();
    CHECK(v.size() == 7);
    CHECK(v.symbol(CharVocabulary::pad) != v.symbol(CharVocabulary::bos));
    const std::vector<int> ids{3, 4, 5, 6, 4};
    CHECK(v.encode_chars(v.decode(ids)) == ids);
    CHECK(v.encode("ab") == std::vector<int>{CharVocabulary::bos, 4, 5, CharVocabulary::eos});
    CHECK(xt::error_kind([&] { v.index("z"); }) == ErrorKind::index);
    CHECK(xt::error_kind([] { CharVocabulary({"a", "a"}); }) == ErrorKind::validation);

    const CharVocabulary u({"é", "ß", "a"});
    CHECK(u.decode(u.encode("éaß")) == "éaß");
    const auto path = std::filesystem::temp_directory_path() / "xmodal_vocab_test.txt";
    u.save(path);
    CHECK(CharVocabulary::load(path) == u);
    std::filesystem::remove(path);
  }

  TEST_CASE("scored positions follow the shift-by-one contract") {
    JointEncoderConfig cfg = xt::tiny_config();
    PretrainModel m(cfg, 1);
    std::mt19937_64 rng(1);
    Tape t(false);
    const Var mem = t.constant(random_tensor({4, 8}, rng));
    const std::vector<std::vector<int>> tgt{letters().encode("ab")};
    const auto r = asr_loss(m.asr_head(), std::span(&mem, 1), tgt);
    CHECK(r.count == 3);
    CHECK(xt::error_kind([&] {
            const std::vector<std::vector<int>> empty{{}};
            asr_loss(m.asr_head(), std::span(&mem, 1), empty);
          }) == ErrorKind::empty_sequence);
  }

  TEST_CASE("untrained losses are near uniform") {
    std::mt19937_64 rng(5);
    JointEncoderConfig cfg = xt::tiny_config();
    cfg.speaker_count = 4;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      PretrainModel m(cfg, seed);
      const ModalBatch b = random_batch(cfg, 8, rng);
      Tape t(false);
      const auto out = m.forward(t, b);
      CHECK(std::abs(out.breakdown.asr_loss - std::log(7.0)) < 0.15 * std::log(7.0));
      CHECK(std::abs(out.breakdown.pid_loss - std::log(4.0)) < 0.15 * std::log(4.0));
    }
  }

  TEST_CASE("identical inputs give identical speaker losses") {
    std::mt19937_64 rng(6);
    JointEncoderConfig cfg = xt::tiny_config();
    PretrainModel m(cfg, 2);
    Tape t(false);
    const Var mem = t.constant(random_tensor({5, 8}, rng));
    const std::vector<std::size_t> len{5};
    const std::vector<int> spk{1};
    const double a = pid_loss(m.pid_head(), std::span(&mem, 1), len, spk, 3).loss.value().item();
    const double b = pid_loss(m.pid_head(), std::span(&mem, 1), len, spk, 3).loss.value().item();
    CHECK(a == b);
    const Var two[] = {mem, mem};
    const std::vector<std::size_t> lens{5, 5};
    const std::vector<int> spks{1, 1};
    CHECK(pid_loss(m.pid_head(), two, lens, spks, 3).loss.value().item() == doctest::Approx(a).epsilon(1e-15));
    const std::vector<int> bad{3};
    CHECK(xt::error_kind([&] { pid_loss(m.pid_head(), std::span(&mem, 1), len, bad, 3); }) == ErrorKind::index);
  }

  TEST_CASE("multitask combination") {
    Tape t(false);
    LossAndAccuracy asr, pid;
    asr.loss = t.constant(Tensor::scalar(2.0));
    pid.loss = t.constant(Tensor::scalar(5.0));
    CHECK(multitask_loss(asr, pid, {0.8, 0.2}).breakdown.combined == doctest::Approx(2.6).epsilon(1e-15));
    CHECK(multitask_loss(asr, pid, {1.0, 0.0}).breakdown.combined == 2.0);
    pid.loss = t.constant(Tensor::scalar(2.0));
    CHECK(multitask_loss(asr, pid, {0.5, 0.5}).breakdown.combined == 2.0);
  }

  TEST_CASE("zero task weight gives a zero head gradient") {
    std::mt19937_64 rng(7);
    JointEncoderConfig cfg = xt::tiny_config();
    PretrainModel m(cfg, 3);
    const ModalBatch b = random_batch(cfg, 3, rng);
    auto grads_for = [&](const TaskWeights& tw) {
      m.parameters().zero_grad();
      Tape t;
      t.backward(m.forward(t, b, cfg.modality_weights, tw).combined);
    };
    grads_for({1.0, 0.0});
    for (const auto& p : m.parameters())
      if (p->name().rfind("pid.", 0) == 0)
        for (double g : p->grad().values()) CHECK(g == 0.0);
    grads_for({0.0, 1.0});
    for (const auto& p : m.parameters())
      if (p->name().rfind("asr.", 0) == 0)
        for (double g : p->grad().values()) CHECK(g == 0.0);
  }

  TEST_CASE("encoder gradient is the weighted sum of the task gradients") {
    std::mt19937_64 rng(8);
    JointEncoderConfig cfg = xt::tiny_config();
    PretrainModel m(cfg, 4);
    const ModalBatch b = random_batch(cfg, 3, rng);
    auto encoder_grads = [&](const TaskWeights& tw) {
      m.parameters().zero_grad();
      Tape t;
      t.backward(m.forward(t, b, cfg.modality_weights, tw).combined);
      std::vector<Tensor> g;
      for (const auto& p : m.parameters())
        if (p->name().rfind("encoder.", 0) == 0) g.push_back(p->grad());
      return g;
    };
    const auto ga = encoder_grads({1.0, 0.0});
    const auto gp = encoder_grads({0.0, 1.0});
    const auto gm = encoder_grads({0.8, 0.2});
    double worst = 0.0;
    for (std::size_t i = 0; i < gm.size(); ++i)
      for (std::size_t j = 0; j < gm[i].size(); ++j)
        worst = std::max(worst, std::abs(gm[i][j] - (0.8 * ga[i][j] + 0.2 * gp[i][j])));
    CHECK(worst < 1e-10);
  }

  TEST_CASE("asr loss ignores right padding on targets") {
    std::mt19937_64 rng(9);
    JointEncoderConfig cfg = xt::tiny_config();
    PretrainModel m(cfg, 5);
    Tape t(false);
    const Var mem[] = {t.constant(random_tensor({4, 8}, rng)), t.constant(random_tensor({6, 8}, rng))};
    std::vector<std::vector<int>> tgt{letters().encode("abc"), letters().encode("b")};
    const double base = asr_loss(m.asr_head(), mem, tgt).loss.value().item();
    for (int pad = 1; pad <= 4; ++pad) {
      tgt[1].push_back(CharVocabulary::pad);
      const auto r = asr_loss(m.asr_head(), mem, tgt);
      CHECK(r.loss.value().item() == base);
      CHECK(r.count == 6);
    }
  }

  TEST_CASE("full pretraining graph passes grad_check") {
    std::mt19937_64 rng(10);
    JointEncoderConfig cfg = xt::tiny_config();
    PretrainModel m(cfg, 6);
    const ModalBatch b = random_batch(cfg, 2, rng);
    GradCheckOptions o;
    o.widen_small_gradients = true;
    const auto r = grad_check([&](Tape& t) { return m.forward(t, b).combined; }, m.parameters(), o);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.probes == m.parameters().total_size());
  }

  TEST_CASE("greedy decode budget and determinism") {
    std::mt19937_64 rng(11);
    JointEncoderConfig cfg = xt::tiny_config();
    PretrainModel m(cfg, 7);
    const Tensor mem = random_tensor({4, 8}, rng);
    const CharVocabulary v = letters();
    CHECK(greedy_decode(m.asr_head(), mem, v, 1).size() <= 1);
    CHECK(greedy_decode(m.asr_head(), mem, v, 10) == greedy_decode(m.asr_head(), mem, v, 10));
    CHECK(xt::error_kind([&] { greedy_decode(m.asr_head(), mem, v, 0); }) == ErrorKind::validation);
  }

  TEST_CASE("overfit: single utterance and a four-speaker toy corpus") {
    std::mt19937_64 rng(12);
    JointEncoderConfig cfg = xt::tiny_config();
    cfg.speaker_count = 0;

    const Dataset one = toy_dataset(cfg, 1, rng);
    TrainConfig tc = fast_train(150);
    tc.batch_size = 1;
    PretrainTrainer single(cfg, tc, one);
    for (std::size_t i = 0; i < tc.steps; ++i) single.step();
    std::vector<std::size_t> idx{0};
    const ModalBatch b = collate(one, idx);
    {
      Tape t(false);
      std::vector<Var> mem = encode_all(single.model(), t, b);
      const auto r = asr_loss(single.model().asr_head(), mem, b.asr_targets);
      CHECK(r.accuracy == 1.0);
      CHECK(r.loss.value().item() < 0.01);
      CHECK(greedy_decode(single.model().asr_head(), mem[0].value(), letters(), 20) == "abc");
    }

    const Dataset four = toy_dataset(cfg, 4, rng);
    PretrainTrainer toy(cfg, fast_train(300), four);
    for (std::size_t i = 0; i < 300; ++i) toy.step();
    const TaskLossBreakdown e = evaluate_pretrain(toy.model(), four);
    CHECK(e.speaker_accuracy == 1.0);
    CHECK(e.token_accuracy == 1.0);
  }
}
