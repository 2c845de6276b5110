#include <algorithm>
#include <cmath>
#include <numeric>

#include "support.hpp"
#include "xmodal/attention.hpp"

using namespace xmodal;
using xt::random_tensor;

namespace {

AttentionConfig small_cfg(std::size_t d = 8, std::size_t heads = 2) {
  AttentionConfig c;
  c.model_dim = d;
  c.heads = heads;
  c.ff_dim = 12;
  c.encoder_layers = c.crossmodal_layers = c.decoder_layers = 2;
  return c;
}

Tensor identity(std::size_t d) {
  Tensor t({d, d});
  for (std::size_t i = 0; i < d; ++i) t.at(i, i) = 1.0;
  return t;
}

// Copies every parameter of `src` named `from`+suffix into `dst` as `to`+suffix.
void copy_renamed(const ParameterSet& src, ParameterSet& dst, const std::string& from, const std::string& to) {
  for (const auto& p : src) {
    if (p->name().rfind(from, 0) != 0) continue;
    dst.at(to + p->name().substr(from.size())).assign(p->value());
  }
}

Var sum_all(Var y) {
  Tape& t = y.tape();
  const Tensor ones({1, y.value().size()}, 1.0);
  return reshape(matmul(t.constant(ones), reshape(y, {y.value().size(), 1})), {1});
}

}  // namespace

TEST_SUITE("attention") {
  TEST_CASE("config validation") {
    AttentionConfig c = small_cfg();
    c.model_dim = 510;
    c.heads = 4;
    CHECK(xt::error_kind([&] { c.validate(); }) == ErrorKind::config);
    c = AttentionConfig{};
    CHECK(c.model_dim == 512);
    CHECK(c.heads == 4);
    CHECK(c.ff_dim == 200);
    CHECK(c.encoder_layers == 4);
    CHECK(c.decoder_layers == 2);
    CHECK(c.crossmodal_layers == 4);
  }

  TEST_CASE("identical keys give uniform weights and the mean of V") {
    Tape t(false);
    const Tensor q = Tensor::matrix({{0.3, -1.2}, {2.0, 0.5}});
    const Tensor k = Tensor::matrix({{1, 2}, {1, 2}, {1, 2}, {1, 2}});
    const Tensor v = Tensor::matrix({{1, 0}, {3, 4}, {5, 8}, {0, 0}});
    auto r = scaled_dot_attention(t.constant(q), t.constant(k), t.constant(v),
                                  AttentionMask::key_padding(3, 4));
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 3; ++j) CHECK(r.weights.value().at(i, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
      CHECK(r.weights.value().at(i, 3) == 0.0);
      CHECK(r.output.value().at(i, 0) == doctest::Approx(3.0).epsilon(1e-14));
      CHECK(r.output.value().at(i, 1) == doctest::Approx(4.0).epsilon(1e-14));
    }
  }

  TEST_CASE("two-key scalar oracle") {
    Tape t(false);
    auto r = scaled_dot_attention(t.constant(Tensor::matrix({{1, 0}})), t.constant(Tensor::matrix({{1, 0}, {0, 1}})),
                                  t.constant(Tensor::matrix({{1}, {0}})));
    const double s = 1.0 / std::sqrt(2.0);
    const double w0 = std::exp(s) / (std::exp(s) + 1.0);
    CHECK(std::abs(r.weights.value()[0] - w0) < 1e-15);
    CHECK(std::abs(r.weights.value()[1] - (1 - w0)) < 1e-15);
    CHECK(r.weights.value()[0] == doctest::Approx(0.6698).epsilon(1e-4));
    CHECK(r.weights.value()[1] == doctest::Approx(0.3302).epsilon(1e-4));
  }

  TEST_CASE("causal mask: position 0 sees only key 0") {
    std::mt19937_64 rng(1);
    Tape t(false);
    const Tensor x = random_tensor({5, 4}, rng);
    auto r = scaled_dot_attention(t.constant(x), t.constant(x), t.constant(x), AttentionMask::causal());
    CHECK(r.weights.value().at(0, 0) == 1.0);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = i + 1; j < 5; ++j) CHECK(r.weights.value().at(i, j) == 0.0);
  }

  TEST_CASE("fully masked row is an error") {
    Tape t(false);
    const Tensor x({2, 2}, 1.0);
    CHECK(xt::error_kind([&] {
            scaled_dot_attention(t.constant(x), t.constant(x), t.constant(x),
                                 AttentionMask::key_padding(std::vector<std::uint8_t>{0, 0}));
          }) == ErrorKind::degenerate_mask);
  }

  TEST_CASE("rows sum to one and masked keys get zero weight") {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<std::size_t> len(1, 9);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t nq = len(rng), nk = len(rng), d = len(rng);
      std::uniform_int_distribution<std::size_t> valid_d(1, nk);
      const std::size_t valid = valid_d(rng);
      Tape t(false);
      auto r = scaled_dot_attention(t.constant(random_tensor({nq, d}, rng, 3.0)),
                                    t.constant(random_tensor({nk, d}, rng, 3.0)),
                                    t.constant(random_tensor({nk, 2}, rng)), AttentionMask::key_padding(valid, nk));
      const Tensor& w = r.weights.value();
      for (std::size_t i = 0; i < nq; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < nk; ++j) s += w.at(i, j);
        CHECK(std::abs(s - 1.0) < 1e-6);
        for (std::size_t j = valid; j < nk; ++j) CHECK(w.at(i, j) == 0.0);
      }
    }
  }

  TEST_CASE("permuting keys with their mask permutes the weights") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t nk = 6;
      const Tensor q = random_tensor({3, 4}, rng), k = random_tensor({nk, 4}, rng), v = random_tensor({nk, 2}, rng);
      std::vector<std::uint8_t> valid{1, 0, 1, 1, 0, 1};
      std::vector<std::size_t> perm(nk);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      Tensor kp({nk, 4}), vp({nk, 2});
      std::vector<std::uint8_t> validp(nk);
      for (std::size_t j = 0; j < nk; ++j) {
        for (std::size_t c = 0; c < 4; ++c) kp.at(j, c) = k.at(perm[j], c);
        for (std::size_t c = 0; c < 2; ++c) vp.at(j, c) = v.at(perm[j], c);
        validp[j] = valid[perm[j]];
      }
      Tape t(false);
      auto a = scaled_dot_attention(t.constant(q), t.constant(k), t.constant(v), AttentionMask::key_padding(valid));
      auto b = scaled_dot_attention(t.constant(q), t.constant(kp), t.constant(vp), AttentionMask::key_padding(validp));
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < nk; ++j)
          CHECK(std::abs(b.weights.value().at(i, j) - a.weights.value().at(i, perm[j])) < 1e-14);
      CHECK(max_abs_diff(a.output.value(), b.output.value()) < 1e-13);
    }
  }

  TEST_CASE("single head with identity projections reduces to scaled_dot_attention") {
    std::mt19937_64 rng(2);
    ParameterSet ps;
    MultiHeadAttention mha(ps, "mha", 4, 1, rng);
    for (auto* lin : {&mha.query_proj(), &mha.key_proj(), &mha.value_proj(), &mha.output_proj()})
      lin->weight().assign(identity(4));
    mha.output_proj().bias()->assign(Tensor({4}));
    Tape t(false);
    const Tensor q = random_tensor({3, 4}, rng), m = random_tensor({5, 4}, rng);
    const Var out = mha(t.constant(q), t.constant(m), AttentionMask::key_padding(4, 5));
    const auto ref = scaled_dot_attention(t.constant(q), t.constant(m), t.constant(m), AttentionMask::key_padding(4, 5));
    CHECK(max_abs_diff(out.value(), ref.output.value()) < 1e-14);
  }

  TEST_CASE("multi-head shape and zero output projection") {
    std::mt19937_64 rng(3);
    ParameterSet ps;
    MultiHeadAttention mha(ps, "mha", 8, 4, rng);
    Tape t(false);
    const Tensor q = random_tensor({3, 8}, rng), m = random_tensor({6, 8}, rng);
    std::vector<Tensor> weights;
    const Var out = mha(t.constant(q), t.constant(m), {}, &weights);
    CHECK(out.shape() == Shape{3, 8});
    CHECK(weights.size() == 4);
    mha.output_proj().weight().assign(Tensor({8, 8}));
    mha.output_proj().bias()->assign(Tensor({8}));
    Tape fresh(false);
    const Var zero = mha(fresh.constant(random_tensor({3, 8}, rng, 5.0)), fresh.constant(m), {});
    for (double v : zero.value().values()) CHECK(v == 0.0);
  }

  TEST_CASE("encoder layer: zero weights give the residual identity") {
    std::mt19937_64 rng(4);
    ParameterSet ps;
    EncoderLayer layer(ps, "enc", small_cfg(), rng);
    for (auto& p : ps) p->assign(Tensor(p->value().shape()));
    Tape t(false);
    const Tensor x = random_tensor({5, 8}, rng);
    CHECK(layer(t.constant(x)).value() == x);

    ParameterSet fresh;
    EncoderLayer live(fresh, "enc", small_cfg(), rng);
    const Var y = live(t.constant(x));
    CHECK(y.shape() == Shape{5, 8});
    CHECK(y.value().all_finite());
  }

  TEST_CASE("four stacked encoder layers pass grad_check") {
    std::mt19937_64 rng(6);
    ParameterSet ps;
    AttentionConfig cfg = small_cfg();
    std::vector<EncoderLayer> layers;
    for (int i = 0; i < 4; ++i) layers.emplace_back(ps, "enc" + std::to_string(i), cfg, rng);
    const Tensor x = random_tensor({4, 8}, rng);
    const Tensor w = random_tensor({4, 8}, rng);
    const double err = xt::max_rel_error([&](Tape& t) {
      Var h = t.constant(x);
      for (const auto& l : layers) h = l(h, AttentionMask::key_padding(3, 4));
      return sum_all(matmul_nt(reshape(h, {1, 32}), t.constant(w.reshaped({1, 32}))));
    }, ps);
    CHECK(err < 1e-4);
  }

  TEST_CASE("cross-modal layer keeps the target length") {
    std::mt19937_64 rng(8);
    ParameterSet ps;
    CrossModalLayer layer(ps, "x", small_cfg(), rng);
    Tape t(false);
    const Tensor target = random_tensor({6, 8}, rng);
    CHECK(layer(t.constant(target), t.constant(random_tensor({3, 8}, rng))).shape() == Shape{6, 8});
    for (std::size_t ns = 1; ns <= 64; ++ns) {
      const Var out = layer(t.constant(target), t.constant(random_tensor({ns, 8}, rng)));
      CHECK(out.shape() == Shape{6, 8});
    }
  }

  TEST_CASE("cross-modal layer with a single source key attends with weight one") {
    std::mt19937_64 rng(9);
    ParameterSet ps;
    MultiHeadAttention mha(ps, "a", 8, 2, rng);
    Tape t(false);
    std::vector<Tensor> weights;
    mha(t.constant(random_tensor({5, 8}, rng)), t.constant(random_tensor({1, 8}, rng)), {}, &weights);
    for (const auto& w : weights)
      for (double v : w.values()) CHECK(v == 1.0);
  }

  TEST_CASE("cross-modal layer on its own target equals an encoder layer") {
    std::mt19937_64 rng(10);
    ParameterSet xps, eps;
    CrossModalLayer cross(xps, "x", small_cfg(), rng);
    EncoderLayer enc(eps, "e", small_cfg(), rng);
    copy_renamed(xps, eps, "x.target_norm", "e.attn_norm");
    copy_renamed(xps, eps, "x.cross_attn", "e.self_attn");
    copy_renamed(xps, eps, "x.ff_norm", "e.ff_norm");
    copy_renamed(xps, eps, "x.ff.", "e.ff.");
    Tape t(false);
    const Tensor x = random_tensor({5, 8}, rng);
    CHECK(max_abs_diff(cross(t.constant(x), t.constant(x)).value(), enc(t.constant(x)).value()) < 1e-14);
  }

  TEST_CASE("decoder causality") {
    std::mt19937_64 rng(12);
    ParameterSet ps;
    DecoderStack dec(ps, "dec", small_cfg(), 2, rng);
    const Tensor memory = random_tensor({7, 8}, rng);
    for (int trial = 0; trial < 10; ++trial) {
      Tensor y = random_tensor({6, 8}, rng);
      Tape t(false);
      const Tensor before = dec(t.constant(y), t.constant(memory)).value();
      const std::size_t pos = 1 + trial % 5;
      for (std::size_t c = 0; c < 8; ++c) y.at(pos, c) += 10.0 * (c + 1);
      const Tensor after = dec(t.constant(y), t.constant(memory)).value();
      for (std::size_t i = 0; i < pos; ++i)
        for (std::size_t c = 0; c < 8; ++c) CHECK(before.at(i, c) == after.at(i, c));
      bool changed = false;
      for (std::size_t c = 0; c < 8; ++c) changed |= before.at(pos, c) != after.at(pos, c);
      CHECK(changed);
    }
  }

  TEST_CASE("decoder with a dead cross-attention path is causal self-attention plus FFN") {
    std::mt19937_64 rng(13);
    ParameterSet dps, eps;
    DecoderLayer dec(dps, "d", small_cfg(), rng);
    EncoderLayer enc(eps, "e", small_cfg(), rng);
    dec.cross_attention().value_proj().weight().assign(Tensor({8, 8}));
    dec.cross_attention().output_proj().bias()->assign(Tensor({8}));
    copy_renamed(dps, eps, "d.self_norm", "e.attn_norm");
    copy_renamed(dps, eps, "d.self_attn", "e.self_attn");
    copy_renamed(dps, eps, "d.ff_norm", "e.ff_norm");
    copy_renamed(dps, eps, "d.ff.", "e.ff.");
    Tape t(false);
    const Tensor y = random_tensor({5, 8}, rng);
    const Tensor out = dec(t.constant(y), t.constant(Tensor({4, 8}))).value();
    CHECK(max_abs_diff(out, enc(t.constant(y), AttentionMask::causal()).value()) < 1e-14);
  }

  TEST_CASE("two-layer decoder stack passes grad_check") {
    std::mt19937_64 rng(14);
    ParameterSet ps;
    DecoderStack dec(ps, "dec", small_cfg(), 2, rng);
    Parameter& mem = ps.add("memory", random_tensor({5, 8}, rng));
    const Tensor y = random_tensor({4, 8}, rng);
    const Tensor w = random_tensor({1, 32}, rng);
    const double err = xt::max_rel_error([&](Tape& t) {
      const Var h = dec(t.constant(y), t.parameter(mem), AttentionMask::key_padding(4, 5));
      return sum_all(matmul_nt(reshape(h, {1, 32}), t.constant(w)));
    }, ps);
    CHECK(err < 1e-4);
  }

  TEST_CASE("positional encoding") {
    const Tensor pe = positional_encoding(50, 16);
    for (std::size_t c = 0; c < 16; ++c) CHECK(pe.at(0, c) == (c % 2 == 0 ? 0.0 : 1.0));
    for (double v : pe.values()) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
    CHECK(pe == positional_encoding(50, 16));
    CHECK(pe.at(3, 2) == doctest::Approx(std::sin(3.0 / std::pow(10000.0, 2.0 / 16.0))));
    CHECK(pe.at(3, 3) == doctest::Approx(std::cos(3.0 / std::pow(10000.0, 2.0 / 16.0))));
  }
}
