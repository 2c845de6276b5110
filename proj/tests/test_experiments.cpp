// Small training runs on planted-signal corpora. Slow (about a minute).

#include "support.hpp"
#include "xmodal/pipeline.hpp"
#include "xmodal/train.hpp"

using namespace xmodal;

namespace {

double mean_first_interval(const FinetuneResult& r, std::size_t every) {
  double s = 0.0;
  for (std::size_t i = 0; i < every; ++i) s += r.trace[i].loss;
  return s / static_cast<double>(every);
}

}  // namespace

TEST_SUITE("experiments") {
  TEST_CASE("random init learns a nearly separable corpus") {
    const RunConfig cfg = preset("desk-small");
    SyntheticSpec spec = synthetic_spec_for(cfg);
    spec.noise = 0.05;
    spec.pretrain_size = 16;
    spec.test_size = 300;
    const PreparedCorpus p = prepare_corpus(generate_synthetic_corpus(spec, 4), cfg.model);

    const FinetuneResult r = finetune_run(p.model, cfg.finetune, p.train, p.dev, nullptr, 1);
    CHECK(r.dev_reports.back().mean_wa > 0.9);

    const ModalityWeights full = p.model.finetune_weights;
    const EvalReport test = evaluate_model(*r.model, p.test, p.dev, full);
    CHECK(test.mean_wa > 0.9);
    CHECK(test.mean_f1 > 0.9);

    // text carries the strongest planted signal
    const EvalReport a = evaluate_model(*r.model, p.test, p.dev, ablation_weights("A", full));
    const EvalReport at = evaluate_model(*r.model, p.test, p.dev, ablation_weights("A+T", full));
    CHECK(at.mean_wa > a.mean_wa);
  }

  TEST_CASE("pretrained encoder starts fine-tuning from a lower loss") {
    const RunConfig cfg = preset("desk-small");
    const PreparedCorpus p = prepare_corpus(generate_synthetic_corpus(synthetic_spec_for(cfg), 2), cfg.model);
    const Checkpoint pre = pretrain_run(p.model, cfg.pretrain, p.pretrain, 2).checkpoint;

    TrainConfig tc = cfg.finetune;
    tc.steps = tc.eval_every;
    int lower = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const double a = mean_first_interval(finetune_run(p.model, tc, p.train, p.dev, &pre, seed), tc.eval_every);
      const double b = mean_first_interval(finetune_run(p.model, tc, p.train, p.dev, nullptr, seed), tc.eval_every);
      MESSAGE("seed " << seed << ": pretrained " << a << ", random " << b);
      lower += a < b;
    }
    CHECK(lower >= 3);
  }
}
