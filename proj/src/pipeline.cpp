#include "xmodal/pipeline.hpp"

#include <numeric>

#include "xmodal/error.hpp"

namespace xmodal {

SyntheticSpec synthetic_spec_for(const RunConfig& cfg) {
  SyntheticSpec s = cfg.synthetic;
  s.lfbe_dim = cfg.model.lfbe_dim;
  s.video_dim = cfg.model.video_dim;
  s.text_dim = cfg.model.text_dim;
  return s;
}

PreparedCorpus prepare_corpus(SyntheticCorpus corpus, const JointEncoderConfig& model) {
  PreparedCorpus p;
  p.corpus = std::move(corpus);
  p.model = model;
  p.model.vocab_size = p.corpus.vocab.size();
  const FeatureContext ctx{&p.corpus.embeddings, &p.corpus.vocab, model.stack_size};
  p.pretrain = prepare_dataset(p.corpus.pretrain, std::nullopt, ctx, p.model);
  p.train = prepare_dataset(p.corpus.downstream, Split::train, ctx, p.model);
  p.dev = prepare_dataset(p.corpus.downstream, Split::dev, ctx, p.model);
  p.test = prepare_dataset(p.corpus.downstream, Split::test, ctx, p.model);
  if (p.model.speaker_count == 0) p.model.speaker_count = std::max<std::size_t>(1, p.pretrain.speaker_count());
  return p;
}

PreparedCorpus load_prepared_corpus(const std::filesystem::path& dir, const JointEncoderConfig& model) {
  return prepare_corpus(load_corpus(dir), model);
}

GradCheckOptions full_graph_probe_options() {
  GradCheckOptions o;
  o.widen_small_gradients = true;
  o.max_probes_per_parameter = 64;
  return o;
}

GradCheckReport pretrain_gradcheck(const JointEncoderConfig& model, const SyntheticSpec& spec,
                                   std::uint64_t seed, const GradCheckOptions& opts) {
  SyntheticSpec s = spec;
  s.pretrain_size = 2;
  s.speakers = 2;
  s.train_size = s.dev_size = s.test_size = 0;
  PreparedCorpus p = prepare_corpus(generate_synthetic_corpus(s, seed), model);
  p.model.speaker_count = 2;
  PretrainModel m(p.model, seed);
  std::vector<std::size_t> idx(p.pretrain.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const ModalBatch batch = collate(p.pretrain, idx);
  return grad_check([&](Tape& tape) { return m.forward(tape, batch).combined; }, m.parameters(), opts);
}

}  // namespace xmodal
