#pragma once

#include <cstdint>
#include <filesystem>

#include "xmodal/config.hpp"
#include "xmodal/grad_check.hpp"
#include "xmodal/synthetic.hpp"

namespace xmodal {

/// The synthetic spec with feature dims taken from the model config.
SyntheticSpec synthetic_spec_for(const RunConfig& cfg);

/// A corpus turned into model-ready splits. `model` has vocab_size and
/// speaker_count filled in from the data.
struct PreparedCorpus {
  SyntheticCorpus corpus;
  JointEncoderConfig model;
  Dataset pretrain;
  Dataset train;
  Dataset dev;
  Dataset test;
};

PreparedCorpus prepare_corpus(SyntheticCorpus corpus, const JointEncoderConfig& model);
PreparedCorpus load_prepared_corpus(const std::filesystem::path& dir, const JointEncoderConfig& model);

/// Probe settings for the full-graph check: widened steps on tiny
/// gradients, 64 sampled entries per tensor (about 7k probes on desk-small).
GradCheckOptions full_graph_probe_options();

/// Finite-difference check of the whole pretraining graph (joint encoder,
/// ASR decoder, PID head) on a 2-example synthetic batch.
GradCheckReport pretrain_gradcheck(const JointEncoderConfig& model, const SyntheticSpec& spec,
                                   std::uint64_t seed, const GradCheckOptions& opts);

}  // namespace xmodal
