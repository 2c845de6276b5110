#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xmodal/joint_encoder.hpp"

namespace xmodal {

struct NamedTensor {
  std::string name;
  Tensor value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<NamedTensor> first_moment;
  std::vector<NamedTensor> second_moment;
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Everything needed to resume training or to seed fine-tuning.
///
/// File layout: magic "XMCK", u32 major, u32 minor, then tagged sections
/// (4-byte tag, u64 byte length, payload) in little-endian order. Readers
/// skip tags they do not know, so minor versions stay compatible.
///   CONF  model config as key = value text
///   META  key = value text (model kind, step, seed, ...)
///   PARM  named tensor table, f64 payloads
///   OPTM  u64 step, then first- and second-moment tables
///   RNGS  sampler state text
struct Checkpoint {
  static constexpr std::uint32_t kMajor = 1;
  static constexpr std::uint32_t kMinor = 0;

  std::string model_kind;  // "pretrain" or "emotion"
  JointEncoderConfig config;
  std::vector<NamedTensor> parameters;
  OptimizerState optimizer;
  std::string rng_state;
  std::map<std::string, std::string> metadata;

  const Tensor* find_parameter(const std::string& name) const;
};

std::vector<NamedTensor> snapshot_parameters(const ParameterSet& params);
/// Copies every stored tensor into the matching parameter; all names and
/// shapes must line up.
void restore_parameters(ParameterSet& params, const std::vector<NamedTensor>& stored);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Encoder-relevant config fields that differ, formatted "key: a vs b".
std::vector<std::string> architecture_differences(const JointEncoderConfig& stored,
                                                  const JointEncoderConfig& wanted);

}  // namespace xmodal
