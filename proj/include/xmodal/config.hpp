#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xmodal/joint_encoder.hpp"
#include "xmodal/synthetic.hpp"
#include "xmodal/train.hpp"

namespace xmodal {

/// Everything a CLI run needs. Text form is `key = value` lines with `#`
/// comments; keys are grouped as model.*, weights.*, pretrain.*,
/// finetune.*, synthetic.* and paths.*.
struct RunConfig {
  std::string preset = "desk-small";
  JointEncoderConfig model;
  TrainConfig pretrain;
  TrainConfig finetune;
  SyntheticSpec synthetic;
  std::string data_dir;
  std::string out_dir;
  std::string checkpoint;

  void validate() const;
};

/// Ordered `key = value` pairs. Duplicate keys are an error.
using KeyValues = std::vector<std::pair<std::string, std::string>>;
KeyValues parse_key_values(const std::string& text, const std::string& origin = "config");

std::vector<std::string> preset_names();
RunConfig preset(const std::string& name);

/// Applies pairs on top of `cfg`; unknown keys and bad values are config
/// errors naming the key.
void apply_key_values(RunConfig& cfg, const KeyValues& kv);

/// Complete config, every key in a fixed order.
std::string format_run_config(const RunConfig& cfg);
RunConfig parse_run_config(const std::string& text);

/// Just the model.* and weights.* keys (checkpoint CONF block).
std::string format_model_config(const JointEncoderConfig& cfg);
JointEncoderConfig parse_model_config(const std::string& text);

struct ConfigOverrides {
  std::optional<std::string> preset;
  std::optional<std::string> config_file;
  KeyValues flags;  // already mapped to config keys
};

/// Preset, then file, then flags; the result is validated. A `preset`
/// key in the file selects the base preset unless --preset was given.
RunConfig resolve_config(const ConfigOverrides& o);

/// Parsers shared with the CLI.
std::vector<double> parse_number_list(const std::string& text, const std::string& key);
ModalityWeights parse_modality_weights(const std::string& text, const std::string& key);
TaskWeights parse_task_weights(const std::string& text, const std::string& key);

}  // namespace xmodal
