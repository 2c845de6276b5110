#include "xmodal/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <fstream>
#include <set>
#include <sstream>

#include "xmodal/error.hpp"
#include "xmodal/features.hpp"

namespace xmodal {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& v, const std::string& key) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    fail(ErrorKind::config, key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    fail(ErrorKind::config, key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_real(const std::string& v, const std::string& key) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
    fail(ErrorKind::config, key + ": expected a finite number, got '" + v + "'");
  }
  return out;
}

std::string join(const std::vector<double>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + format_double(xs[i]);
  return s;
}

struct Binding {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Access>
Binding size_key(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); },
          [access, key](RunConfig& c, const std::string& v) { access(c) = parse_size(v, key); }};
}

template <typename Access>
Binding u64_key(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); },
          [access, key](RunConfig& c, const std::string& v) { access(c) = parse_u64(v, key); }};
}

template <typename Access>
Binding real_key(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return format_double(access(const_cast<RunConfig&>(c))); },
          [access, key](RunConfig& c, const std::string& v) { access(c) = parse_real(v, key); }};
}

template <typename Access>
Binding string_key(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)); },
          [access](RunConfig& c, const std::string& v) { access(c) = v; }};
}

std::string format_modality(const ModalityWeights& w) { return join({w.audio, w.video, w.text}); }

void add_train_keys(std::vector<Binding>& b, const std::string& section, TrainConfig RunConfig::*member) {
  auto t = [member](RunConfig& c) -> TrainConfig& { return c.*member; };
  b.push_back(size_key(section + ".steps", [t](RunConfig& c) -> auto& { return t(c).steps; }));
  b.push_back(size_key(section + ".batch_size", [t](RunConfig& c) -> auto& { return t(c).batch_size; }));
  b.push_back(size_key(section + ".warmup", [t](RunConfig& c) -> auto& { return t(c).warmup; }));
  b.push_back(real_key(section + ".lr_scale", [t](RunConfig& c) -> auto& { return t(c).lr_scale; }));
  b.push_back(real_key(section + ".beta1", [t](RunConfig& c) -> auto& { return t(c).adam.beta1; }));
  b.push_back(real_key(section + ".beta2", [t](RunConfig& c) -> auto& { return t(c).adam.beta2; }));
  b.push_back(real_key(section + ".epsilon", [t](RunConfig& c) -> auto& { return t(c).adam.epsilon; }));
  b.push_back(real_key(section + ".clip_norm", [t](RunConfig& c) -> auto& { return t(c).clip_norm; }));
  b.push_back(u64_key(section + ".seed", [t](RunConfig& c) -> auto& { return t(c).seed; }));
  b.push_back(size_key(section + ".eval_every", [t](RunConfig& c) -> auto& { return t(c).eval_every; }));
  b.push_back(size_key(section + ".runs", [t](RunConfig& c) -> auto& { return t(c).runs; }));
}

std::vector<Binding> model_bindings() {
  std::vector<Binding> b;
  b.push_back(size_key("model.d_model", [](RunConfig& c) -> auto& { return c.model.attention.model_dim; }));
  b.push_back(size_key("model.heads", [](RunConfig& c) -> auto& { return c.model.attention.heads; }));
  b.push_back(size_key("model.ff_dim", [](RunConfig& c) -> auto& { return c.model.attention.ff_dim; }));
  b.push_back(size_key("model.encoder_layers", [](RunConfig& c) -> auto& { return c.model.attention.encoder_layers; }));
  b.push_back(size_key("model.crossmodal_layers", [](RunConfig& c) -> auto& { return c.model.attention.crossmodal_layers; }));
  b.push_back(size_key("model.decoder_layers", [](RunConfig& c) -> auto& { return c.model.attention.decoder_layers; }));
  b.push_back(real_key("model.layer_norm_eps", [](RunConfig& c) -> auto& { return c.model.attention.layer_norm_eps; }));
  b.push_back(size_key("model.lfbe_dim", [](RunConfig& c) -> auto& { return c.model.lfbe_dim; }));
  b.push_back(size_key("model.stack_size", [](RunConfig& c) -> auto& { return c.model.stack_size; }));
  b.push_back(size_key("model.video_dim", [](RunConfig& c) -> auto& { return c.model.video_dim; }));
  b.push_back(size_key("model.text_dim", [](RunConfig& c) -> auto& { return c.model.text_dim; }));
  b.push_back(size_key("model.vocab_size", [](RunConfig& c) -> auto& { return c.model.vocab_size; }));
  b.push_back(size_key("model.speaker_count", [](RunConfig& c) -> auto& { return c.model.speaker_count; }));
  b.push_back({"weights.modality", [](const RunConfig& c) { return format_modality(c.model.modality_weights); },
               [](RunConfig& c, const std::string& v) {
                 c.model.modality_weights = parse_modality_weights(v, "weights.modality");
               }});
  b.push_back({"weights.finetune_modality",
               [](const RunConfig& c) { return format_modality(c.model.finetune_weights); },
               [](RunConfig& c, const std::string& v) {
                 c.model.finetune_weights = parse_modality_weights(v, "weights.finetune_modality");
               }});
  b.push_back({"weights.task",
               [](const RunConfig& c) { return join({c.model.task_weights.asr, c.model.task_weights.pid}); },
               [](RunConfig& c, const std::string& v) { c.model.task_weights = parse_task_weights(v, "weights.task"); }});
  return b;
}

std::vector<Binding> all_bindings() {
  std::vector<Binding> b;
  b.push_back(string_key("preset", [](RunConfig& c) -> auto& { return c.preset; }));
  for (auto& m : model_bindings()) b.push_back(std::move(m));
  add_train_keys(b, "pretrain", &RunConfig::pretrain);
  add_train_keys(b, "finetune", &RunConfig::finetune);
  auto s = [](RunConfig& c) -> SyntheticSpec& { return c.synthetic; };
  b.push_back(size_key("synthetic.speakers", [s](RunConfig& c) -> auto& { return s(c).speakers; }));
  b.push_back(size_key("synthetic.downstream_speakers", [s](RunConfig& c) -> auto& { return s(c).downstream_speakers; }));
  b.push_back(size_key("synthetic.vocab_size", [s](RunConfig& c) -> auto& { return s(c).vocab_size; }));
  b.push_back(size_key("synthetic.lexicon_size", [s](RunConfig& c) -> auto& { return s(c).lexicon_size; }));
  b.push_back(size_key("synthetic.synonyms", [s](RunConfig& c) -> auto& { return s(c).synonyms; }));
  b.push_back(size_key("synthetic.min_word_length", [s](RunConfig& c) -> auto& { return s(c).min_word_length; }));
  b.push_back(size_key("synthetic.max_word_length", [s](RunConfig& c) -> auto& { return s(c).max_word_length; }));
  b.push_back(size_key("synthetic.min_fillers", [s](RunConfig& c) -> auto& { return s(c).min_fillers; }));
  b.push_back(size_key("synthetic.max_fillers", [s](RunConfig& c) -> auto& { return s(c).max_fillers; }));
  b.push_back(size_key("synthetic.min_frames_per_char", [s](RunConfig& c) -> auto& { return s(c).min_frames_per_char; }));
  b.push_back(size_key("synthetic.max_frames_per_char", [s](RunConfig& c) -> auto& { return s(c).max_frames_per_char; }));
  b.push_back(size_key("synthetic.min_video_frames", [s](RunConfig& c) -> auto& { return s(c).min_video_frames; }));
  b.push_back(size_key("synthetic.max_video_frames", [s](RunConfig& c) -> auto& { return s(c).max_video_frames; }));
  b.push_back(real_key("synthetic.audio_strength", [s](RunConfig& c) -> auto& { return s(c).audio_strength; }));
  b.push_back(real_key("synthetic.video_strength", [s](RunConfig& c) -> auto& { return s(c).video_strength; }));
  b.push_back(real_key("synthetic.text_strength", [s](RunConfig& c) -> auto& { return s(c).text_strength; }));
  b.push_back(real_key("synthetic.noise", [s](RunConfig& c) -> auto& { return s(c).noise; }));
  b.push_back(real_key("synthetic.speaker_strength", [s](RunConfig& c) -> auto& { return s(c).speaker_strength; }));
  b.push_back({"synthetic.prevalence",
               [](const RunConfig& c) {
                 return join(std::vector<double>(c.synthetic.prevalence.begin(), c.synthetic.prevalence.end()));
               },
               [](RunConfig& c, const std::string& v) {
                 const auto xs = parse_number_list(v, "synthetic.prevalence");
                 if (xs.size() != 6) fail(ErrorKind::config, "synthetic.prevalence: expected 6 values");
                 std::copy(xs.begin(), xs.end(), c.synthetic.prevalence.begin());
               }});
  b.push_back(size_key("synthetic.pretrain_size", [s](RunConfig& c) -> auto& { return s(c).pretrain_size; }));
  b.push_back(size_key("synthetic.train_size", [s](RunConfig& c) -> auto& { return s(c).train_size; }));
  b.push_back(size_key("synthetic.dev_size", [s](RunConfig& c) -> auto& { return s(c).dev_size; }));
  b.push_back(size_key("synthetic.test_size", [s](RunConfig& c) -> auto& { return s(c).test_size; }));
  b.push_back(u64_key("synthetic.embedding_seed", [s](RunConfig& c) -> auto& { return s(c).embedding_seed; }));
  b.push_back(string_key("paths.data", [](RunConfig& c) -> auto& { return c.data_dir; }));
  b.push_back(string_key("paths.out", [](RunConfig& c) -> auto& { return c.out_dir; }));
  b.push_back(string_key("paths.checkpoint", [](RunConfig& c) -> auto& { return c.checkpoint; }));
  return b;
}

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> b = all_bindings();
  return b;
}

const Binding* find_binding(const std::string& key) {
  for (const auto& b : bindings())
    if (b.key == key) return &b;
  return nullptr;
}

std::string format_bindings(const RunConfig& cfg, bool model_only) {
  std::ostringstream os;
  std::string section;
  for (const auto& b : bindings()) {
    const bool model_key = b.key.starts_with("model.") || b.key.starts_with("weights.");
    if (model_only && !model_key) continue;
    const std::string sec = b.key.substr(0, b.key.find('.'));
    if (!model_only && sec != section && !section.empty()) os << '\n';
    section = sec;
    os << b.key << " = " << b.get(cfg) << '\n';
  }
  return os.str();
}

// Small enough to train on a laptop CPU in minutes.
RunConfig desk_small() {
  RunConfig c;
  c.preset = "desk-small";
  auto& a = c.model.attention;
  a.model_dim = 32;
  a.heads = 4;
  a.ff_dim = 64;
  a.encoder_layers = 2;
  a.crossmodal_layers = 2;
  a.decoder_layers = 2;
  c.model.video_dim = 16;
  c.pretrain.steps = 1500;
  c.pretrain.batch_size = 8;
  c.pretrain.warmup = 200;
  c.pretrain.lr_scale = 1.0;
  c.pretrain.eval_every = 100;
  c.finetune.steps = 200;
  c.finetune.batch_size = 8;
  c.finetune.warmup = 50;
  c.finetune.lr_scale = 1.0;
  c.finetune.eval_every = 50;
  c.finetune.runs = 5;
  return c;
}

RunConfig paper_pretrain() {
  RunConfig c;
  c.preset = "paper-pretrain";
  auto& a = c.model.attention;
  a.model_dim = 512;
  a.heads = 4;
  a.ff_dim = 200;
  a.encoder_layers = 4;
  a.crossmodal_layers = 4;
  a.decoder_layers = 2;
  c.model.lfbe_dim = 40;
  c.model.stack_size = 5;
  c.model.video_dim = 4096;
  c.model.text_dim = 300;
  c.model.modality_weights = {0.4, 0.4, 0.2};
  c.model.finetune_weights = ModalityWeights::equal();
  c.model.task_weights = {0.8, 0.2};
  c.pretrain.steps = 100000;
  c.pretrain.batch_size = 32;
  c.pretrain.warmup = 4000;
  c.finetune.steps = 10000;
  c.finetune.batch_size = 32;
  c.finetune.warmup = 1000;
  c.finetune.eval_every = 500;
  c.finetune.runs = 10;
  return c;
}

}  // namespace

std::vector<double> parse_number_list(const std::string& text, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_real(trim(item), key));
  if (out.empty()) fail(ErrorKind::config, key + ": empty list");
  return out;
}

ModalityWeights parse_modality_weights(const std::string& text, const std::string& key) {
  const auto xs = parse_number_list(text, key);
  if (xs.size() != 3) fail(ErrorKind::config, key + ": expected audio,video,text");
  ModalityWeights w{xs[0], xs[1], xs[2]};
  for (double x : xs) {
    if (x < 0.0) fail(ErrorKind::config, key + ": weights must be non-negative");
  }
  return w;
}

TaskWeights parse_task_weights(const std::string& text, const std::string& key) {
  const auto xs = parse_number_list(text, key);
  if (xs.size() != 2) fail(ErrorKind::config, key + ": expected asr,pid");
  return {xs[0], xs[1]};
}

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues out;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::config, origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(ErrorKind::config, origin + ":" + std::to_string(lineno) + ": missing key");
    if (!seen.insert(key).second) {
      fail(ErrorKind::config, origin + ":" + std::to_string(lineno) + ": duplicate key " + key);
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::vector<std::string> preset_names() { return {"desk-small", "paper-pretrain"}; }

RunConfig preset(const std::string& name) {
  if (name == "desk-small") return desk_small();
  if (name == "paper-pretrain") return paper_pretrain();
  fail(ErrorKind::config, "unknown preset '" + name + "' (known: desk-small, paper-pretrain)");
}

void apply_key_values(RunConfig& cfg, const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    const Binding* b = find_binding(key);
    if (!b) fail(ErrorKind::config, "unknown config key '" + key + "'");
    b->set(cfg, value);
  }
}

void RunConfig::validate() const {
  model.validate();
  const auto& w = model.modality_weights;
  if (w.audio + w.video + w.text <= 0.0) fail(ErrorKind::config, "weights.modality: all weights are zero");
  const auto& f = model.finetune_weights;
  if (f.audio + f.video + f.text <= 0.0) fail(ErrorKind::config, "weights.finetune_modality: all weights are zero");
  pretrain.validate("pretrain");
  finetune.validate("finetune");
  try {
    synthetic.validate();
  } catch (const Error& e) {
    fail(ErrorKind::config, std::string("synthetic: ") + e.what());
  }
}

std::string format_run_config(const RunConfig& cfg) { return format_bindings(cfg, false); }

RunConfig parse_run_config(const std::string& text) {
  const KeyValues kv = parse_key_values(text);
  RunConfig cfg;
  for (const auto& [k, v] : kv)
    if (k == "preset") cfg = preset(v);
  apply_key_values(cfg, kv);
  return cfg;
}

std::string format_model_config(const JointEncoderConfig& cfg) {
  RunConfig rc;
  rc.model = cfg;
  return format_bindings(rc, true);
}

JointEncoderConfig parse_model_config(const std::string& text) {
  RunConfig rc;
  for (const auto& [k, v] : parse_key_values(text, "model config")) {
    if (!k.starts_with("model.") && !k.starts_with("weights.")) {
      fail(ErrorKind::config, "unexpected key '" + k + "' in model config");
    }
    apply_key_values(rc, {{k, v}});
  }
  return rc.model;
}

RunConfig resolve_config(const ConfigOverrides& o) {
  KeyValues file;
  std::string base = "desk-small";
  if (o.config_file) {
    std::ifstream is(*o.config_file);
    if (!is) fail(ErrorKind::config, "cannot read config file " + *o.config_file);
    std::stringstream ss;
    ss << is.rdbuf();
    file = parse_key_values(ss.str(), *o.config_file);
    for (const auto& [k, v] : file)
      if (k == "preset") base = v;
  }
  if (o.preset) base = *o.preset;
  RunConfig cfg = preset(base);
  KeyValues rest;
  for (auto& kv : file)
    if (kv.first != "preset") rest.push_back(kv);
  apply_key_values(cfg, rest);
  apply_key_values(cfg, o.flags);
  cfg.preset = base;
  cfg.validate();
  return cfg;
}

}  // namespace xmodal
