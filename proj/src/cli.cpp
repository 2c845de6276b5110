#include "xmodal/cli.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "xmodal/checkpoint.hpp"
#include "xmodal/config.hpp"
#include "xmodal/error.hpp"
#include "xmodal/eval.hpp"
#include "xmodal/pipeline.hpp"
#include "xmodal/train.hpp"

namespace xmodal {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

struct Flags {
  std::string preset, config, out, checkpoint, data, task_weights, modality_weights;
  std::uint64_t seed = 0;
  std::size_t runs = 0;
  bool pretty = false;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* runs_opt = nullptr;
};

enum Opt : unsigned {
  kPreset = 1, kConfig = 2, kSeed = 4, kOut = 8, kCheckpoint = 16, kData = 32,
  kTaskWeights = 64, kModalityWeights = 128, kRuns = 256, kPretty = 512,
};

void add_options(CLI::App* app, Flags& f, unsigned which) {
  if (which & kPreset) app->add_option("--preset", f.preset, "desk-small or paper-pretrain");
  if (which & kConfig) app->add_option("--config", f.config, "key = value config file");
  if (which & kSeed) f.seed_opt = app->add_option("--seed", f.seed, "random seed");
  if (which & kOut) app->add_option("--out", f.out, "output directory");
  if (which & kCheckpoint) app->add_option("--checkpoint", f.checkpoint, "checkpoint file");
  if (which & kData) app->add_option("--data", f.data, "corpus directory");
  if (which & kTaskWeights) app->add_option("--task-weights", f.task_weights, "asr,pid");
  if (which & kModalityWeights) app->add_option("--modality-weights", f.modality_weights, "audio,video,text");
  if (which & kRuns) f.runs_opt = app->add_option("--runs", f.runs, "number of fine-tuning runs");
  if (which & kPretty) app->add_flag("--pretty", f.pretty, "human-readable tables");
}

[[noreturn]] void usage(const std::string& msg) { fail(ErrorKind::usage, msg); }

RunConfig resolve(const Flags& f, const std::string& seed_key, const std::string& weights_key) {
  ConfigOverrides o;
  if (!f.preset.empty()) o.preset = f.preset;
  if (!f.config.empty()) o.config_file = f.config;
  if (f.seed_opt && f.seed_opt->count() && !seed_key.empty()) o.flags.emplace_back(seed_key, std::to_string(f.seed));
  if (!f.task_weights.empty()) o.flags.emplace_back("weights.task", f.task_weights);
  if (!f.modality_weights.empty() && !weights_key.empty()) o.flags.emplace_back(weights_key, f.modality_weights);
  if (f.runs_opt && f.runs_opt->count()) o.flags.emplace_back("finetune.runs", std::to_string(f.runs));
  if (!f.data.empty()) o.flags.emplace_back("paths.data", f.data);
  if (!f.out.empty()) o.flags.emplace_back("paths.out", f.out);
  if (!f.checkpoint.empty()) o.flags.emplace_back("paths.checkpoint", f.checkpoint);
  return resolve_config(o);
}

fs::path out_dir(const RunConfig& cfg) {
  fs::path p = cfg.out_dir.empty() ? fs::path(".") : fs::path(cfg.out_dir);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write " + path.string());
  os << text;
  if (!os) fail(ErrorKind::io, "short write to " + path.string());
}

void write_resolved(const RunConfig& cfg, const fs::path& dir) {
  write_text(dir / "config.resolved.cfg", format_run_config(cfg));
}

const std::string& need_path(const std::string& value, const char* flag) {
  if (value.empty()) usage(std::string("missing required ") + flag);
  return value;
}

std::string breakdown_json(const TaskLossBreakdown& b) {
  ojson j;
  j["combined"] = b.combined;
  j["asr_loss"] = b.asr_loss;
  j["pid_loss"] = b.pid_loss;
  j["token_accuracy"] = b.token_accuracy;
  j["speaker_accuracy"] = b.speaker_accuracy;
  return j.dump();
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Flags& f, std::ostream& out) {
  RunConfig cfg = resolve(f, "", "");
  const fs::path dir = need_path(cfg.out_dir, "--out");
  const std::uint64_t seed = f.seed_opt->count() ? f.seed : 1;
  const SyntheticCorpus corpus = generate_synthetic_corpus(synthetic_spec_for(cfg), seed);
  write_corpus(corpus, dir);
  write_resolved(cfg, dir);
  ojson j;
  j["seed"] = seed;
  j["pretrain"] = corpus.pretrain.records.size();
  j["downstream"] = corpus.downstream.records.size();
  j["vocab"] = corpus.vocab.size();
  j["lexicon"] = corpus.embeddings.size();
  out << j.dump() << '\n';
  return 0;
}

int cmd_pretrain(const Flags& f, std::ostream& out) {
  RunConfig cfg = resolve(f, "pretrain.seed", "weights.modality");
  const PreparedCorpus data = load_prepared_corpus(need_path(cfg.data_dir, "--data"), cfg.model);
  const fs::path dir = out_dir(cfg);
  write_resolved(cfg, dir);
  std::ofstream trace_file(dir / "metrics.jsonl", std::ios::binary);
  MetricsTrace trace(&trace_file);
  PretrainResult r = pretrain_run(data.model, cfg.pretrain, data.pretrain, cfg.pretrain.seed, &trace);
  save_checkpoint(r.checkpoint, dir / "pretrain.ckpt");
  const PretrainModel model = pretrain_model_from_checkpoint(r.checkpoint);
  const std::string summary = breakdown_json(evaluate_pretrain(model, data.pretrain));
  write_text(dir / "summary.json", summary + "\n");
  out << summary << '\n';
  return 0;
}

std::optional<Checkpoint> init_checkpoint(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) return std::nullopt;
  return load_checkpoint(cfg.checkpoint);
}

int cmd_finetune(const Flags& f, std::ostream& out) {
  RunConfig cfg = resolve(f, "finetune.seed", "weights.finetune_modality");
  const PreparedCorpus data = load_prepared_corpus(need_path(cfg.data_dir, "--data"), cfg.model);
  const auto init = init_checkpoint(cfg);
  const fs::path dir = out_dir(cfg);
  write_resolved(cfg, dir);
  std::ofstream trace_file(dir / "metrics.jsonl", std::ios::binary);
  MetricsTrace trace(&trace_file);
  FinetuneResult r = finetune_run(data.model, cfg.finetune, data.train, data.dev, init ? &*init : nullptr,
                                  cfg.finetune.seed, &trace);
  save_checkpoint(r.checkpoint, dir / "emotion.ckpt");
  const std::string report = report_json(r.dev_reports.back());
  write_text(dir / "dev_report.json", report + "\n");
  if (f.pretty) out << format_report_table(std::span(&r.dev_reports.back(), 1));
  else out << report << '\n';
  return 0;
}

int cmd_select(const Flags& f, std::ostream& out) {
  RunConfig cfg = resolve(f, "finetune.seed", "weights.finetune_modality");
  const PreparedCorpus data = load_prepared_corpus(need_path(cfg.data_dir, "--data"), cfg.model);
  const auto init = init_checkpoint(cfg);
  const fs::path dir = out_dir(cfg);
  write_resolved(cfg, dir);
  std::vector<EvalReport> reports;
  std::vector<Checkpoint> checkpoints;
  std::ofstream runs_file(dir / "runs.jsonl", std::ios::binary);
  for (std::size_t i = 0; i < cfg.finetune.runs; ++i) {
    const std::uint64_t seed = cfg.finetune.seed + i;
    FinetuneResult r = finetune_run(data.model, cfg.finetune, data.train, data.dev, init ? &*init : nullptr, seed);
    EvalReport dev = r.dev_reports.back();
    dev.run = i;
    runs_file << report_json(dev) << '\n';
    reports.push_back(std::move(dev));
    checkpoints.push_back(std::move(r.checkpoint));
  }
  const std::size_t best = select_best_of_n(reports);
  save_checkpoint(checkpoints[best], dir / "best.ckpt");
  ojson j;
  j["best_run"] = best;
  j["seed"] = reports[best].seed;
  j["score"] = reports[best].selection_score();
  write_text(dir / "selection.json", j.dump() + "\n");
  if (f.pretty) {
    out << format_report_table(reports) << "selected run " << best << '\n';
  } else {
    out << j.dump() << '\n';
  }
  return 0;
}

struct LoadedEmotion {
  RunConfig cfg;
  Checkpoint ckpt;
  PreparedCorpus data;
  ModalityWeights weights;
};

LoadedEmotion load_for_eval(const Flags& f) {
  LoadedEmotion l;
  l.cfg = resolve(f, "", "");
  l.ckpt = load_checkpoint(need_path(l.cfg.checkpoint, "--checkpoint"));
  l.data = load_prepared_corpus(need_path(l.cfg.data_dir, "--data"), l.ckpt.config);
  l.weights = f.modality_weights.empty() ? l.ckpt.config.finetune_weights
                                         : parse_modality_weights(f.modality_weights, "--modality-weights");
  return l;
}

int cmd_evaluate(const Flags& f, std::ostream& out) {
  LoadedEmotion l = load_for_eval(f);
  const EmotionModel model = emotion_model_from_checkpoint(l.ckpt);
  EvalReport r = evaluate_model(model, l.data.test, l.data.dev, set_ablation_weights(l.weights));
  r.split = "test";
  const fs::path dir = out_dir(l.cfg);
  write_text(dir / "report.jsonl", report_json(r) + "\n");
  if (f.pretty) out << format_report_table(std::span(&r, 1));
  else out << report_json(r) << '\n';
  return 0;
}

int cmd_ablate(const Flags& f, std::ostream& out) {
  LoadedEmotion l = load_for_eval(f);
  const EmotionModel model = emotion_model_from_checkpoint(l.ckpt);
  std::vector<EvalReport> reports = ablation_sweep(model, l.data.test, l.data.dev, l.weights);
  std::string lines;
  for (auto& r : reports) {
    r.split = "test";
    lines += report_json(r) + "\n";
  }
  const fs::path dir = out_dir(l.cfg);
  write_text(dir / "ablation.jsonl", lines);
  const std::string table = format_report_table(reports);
  write_text(dir / "ablation.txt", table);
  out << (f.pretty ? table : lines);
  return 0;
}

int cmd_gradcheck(const Flags& f, std::ostream& out, std::ostream& err) {
  RunConfig cfg = resolve(f, "pretrain.seed", "");
  const GradCheckOptions opts = full_graph_probe_options();
  const GradCheckReport r = pretrain_gradcheck(cfg.model, synthetic_spec_for(cfg), cfg.pretrain.seed, opts);
  if (f.pretty) {
    char buf[160];
    for (const auto& e : r.entries) {
      std::snprintf(buf, sizeof buf, "%-48s %8zu  %.3e  (analytic %.6e, numeric %.6e)\n", e.name.c_str(),
                    e.probed, e.max_rel_error, e.analytic_at_max, e.numeric_at_max);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "max relative error %.3e over %zu probes in %.1fs\n", r.max_rel_error,
                  r.probes, r.seconds);
    out << buf;
  } else {
    ojson j;
    j["max_rel_error"] = r.max_rel_error;
    j["tolerance"] = r.tolerance;
    j["probes"] = r.probes;
    j["seconds"] = r.seconds;
    j["passed"] = r.passed();
    out << j.dump() << '\n';
  }
  if (!r.passed()) {
    err << "error[probe]: max relative error " << r.max_rel_error << " exceeds tolerance " << r.tolerance << '\n';
    return 1;
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-modal transformer: synthetic data, pretraining, fine-tuning, evaluation", "xmodal"};
  app.require_subcommand(1);
  const unsigned common = kPreset | kConfig;
  struct Command {
    const char* name;
    const char* help;
    unsigned options;
  };
  const std::array<Command, 7> commands = {{
      {"gen-data", "generate a planted-signal corpus", common | kSeed | kOut},
      {"pretrain", "multitask pretraining (ASR + speaker ID)",
       common | kSeed | kOut | kData | kTaskWeights | kModalityWeights},
      {"finetune", "fine-tune the emotion classifier",
       common | kSeed | kOut | kData | kCheckpoint | kModalityWeights | kPretty},
      {"select", "N fine-tuning runs, keep the best on dev",
       common | kSeed | kOut | kData | kCheckpoint | kModalityWeights | kRuns | kPretty},
      {"evaluate", "test metrics with dev-optimized thresholds",
       common | kOut | kData | kCheckpoint | kModalityWeights | kPretty},
      {"ablate", "A / A+V / A+T / A+V+T sweep", common | kOut | kData | kCheckpoint | kModalityWeights | kPretty},
      {"gradcheck", "finite-difference check of the pretraining graph", common | kSeed | kPretty},
  }};
  std::array<CLI::App*, commands.size()> subs{};
  std::array<Flags, commands.size()> flags{};
  for (std::size_t i = 0; i < commands.size(); ++i) {
    subs[i] = app.add_subcommand(commands[i].name, commands[i].help);
    add_options(subs[i], flags[i], commands[i].options);
  }

  std::vector<std::string> argv_store{"xmodal"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error[usage]: " << e.what() << '\n';
    return 2;
  }

  try {
    for (std::size_t i = 0; i < commands.size(); ++i) {
      if (!subs[i]->parsed()) continue;
      const std::string name = commands[i].name;
      const Flags& f = flags[i];
      if (name == "gen-data") return cmd_gen_data(f, out);
      if (name == "pretrain") return cmd_pretrain(f, out);
      if (name == "finetune") return cmd_finetune(f, out);
      if (name == "select") return cmd_select(f, out);
      if (name == "evaluate") return cmd_evaluate(f, out);
      if (name == "ablate") return cmd_ablate(f, out);
      if (name == "gradcheck") return cmd_gradcheck(f, out, err);
    }
  } catch (const Error& e) {
    err << "error[" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return e.kind() == ErrorKind::usage ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error[io]: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace xmodal
