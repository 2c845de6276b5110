#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "support.hpp"
#include "xmodal/checkpoint.hpp"
#include "xmodal/cli.hpp"

using namespace xmodal;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

// Small enough that every command finishes in seconds.
const char* kTinyConfig = R"(preset = desk-small
model.d_model = 8
model.heads = 2
model.ff_dim = 12
model.encoder_layers = 1
model.crossmodal_layers = 1
model.decoder_layers = 1
model.text_dim = 24
synthetic.pretrain_size = 24
synthetic.train_size = 60
synthetic.dev_size = 40
synthetic.test_size = 40
pretrain.steps = 12
pretrain.batch_size = 4
pretrain.warmup = 5
pretrain.eval_every = 6
finetune.steps = 12
finetune.batch_size = 4
finetune.warmup = 5
finetune.eval_every = 6
finetune.runs = 2
)";

struct Workspace {
  fs::path root;
  fs::path cfg;
  Workspace() {
    root = fs::temp_directory_path() / ("xmodal_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(root);
    cfg = root / "tiny.cfg";
    std::ofstream(cfg) << kTinyConfig;
  }
  ~Workspace() { fs::remove_all(root); }
  std::string p(const std::string& rel) const { return (root / rel).string(); }
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 2") {
    Result r = run({});
    CHECK(r.code == 2);
    r = run({"frobnicate"});
    CHECK(r.code == 2);
    CHECK(r.err.find("error[usage]") != std::string::npos);
    r = run({"gen-data", "--bogus"});
    CHECK(r.code == 2);
    r = run({"gen-data"});
    CHECK(r.code == 2);  // --out is required
    CHECK(run({"--help"}).code == 0);
  }

  TEST_CASE("config errors are categorized") {
    Workspace w;
    const Result r = run({"gen-data", "--preset", "huge", "--out", w.p("d")});
    CHECK(r.code == 1);
    CHECK(r.err.rfind("error[config]", 0) == 0);
    const Result m = run({"evaluate", "--config", w.cfg.string(), "--data", w.p("nowhere"), "--checkpoint", w.p("x.ckpt")});
    CHECK(m.code == 1);
    CHECK(m.err.rfind("error[load]", 0) == 0);
  }

  TEST_CASE("gen-data is deterministic") {
    Workspace w;
    auto gen = [&](const char* seed) {
      fs::remove_all(w.root / "d");
      REQUIRE(run({"gen-data", "--config", w.cfg.string(), "--seed", seed, "--out", w.p("d")}).code == 0);
      return tree(w.root / "d");
    };
    const auto a = gen("7");
    CHECK(a.count("downstream.jsonl") == 1);
    CHECK(a.count("config.resolved.cfg") == 1);
    CHECK(a.count("tensors/test-000000.audio.xmt") == 1);
    CHECK(a == gen("7"));
    CHECK(a != gen("8"));
  }

  TEST_CASE("full pipeline through the command line") {
    Workspace w;
    const std::string cfg = w.cfg.string();
    REQUIRE(run({"gen-data", "--config", cfg, "--seed", "3", "--out", w.p("data")}).code == 0);

    Result r = run({"pretrain", "--config", cfg, "--data", w.p("data"), "--out", w.p("pre"), "--task-weights", "1,0"});
    REQUIRE(r.code == 0);
    CHECK(nlohmann::json::parse(r.out).contains("token_accuracy"));
    CHECK(slurp(w.root / "pre" / "config.resolved.cfg").find("weights.task = 1,0") != std::string::npos);
    const Checkpoint pre = load_checkpoint(w.root / "pre" / "pretrain.ckpt");
    CHECK(pre.config.task_weights == TaskWeights{1.0, 0.0});
    CHECK(pre.model_kind == "pretrain");
    std::size_t trace_lines = 0;
    std::ifstream trace(w.root / "pre" / "metrics.jsonl");
    for (std::string line; std::getline(trace, line);) {
      CHECK(nlohmann::json::parse(line).contains("step"));
      ++trace_lines;
    }
    CHECK(trace_lines >= 2);

    r = run({"finetune", "--config", cfg, "--data", w.p("data"), "--out", w.p("ft"), "--checkpoint",
             w.p("pre/pretrain.ckpt")});
    REQUIRE(r.code == 0);
    CHECK(nlohmann::json::parse(r.out)["classes"].size() == 6);

    r = run({"select", "--config", cfg, "--data", w.p("data"), "--out", w.p("sel"), "--runs", "3"});
    REQUIRE(r.code == 0);
    const auto sel = nlohmann::json::parse(r.out);
    CHECK(sel["best_run"].get<int>() < 3);
    std::size_t runs = 0;
    std::ifstream runs_file(w.root / "sel" / "runs.jsonl");
    for (std::string line; std::getline(runs_file, line);) ++runs;
    CHECK(runs == 3);
    CHECK(fs::exists(w.root / "sel" / "best.ckpt"));

    r = run({"evaluate", "--config", cfg, "--data", w.p("data"), "--checkpoint", w.p("sel/best.ckpt"), "--out",
             w.p("ev")});
    REQUIRE(r.code == 0);
    CHECK(nlohmann::json::parse(r.out)["split"] == "test");

    r = run({"ablate", "--config", cfg, "--data", w.p("data"), "--checkpoint", w.p("sel/best.ckpt"), "--out",
             w.p("ab"), "--pretty"});
    REQUIRE(r.code == 0);
    const std::string table = slurp(w.root / "ab" / "ablation.txt");
    for (const char* c : {"A ", "A+V", "A+T", "A+V+T"}) CHECK(table.find(c) != std::string::npos);
    std::vector<std::string> conditions;
    std::ifstream ab(w.root / "ab" / "ablation.jsonl");
    for (std::string line; std::getline(ab, line);) conditions.push_back(nlohmann::json::parse(line)["condition"]);
    CHECK(conditions == std::vector<std::string>{"A", "A+V", "A+T", "A+V+T"});

    // a pretraining checkpoint is not an emotion model
    r = run({"evaluate", "--config", cfg, "--data", w.p("data"), "--checkpoint", w.p("pre/pretrain.ckpt"), "--out",
             w.p("bad")});
    CHECK(r.code == 1);
    CHECK(r.err.rfind("error[incompatible]", 0) == 0);
  }

  TEST_CASE("mismatched checkpoint is rejected with the differing fields") {
    Workspace w;
    const std::string cfg = w.cfg.string();
    REQUIRE(run({"gen-data", "--config", cfg, "--out", w.p("data")}).code == 0);
    REQUIRE(run({"pretrain", "--config", cfg, "--data", w.p("data"), "--out", w.p("pre")}).code == 0);
    std::string wide = kTinyConfig;
    wide.replace(wide.find("model.d_model = 8"), 17, "model.d_model = 12");
    std::ofstream(w.root / "wide.cfg") << wide;
    const Result r = run({"finetune", "--config", w.p("wide.cfg"), "--data", w.p("data"), "--out", w.p("ft"),
                          "--checkpoint", w.p("pre/pretrain.ckpt")});
    CHECK(r.code == 1);
    CHECK(r.err.rfind("error[incompatible]", 0) == 0);
    CHECK(r.err.find("d_model") != std::string::npos);
  }
}
