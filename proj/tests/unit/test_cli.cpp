#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "penet/ablation.hpp"
#include "penet/cli.hpp"
#include "penet/image.hpp"
#include "penet/synthdata.hpp"

using namespace penet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// One corpus, config and two-step checkpoint shared by the cases below.
struct Workspace {
  fs::path root = fs::temp_directory_path() / "penet_cli_test";
  fs::path corpus = root / "corpus", config = root / "tiny.cfg", run = root / "run";
  fs::path ckpt = run / "checkpoint.penet";
  Workspace() {
    fs::remove_all(root);
    fs::create_directories(root);
    REQUIRE(cli({"--seed", "2", "gen-data", "--out", corpus.string(), "--signers", "2", "--frames", "3", "--size", "32"})
                .code == 0);
    std::ofstream(config) << "corpus = " << corpus.string()
                          << "\nimage_size = 32\nlevels = 4\nbase_channels = 8\nmax_channels = 16\nlatent_dim = 8\n"
                             "style_dim = 16\nd_base_channels = 8\nbatch_size = 2\nclassifier_steps = 10\nsteps = 2\n";
    REQUIRE(cli({"train", "--config", config.string(), "--out", run.string()}).code == 0);
  }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"gen-data"}).code == 2);
  CHECK(cli({"gen-data", "--out", "x", "--bogus"}).code == 2);
  CHECK(cli({"--seed", "abc", "gen-data", "--out", "x"}).code == 2);
  const auto r = cli({"--json-errors", "train"});
  CHECK(r.code == 2);
  const auto j = nlohmann::json::parse(r.err);
  CHECK(j["exit_code"] == 2);
  CHECK(j["error"] == "usage");
  const auto help = cli({"--help"});
  CHECK(help.code == 0);
  for (const char* sub : {"gen-data", "train", "sample", "evaluate", "ablate", "pose-edit", "grid"})
    CHECK(help.out.find(sub) != std::string::npos);
}

TEST_CASE("gen-data is idempotent and honours the seed fallback") {
  const auto root = fs::temp_directory_path() / "penet_cli_gen";
  fs::remove_all(root);
  const auto a = (root / "a").string(), b = (root / "b").string(), c = (root / "c").string();
  CHECK(cli({"--seed", "5", "gen-data", "--out", a, "--signers", "1", "--frames", "2", "--size", "32"}).code == 0);
  CHECK(cli({"--seed", "5", "gen-data", "--out", b, "--signers", "1", "--frames", "2", "--size", "32"}).code == 0);
  CHECK(slurp(fs::path(a) / "manifest.json") == slurp(fs::path(b) / "manifest.json"));
  CHECK(slurp(fs::path(a) / "poses.jsonl") == slurp(fs::path(b) / "poses.jsonl"));
  setenv("PENET_SEED", "5", 1);
  CHECK(cli({"gen-data", "--out", c, "--signers", "1", "--frames", "2", "--size", "32"}).code == 0);
  unsetenv("PENET_SEED");
  CHECK(slurp(fs::path(a) / "manifest.json") == slurp(fs::path(c) / "manifest.json"));
  fs::remove_all(root);
}

TEST_CASE("train writes a checkpoint and one log line per step") {
  auto& w = workspace();
  CHECK(fs::exists(w.ckpt));
  std::ifstream log(w.run / "train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("d_loss"));
    ++lines;
  }
  CHECK(lines == 2);
  // resuming extends the same run
  const auto resumed = w.root / "resumed";
  CHECK(cli({"train", "--config", w.config.string(), "--resume", w.ckpt.string(), "--out", resumed.string()}).code == 0);
  CHECK(fs::exists(resumed / "checkpoint.penet"));
  CHECK(cli({"train", "--config", w.config.string(), "--resume", w.ckpt.string(), "--steps", "4", "--out",
             resumed.string()})
            .code == 1);  // a different step count changes the config hash, so the checkpoint is refused
  CHECK(cli({"train", "--config", "/no/such/file", "--out", resumed.string()}).code == 2);
  std::ofstream(w.root / "broken.cfg") << "corpus = /no/such/corpus\n";
  CHECK(cli({"train", "--config", (w.root / "broken.cfg").string()}).code == 1);
}

TEST_CASE("sample draws n images per pose") {
  auto& w = workspace();
  const auto png = w.root / "samples.png";
  const auto r = cli({"sample", "--ckpt", w.ckpt.string(), "--poses", (w.corpus / "poses.jsonl").string(), "--n", "5",
                      "--out", png.string()});
  REQUIRE(r.code == 0);
  const auto sheet = read_png(png);
  // six tiles per row (pose render + 5 samples), one row per pose, 1 px gutters
  CHECK(sheet.width == 6 * 32 + 5);
  CHECK(sheet.height == 6 * 32 + 5);
  CHECK(cli({"sample", "--ckpt", w.ckpt.string(), "--poses", (w.corpus / "poses.jsonl").string(), "--attributes",
             "skin_tone=tone99"})
            .code == 1);
}

TEST_CASE("evaluate on a barely trained model succeeds and is reproducible") {
  auto& w = workspace();
  const auto a = w.root / "eval_a", b = w.root / "eval_b";
  for (const auto& dir : {a, b})
    REQUIRE(cli({"--deterministic", "evaluate", "--ckpt", w.ckpt.string(), "--out", dir.string(), "--n", "2",
                 "--estimator-steps", "5"})
                .code == 0);
  CHECK(slurp(a / "metrics.json") == slurp(b / "metrics.json"));
  const auto j = nlohmann::json::parse(slurp(a / "metrics.json"));
  CHECK(j["metrics"]["ssim"].contains("head"));
  CHECK(j["pose_eval"]["regions"].size() == 4);
  CHECK(!j.contains("created_at"));
  CHECK(fs::exists(a / "metrics.csv"));
}

TEST_CASE("pose-edit and grid write images") {
  auto& w = workspace();
  const auto edit = w.root / "edit.png", grid = w.root / "grid.png";
  REQUIRE(cli({"pose-edit", "--ckpt", w.ckpt.string(), "--frame", "1", "--dx", "-8", "--joints", "head", "--out",
               edit.string()})
              .code == 0);
  CHECK(read_png(edit).width == 2 * 32 + 1);
  CHECK(cli({"pose-edit", "--ckpt", w.ckpt.string(), "--frame", "99"}).code == 1);
  CHECK(cli({"pose-edit", "--ckpt", w.ckpt.string(), "--joints", "tail"}).code == 2);
  REQUIRE(cli({"grid", "--ckpts", w.ckpt.string(), w.ckpt.string(), "--frames", "2", "--out", grid.string()}).code == 0);
  const auto g = read_png(grid);
  CHECK(g.width == 3 * 32 + 2);
  CHECK(g.height == 2 * 32 + 1);
}

TEST_CASE("ablate emits a table-shaped csv") {
  auto& w = workspace();
  const auto out = w.root / "ablation";
  const auto r = cli({"ablate", "--config", w.config.string(), "--out", out.string(), "--steps", "1", "--rows",
                      "full model;w/o f_skip;PE (separate)"});
  REQUIRE(r.code == 0);
  std::ifstream csv(out / "table.csv");
  std::string header, line;
  std::getline(csv, header);
  CHECK(header.rfind("model,status,ssim_head_mean", 0) == 0);
  std::vector<std::string> rows;
  while (std::getline(csv, line)) rows.push_back(line);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].rfind("\"PE (separate)\",ok", 0) == 0);
  CHECK(fs::exists(out / "grid.png"));
  CHECK(cli({"ablate", "--config", w.config.string(), "--rows", "nonsense"}).code == 1);
}

TEST_CASE("ablation rows") {
  const auto rows = table_rows();
  CHECK(rows.size() == 13);
  int external = 0;
  for (const auto& r : rows) external += r.external;
  CHECK(external == 2);
  const std::vector<std::string> names = {"w/o L_edge", "L_edge",   "f_xy (Conv)",      "PE (concate)",
                                          "PE (shared)", "PE (separate)", "w/o f_skip", "w/o f_skip & Psi",
                                          "Psi (Conv)", "w/o (m_hand)", "full model"};
  for (size_t i = 0; i < names.size(); ++i) CHECK(rows[i + 2].name == names[i]);
  TrainConfig c;
  rows[2].apply(c);
  CHECK(c.weights.edge == 0.0);
  CHECK_FALSE(c.posterior_pose);
}

TEST_CASE("a failing row is isolated and identical configs give identical rows") {
  auto& w = workspace();
  auto base = TrainConfig::load(w.config);
  base.steps = 1;
  // three UNet levels leave no generator feature at the posterior grid, so the shared row cannot be built
  base.levels = 3;
  const auto corpus = read_corpus(base.corpus);
  AblationOptions opts;
  opts.only = {"PE (shared)", "full model"};
  opts.eval.samples_per_pose = 2;
  const auto a = run_ablation(base, corpus, opts);
  REQUIRE(a.size() == 2);
  CHECK_FALSE(a[0].ok);
  CHECK(!a[0].error.empty());
  CHECK(a[1].ok);
  const auto b = run_ablation(base, corpus, opts);
  CHECK(b[1].metrics.psnr.at("composite").mean == a[1].metrics.psnr.at("composite").mean);
  CHECK(b[1].metrics.fid.at("composite") == a[1].metrics.fid.at("composite"));
}
