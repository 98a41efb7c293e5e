#include "penet/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "penet/ablation.hpp"
#include "penet/errors.hpp"
#include "penet/evalkit.hpp"
#include "penet/image.hpp"
#include "penet/synthdata.hpp"
#include "penet/tensor_utils.hpp"
#include "penet/trainer.hpp"

namespace penet {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct Globals {
  std::uint64_t seed = 0;
  bool json_errors = false;
  bool deterministic = false;
};

std::uint64_t default_seed() {
  if (const char* env = std::getenv("PENET_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ParameterError("PENET_SEED is not an unsigned integer");
    }
  }
  return 0;
}

std::unique_ptr<Trainer> load_trainer(const fs::path& ckpt) {
  auto config = checkpoint_config(ckpt);
  auto trainer = std::make_unique<Trainer>(config, read_corpus(config.corpus));
  load_checkpoint(*trainer, ckpt);
  return trainer;
}

void stamp(json& doc, const Globals& g) {
  if (g.deterministic) return;
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  doc["created_at"] = buf;
}

void write_json(const fs::path& path, const json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError(path, "cannot write");
  out << doc.dump(2) << "\n";
}

// Labels of the form "skin_tone=tone2,gender_proxy=B"; unspecified keys keep defaults.
SignerSpec parse_labels(const std::string& text) {
  SignerSpec spec;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ParameterError("attribute '" + item + "' must be key=value");
    const auto key = parse_attribute_key(item.substr(0, eq));
    const auto value = item.substr(eq + 1);
    attribute_index(key, value);
    switch (key) {
      case AttributeKey::kSkinTone: spec.skin_tone = value; break;
      case AttributeKey::kGender: spec.gender_proxy = value; break;
      case AttributeKey::kEthnicity: spec.ethnicity_proxy = value; break;
    }
  }
  return spec;
}

torch::Tensor stacked_masks(const FrameRecord& f) {
  return torch::cat({to_tensor(f.mask_head), to_tensor(f.mask_hand), to_tensor(f.mask_torso)}, 0).unsqueeze(0);
}

// n prior samples composited with masks from the figure geometry for `pose`
std::vector<Image> sample_pose(Trainer& t, const Pose& pose, const SignerSpec& labels, int n, torch::Generator& gen) {
  const FrameRecord geometry = render_frame(labels, pose);
  auto y = condition_tensor(pose, t.config().pose_format).unsqueeze(0).expand({n, -1, -1, -1}).contiguous();
  auto a = t.attribute_encoder().encode(labels).unsqueeze(0).expand({n, -1}).contiguous();
  auto z = sample_prior(gen, n, t.config().latent_dim);
  auto masks = stacked_masks(geometry).expand({n, -1, -1, -1}).contiguous();
  auto images = compose(t.synthesize(y, a, z), masks_from(masks));
  std::vector<Image> out;
  for (int i = 0; i < n; ++i) out.push_back(to_image(images[i]));
  return out;
}

json stat_json(const MetricStat& s) { return json{{"mean", s.mean}, {"std", s.std}, {"count", s.count}}; }

json metrics_json(const RegionMetrics& m) {
  json j;
  for (const auto* table : {&m.ssim, &m.psnr}) {
    json t;
    for (const auto& [k, v] : *table) t[k] = stat_json(v);
    j[table == &m.ssim ? "ssim" : "psnr"] = t;
  }
  json f;
  for (const auto& [k, v] : m.fid) f[k] = v;
  j["fid"] = f;
  return j;
}

json pose_json(const PoseEvalReport& r) {
  json j;
  j["samples_per_pose"] = r.samples_per_pose;
  for (PoseRegion region : kPoseRegions) {
    const auto label = table_region_label(region);
    const auto& s = r.regions.at(label);
    j["regions"][label] = {{"l2", stat_json(s.l2)}, {"hit_rate", s.hit_rate}, {"hits", s.hits}, {"total", s.total}};
  }
  return j;
}

Image side_by_side(const std::vector<Image>& images) { return tile_images(images, static_cast<int>(images.size())); }

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  Globals g;
  CLI::App app{"penet: diversity-aware pose-conditioned signer synthesis"};
  app.require_subcommand(1);
  std::string seed_text;
  app.add_option("--seed", seed_text, "random seed (default: $PENET_SEED or 0)");
  app.add_flag("--json-errors", g.json_errors, "print errors as JSON on stderr");
  app.add_flag("--deterministic", g.deterministic, "suppress timestamps in outputs");

  // gen-data
  auto* gen_data = app.add_subcommand("gen-data", "render a synthetic signer corpus");
  std::string data_out;
  CorpusOptions corpus_opts;
  gen_data->add_option("--out", data_out, "corpus directory")->required();
  gen_data->add_option("--signers", corpus_opts.signers, "number of signers")->check(CLI::PositiveNumber);
  gen_data->add_option("--frames", corpus_opts.frames, "frames per signer")->check(CLI::PositiveNumber);
  gen_data->add_option("--size", corpus_opts.image_size, "image size in pixels")->check(CLI::PositiveNumber);
  gen_data->add_option("--amplitude", corpus_opts.amplitude, "motion amplitude")->check(CLI::NonNegativeNumber);

  // train
  auto* train = app.add_subcommand("train", "train a model from a config file");
  std::string config_path, resume, train_out = "run";
  int steps_override = -1;
  train->add_option("--config", config_path, "key=value config file")->required()->check(CLI::ExistingFile);
  train->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "output directory for checkpoint and log");
  train->add_option("--steps", steps_override, "override the configured step count");

  // sample
  auto* sample = app.add_subcommand("sample", "draw prior samples for each pose");
  std::string ckpt, poses_path, sample_out = "samples.png", labels_text;
  int n_samples = 5;
  sample->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  sample->add_option("--poses", poses_path, "poses.jsonl")->required()->check(CLI::ExistingFile);
  sample->add_option("--n", n_samples, "samples per pose")->check(CLI::PositiveNumber);
  sample->add_option("--out", sample_out, "output PNG");
  sample->add_option("--attributes", labels_text, "e.g. skin_tone=tone2,gender_proxy=B");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "region metrics and pose evaluation");
  std::string eval_out = "eval";
  int estimator_steps = 600;
  evaluate->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--out", eval_out, "output directory");
  evaluate->add_option("--n", n_samples, "prior samples per pose")->check(CLI::PositiveNumber);
  evaluate->add_option("--estimator-steps", estimator_steps, "training steps for the pose estimator");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "train and evaluate every ablation row");
  std::string ablate_out = "ablation", rows_text;
  ablate->add_option("--config", config_path, "base config")->required()->check(CLI::ExistingFile);
  ablate->add_option("--out", ablate_out, "output directory");
  ablate->add_option("--steps", steps_override, "steps per row");
  ablate->add_option("--rows", rows_text, "semicolon-separated subset of row names");

  // pose-edit
  auto* pose_edit = app.add_subcommand("pose-edit", "move joints of a corpus pose and regenerate");
  int frame_index = 0;
  double dx = 0.0, dy = 0.0;
  std::string joint_group = "head", edit_out = "pose_edit.png";
  pose_edit->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  pose_edit->add_option("--frame", frame_index, "corpus frame index")->check(CLI::NonNegativeNumber);
  pose_edit->add_option("--dx", dx, "horizontal shift in pixels");
  pose_edit->add_option("--dy", dy, "vertical shift in pixels");
  pose_edit->add_option("--joints", joint_group, "head | r_hand | l_hand | torso | all")
      ->check(CLI::IsMember({"head", "r_hand", "l_hand", "torso", "all"}));
  pose_edit->add_option("--out", edit_out, "output PNG");

  // grid
  auto* grid = app.add_subcommand("grid", "comparison sheet over several checkpoints");
  std::vector<std::string> ckpts;
  std::string grid_out = "grid.png";
  int grid_frames = 4;
  grid->add_option("--ckpts", ckpts, "checkpoints, one column each")->required()->check(CLI::ExistingFile);
  grid->add_option("--frames", grid_frames, "number of corpus frames (rows)")->check(CLI::PositiveNumber);
  grid->add_option("--out", grid_out, "output PNG");

  auto fail = [&](int code, const std::string& kind, const std::string& message) {
    if (g.json_errors) {
      err << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << "\n";
    } else {
      err << "penet: " << message << "\n";
    }
    return code;
  };

  try {
    std::vector<std::string> args(raw_args.rbegin(), raw_args.rend());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    // the subcommand may not be parsed yet, so scan the raw flag too
    for (const auto& a : raw_args) g.json_errors = g.json_errors || a == "--json-errors";
    return fail(2, "usage", e.what());
  }

  try {
    g.seed = seed_text.empty() ? default_seed() : std::stoull(seed_text);
  } catch (const ParameterError& e) {
    return fail(2, "usage", e.what());
  } catch (const std::exception&) {
    return fail(2, "usage", "--seed must be an unsigned integer");
  }

  try {
    if (*gen_data) {
      corpus_opts.seed = g.seed;
      const auto corpus = generate_corpus(corpus_opts);
      const auto manifest = write_corpus(corpus, data_out);
      out << "wrote " << manifest.records.size() << " frames to " << data_out << "\n";
    } else if (*train) {
      auto config = TrainConfig::load(config_path);
      if (steps_override >= 0) config.steps = steps_override;
      if (app.get_option("--seed")->count() > 0 || std::getenv("PENET_SEED")) config.seed = g.seed;
      Trainer trainer(config, read_corpus(config.corpus));
      if (!resume.empty()) load_checkpoint(trainer, resume);
      fs::create_directories(train_out);
      std::ofstream log(fs::path(train_out) / "train_log.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
      trainer.train(&log);
      save_checkpoint(trainer, fs::path(train_out) / "checkpoint.penet");
      out << "trained to step " << trainer.step_count() << "; checkpoint in " << train_out << "\n";
    } else if (*sample) {
      auto trainer = load_trainer(ckpt);
      const auto labels = parse_labels(labels_text);
      const int size = trainer->config().image_size;
      const auto rows = read_pose_rows(poses_path, Canvas{size, size});
      auto gen = make_generator(g.seed);
      std::vector<Image> tiles;
      for (const auto& row : rows) {
        tiles.push_back(render_condition(row.pose, PoseFormat::kSkeleton, default_stroke_width(size), kDefaultTau));
        for (auto& im : sample_pose(*trainer, row.pose, labels, n_samples, gen)) tiles.push_back(std::move(im));
      }
      if (tiles.empty()) throw ParameterError("sample: no poses in " + poses_path);
      write_png(sample_out, tile_images(tiles, n_samples + 1));
      out << "wrote " << rows.size() * n_samples << " samples to " << sample_out << "\n";
    } else if (*evaluate) {
      auto trainer = load_trainer(ckpt);
      RandomConvExtractor embedder;
      EvalOptions eval_opts{n_samples, g.seed};
      const auto metrics = evaluate_trainer(*trainer, embedder, eval_opts);
      const auto& corpus = trainer->corpus();
      std::vector<Image> images;
      std::vector<Pose> poses;
      std::vector<SignerSpec> labels;
      for (const auto& r : corpus.records) {
        images.push_back(r.image);
        poses.push_back(r.pose);
        labels.push_back(r.attributes);
      }
      ToyPoseEstimator estimator(trainer->config().image_size);
      PoseEstimatorOptions est_opts;
      est_opts.steps = estimator_steps;
      estimator.train(images, poses, est_opts);
      auto gen = make_generator(g.seed + 1);
      const auto report = pose_eval(
          [&](std::size_t i, const Pose& pose, int n) { return sample_pose(*trainer, pose, labels[i], n, gen); }, poses,
          images, estimator, n_samples);
      json doc;
      doc["checkpoint"] = ckpt;
      doc["step"] = trainer->step_count();
      doc["metrics"] = metrics_json(metrics);
      doc["pose_eval"] = pose_json(report);
      doc["estimator_training_error"] = estimator.training_error();
      stamp(doc, g);
      write_json(fs::path(eval_out) / "metrics.json", doc);
      AblationResult row;
      row.name = "checkpoint";
      row.ok = true;
      row.metrics = metrics;
      write_ablation_csv(fs::path(eval_out) / "metrics.csv", {row});
      out << "wrote metrics to " << eval_out << "\n";
    } else if (*ablate) {
      auto config = TrainConfig::load(config_path);
      if (app.get_option("--seed")->count() > 0 || std::getenv("PENET_SEED")) config.seed = g.seed;
      AblationOptions opts;
      opts.steps = steps_override;
      opts.eval.seed = g.seed;
      std::stringstream ss(rows_text);
      std::string name;
      while (std::getline(ss, name, ';'))
        if (!name.empty()) opts.only.push_back(name);
      const auto corpus = read_corpus(config.corpus);
      const auto results = run_ablation(config, corpus, opts, &out);
      fs::create_directories(ablate_out);
      write_ablation_csv(fs::path(ablate_out) / "table.csv", results);
      write_png(fs::path(ablate_out) / "grid.png", ablation_grid(corpus, results));
      int failed = 0;
      for (const auto& r : results) failed += (!r.ok && !r.external);
      out << "wrote " << results.size() << " rows to " << ablate_out << " (" << failed << " failed)\n";
    } else if (*pose_edit) {
      auto trainer = load_trainer(ckpt);
      const auto& records = trainer->corpus().records;
      if (frame_index >= static_cast<int>(records.size())) throw ParameterError("pose-edit: frame index out of range");
      const auto& frame = records[frame_index];
      Pose edited = frame.pose;
      for (int j = 0; j < joints::kCount; ++j) {
        const auto region = joint_region(j);
        const bool pick = joint_group == "all" || (joint_group == "head" && region == PoseRegion::kHead) ||
                          (joint_group == "r_hand" && region == PoseRegion::kRightHand) ||
                          (joint_group == "l_hand" && region == PoseRegion::kLeftHand) ||
                          (joint_group == "torso" && region == PoseRegion::kTorso);
        if (pick) {
          edited.keypoints[j].x += dx;
          edited.keypoints[j].y += dy;
        }
      }
      clip_to_canvas(edited);
      // same z on both sides, so only the pose differs
      std::vector<Image> tiles;
      for (const Pose* p : std::array<const Pose*, 2>{&frame.pose, &edited}) {
        auto gen_copy = make_generator(g.seed);
        tiles.push_back(sample_pose(*trainer, *p, frame.attributes, 1, gen_copy).front());
      }
      write_png(edit_out, side_by_side(tiles));
      out << "wrote " << edit_out << "\n";
    } else if (*grid) {
      std::vector<std::unique_ptr<Trainer>> models;
      for (const auto& c : ckpts) models.push_back(load_trainer(c));
      const auto& records = models.front()->corpus().records;
      const int rows = std::min<int>(grid_frames, static_cast<int>(records.size()));
      std::vector<Image> tiles;
      for (int r = 0; r < rows; ++r) {
        tiles.push_back(records[r].image);
        for (auto& m : models) {
          if (m->config().image_size != records[r].image.width) throw ParameterError("grid: checkpoints differ in image size");
          const auto batch = m->make_batch({static_cast<std::size_t>(r)});
          tiles.push_back(to_image(m->reconstruct(batch)[0]));
        }
      }
      write_png(grid_out, tile_images(tiles, static_cast<int>(models.size()) + 1));
      out << "wrote " << grid_out << "\n";
    }
  } catch (const ParameterError& e) {
    return fail(1, "parameter", e.what());
  } catch (const VocabularyError& e) {
    return fail(1, "vocabulary", e.what());
  } catch (const IoError& e) {
    return fail(1, "io", e.what());
  } catch (const CheckpointError& e) {
    return fail(1, "checkpoint", e.what());
  } catch (const std::exception& e) {
    return fail(1, "runtime", e.what());
  }
  return 0;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace penet
