#include "penet/ablation.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "penet/errors.hpp"
#include "penet/tensor_utils.hpp"

namespace penet {

std::vector<AblationRow> table_rows() {
  return {
      {"Libras", nullptr, true},
      {"Anonysign", nullptr, true},
      // pose-free posterior baseline without, then with, the edge loss
      {"w/o L_edge", [](TrainConfig& c) { c.posterior_pose = false; c.weights.edge = 0.0; }},
      {"L_edge", [](TrainConfig& c) { c.posterior_pose = false; }},
      {"f_xy (Conv)", [](TrainConfig& c) { c.fxy_conv = true; }},
      {"PE (concate)", [](TrainConfig& c) { c.scheme = FusionScheme::kEarly; }},
      {"PE (shared)", [](TrainConfig& c) { c.scheme = FusionScheme::kShared; }},
      {"PE (separate)", [](TrainConfig& c) { c.scheme = FusionScheme::kSeparate; }},
      {"w/o f_skip", [](TrainConfig& c) { c.skips = false; }},
      {"w/o f_skip & Psi", [](TrainConfig& c) { c.skips = false; c.psi = PsiMode::kNone; }},
      {"Psi (Conv)", [](TrainConfig& c) { c.psi = PsiMode::kConv; }},
      {"w/o (m_hand)", [](TrainConfig& c) { c.hand_mask = false; }},
      {"full model", [](TrainConfig&) {}},
  };
}

RegionMetrics evaluate_trainer(Trainer& trainer, FeatureExtractor& embedder, const EvalOptions& options) {
  const auto& data = trainer.data();
  const std::size_t n = data.labels.size();
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  auto gen = make_generator(options.seed);
  std::vector<EvalFrame> frames;
  const std::size_t chunk = 16;
  for (std::size_t start = 0; start < n; start += chunk) {
    std::vector<std::size_t> idx(all.begin() + start, all.begin() + std::min(n, start + chunk));
    const auto batch = trainer.make_batch(idx);
    const auto recon = trainer.reconstruct(batch);
    std::vector<torch::Tensor> samples;
    for (int s = 0; s < options.samples_per_pose; ++s) {
      auto z = sample_prior(gen, static_cast<int64_t>(idx.size()), trainer.config().latent_dim);
      samples.push_back(compose(trainer.synthesize(batch.y, batch.a, z), masks_from(batch.masks)));
    }
    for (std::size_t i = 0; i < idx.size(); ++i) {
      EvalFrame f;
      f.truth = to_image(batch.x[i]);
      f.reconstruction = to_image(recon[i]);
      for (const auto& s : samples) f.samples.push_back(to_image(s[i]));
      for (int r = 0; r < 3; ++r) f.masks[r] = to_image(batch.masks[i].narrow(0, r, 1));
      frames.push_back(std::move(f));
    }
  }
  return region_metrics(frames, embedder);
}

std::vector<AblationResult> run_ablation(const TrainConfig& base, const Corpus& corpus, const AblationOptions& options,
                                         std::ostream* progress) {
  std::vector<AblationResult> results;
  std::map<std::uint64_t, AblationResult> cache;  // rows with identical configs share one run
  RandomConvExtractor embedder;
  const auto rows = table_rows();
  for (const auto& name : options.only)
    if (std::none_of(rows.begin(), rows.end(), [&](const AblationRow& r) { return r.name == name; }))
      throw ParameterError("ablation: unknown row '" + name + "'");
  for (const auto& row : rows) {
    if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), row.name) == options.only.end())
      continue;
    AblationResult result;
    result.name = row.name;
    result.external = row.external;
    if (row.external) {
      result.error = "external baseline, not reproduced";
      results.push_back(result);
      continue;
    }
    try {
      TrainConfig cfg = base;
      // table rows are evaluated unconditionally
      cfg.conditional = false;
      row.apply(cfg);
      if (options.steps >= 0) cfg.steps = options.steps;
      cfg.validate();
      const auto key = cfg.hash();
      if (auto it = cache.find(key); it != cache.end()) {
        result = it->second;
        result.name = row.name;
      } else {
        if (progress) *progress << "training row '" << row.name << "' for " << cfg.steps << " steps\n" << std::flush;
        Trainer trainer(cfg, corpus);
        trainer.train();
        result.metrics = evaluate_trainer(trainer, embedder, options.eval);
        result.preview = to_image(trainer.reconstruct(trainer.make_batch({0}))[0]);
        result.ok = true;
        cache[key] = result;
        if (options.on_trained) options.on_trained(row.name, trainer);
      }
    } catch (const std::exception& e) {
      result.ok = false;
      result.error = e.what();
      if (progress) *progress << "row '" << row.name << "' failed: " << e.what() << "\n";
    }
    results.push_back(result);
  }
  return results;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationResult>& results) {
  std::ofstream out(path);
  if (!out) throw IoError(path, "cannot write table");
  out << "model,status";
  for (const char* metric : {"ssim", "psnr"})
    for (const char* region : {"head", "hand", "torso", "composite"})
      out << "," << metric << "_" << region << "_mean," << metric << "_" << region << "_std";
  for (const char* region : {"head", "hand", "torso", "composite"}) out << ",fid_" << region;
  out << ",note\n";
  auto num = [](double v) {
    if (v != v) return std::string();
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
  };
  for (const auto& r : results) {
    out << '"' << r.name << "\"," << (r.external ? "external" : r.ok ? "ok" : "failed");
    for (const auto* table : {&r.metrics.ssim, &r.metrics.psnr})
      for (const char* region : {"head", "hand", "torso", "composite"}) {
        const auto it = table->find(region);
        const MetricStat s = it == table->end() ? MetricStat{} : it->second;
        out << "," << num(s.mean) << "," << num(s.std);
      }
    for (const char* region : {"head", "hand", "torso", "composite"}) {
      const auto it = r.metrics.fid.find(region);
      out << "," << (it == r.metrics.fid.end() ? std::string() : num(it->second));
    }
    std::string note = r.error;
    std::replace(note.begin(), note.end(), '"', '\'');
    std::replace(note.begin(), note.end(), '\n', ' ');
    out << ",\"" << note << "\"\n";
  }
}

Image ablation_grid(const Corpus& corpus, const std::vector<AblationResult>& results) {
  std::vector<Image> tiles;
  if (corpus.records.empty()) throw ParameterError("ablation grid: empty corpus");
  tiles.push_back(corpus.records.front().image);
  for (const auto& r : results)
    if (r.ok && !r.preview.empty()) tiles.push_back(r.preview);
  return tile_images(tiles, static_cast<int>(tiles.size()));
}

}  // namespace penet
