#pragma once

#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "penet/evalkit.hpp"
#include "penet/train_config.hpp"
#include "penet/trainer.hpp"

namespace penet {

struct AblationRow {
  std::string name;
  std::function<void(TrainConfig&)> apply;
  bool external = false;  // published baseline, not trainable here
};

// Eleven PENet rows plus the two external baseline placeholders, in table order.
std::vector<AblationRow> table_rows();

struct EvalOptions {
  int samples_per_pose = 5;
  std::uint64_t seed = 0;
};

// Pixel metrics from posterior-mean reconstructions, FID from prior samples,
// over every corpus frame.
RegionMetrics evaluate_trainer(Trainer& trainer, FeatureExtractor& embedder, const EvalOptions& options = {});

struct AblationResult {
  std::string name;
  bool external = false;
  bool ok = false;
  std::string error;
  RegionMetrics metrics;
  Image preview;  // reconstruction of frame 0
};

struct AblationOptions {
  int steps = -1;                  // overrides config.steps when >= 0
  std::vector<std::string> only;   // restrict to these row names
  EvalOptions eval;
  // called with each freshly trained row before it is discarded
  std::function<void(const std::string& row, Trainer& trainer)> on_trained;
};

// Trains each row from the shared seed; a failing row is recorded and skipped.
std::vector<AblationResult> run_ablation(const TrainConfig& base, const Corpus& corpus, const AblationOptions& options,
                                         std::ostream* progress = nullptr);

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationResult>& results);
// Ground truth followed by each trained row's reconstruction.
Image ablation_grid(const Corpus& corpus, const std::vector<AblationResult>& results);

}  // namespace penet
