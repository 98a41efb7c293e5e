#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "penet/critics.hpp"
#include "penet/generator.hpp"
#include "penet/losses.hpp"
#include "penet/synthdata.hpp"
#include "penet/train_config.hpp"

namespace penet {

/// Corpus frames as tensors, ready for batching.
struct TensorCorpus {
  torch::Tensor images;      // [N, 3, S, S]
  torch::Tensor conditions;  // [N, Cy, S, S]
  torch::Tensor masks;       // [N, 3, S, S]: head, hand, torso
  torch::Tensor attributes;  // [N, 512]
  std::vector<SignerSpec> labels;
  std::vector<Pose> poses;
  std::vector<double> weights;  // sampling weights
};

TensorCorpus tensorize(const Corpus& corpus, const TrainConfig& config, const AttributeEncoder& encoder);
torch::Tensor condition_tensor(const Pose& pose, PoseFormat format);
PartMasks masks_from(const torch::Tensor& stacked);  // [B, 3, S, S] -> parts

struct Batch {
  std::vector<std::size_t> indices;
  torch::Tensor x, y, masks, a;
  std::vector<SignerSpec> labels;
};

// One posterior + generator forward pass with the per-part supervision targets.
struct ForwardPass {
  PartMasks masks;  // overlaps resolved
  PosteriorParams posterior;
  GeneratorOutput parts;
  torch::Tensor target_head, target_hand, target_torso;
  torch::Tensor real, fake;  // critic inputs: hand, head, torso
};

/// Full training state: networks, optimisers, RNGs and the loss history.
class Trainer {
 public:
  Trainer(TrainConfig config, Corpus corpus);

  Batch sample_batch();
  Batch make_batch(const std::vector<std::size_t>& indices) const;
  // One critic update then one generator (+ posterior) update.
  LossReport step(const Batch& batch);
  LossReport step() { return step(sample_batch()); }
  // z drawn from the posterior with `gen`
  ForwardPass forward_pass(const Batch& batch, torch::Generator& gen);
  // Generator objective against the current critic (real features held constant).
  TotalLoss generator_loss(const Batch& batch, const ForwardPass& pass, const LossWeights* weights = nullptr);
  // Runs until `config.steps` total steps; writes one JSON line per step.
  void train(std::ostream* log = nullptr, int max_steps = -1);

  // Reconstruction with the posterior mean; composite in [0, 1].
  torch::Tensor reconstruct(const Batch& batch);
  // Synthesis for y with prior samples (or the given z).
  GeneratorOutput synthesize(const torch::Tensor& y, const torch::Tensor& a, const torch::Tensor& z);

  const TrainConfig& config() const { return config_; }
  const Corpus& corpus() const { return corpus_; }
  const TensorCorpus& data() const { return data_; }
  const AttributeEncoder& attribute_encoder() const { return *encoder_; }
  int64_t step_count() const { return step_count_; }
  const std::vector<LossReport>& history() const { return history_; }

  PENet model{nullptr};
  MultiScaleDiscriminator critic{nullptr};
  AttributeClassifier classifier{nullptr};
  std::unique_ptr<FeatureExtractor> extractor;
  std::unique_ptr<torch::optim::Adam> opt_g, opt_d;
  torch::Generator generator;
  std::mt19937_64 rng;

 private:
  friend void save_checkpoint(const Trainer&, const std::filesystem::path&);
  friend void load_checkpoint(Trainer&, const std::filesystem::path&);
  void check_frozen() const;
  [[noreturn]] void abort_non_finite(const Batch& batch, const LossReport& report) const;

  TrainConfig config_;
  Corpus corpus_;
  std::unique_ptr<AttributeEncoder> encoder_;
  TensorCorpus data_;
  int64_t step_count_ = 0;
  std::vector<LossReport> history_;
};

std::string report_json(int64_t step, const LossReport& report);

void save_checkpoint(const Trainer& trainer, const std::filesystem::path& path);
// Refuses (CheckpointError) when the stored config hash differs from the trainer's.
void load_checkpoint(Trainer& trainer, const std::filesystem::path& path);
// Config snapshot embedded in a checkpoint, after verifying its hash.
TrainConfig checkpoint_config(const std::filesystem::path& path);

}  // namespace penet
