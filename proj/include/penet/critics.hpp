#pragma once

#include <torch/torch.h>

#include <vector>

#include "penet/synthdata.hpp"

namespace penet {

struct DiscriminatorConfig {
  int64_t n_scales = 2;
  int64_t layers = 4;         // L^D, the last one emits the patch logits
  int64_t in_channels = 12;   // pose channels + three RGB parts
  int64_t base_channels = 32;
  int64_t max_channels = 128;
  void validate() const;
};

struct ScaleOutput {
  torch::Tensor logits;                // [B, 1, h, w]
  std::vector<torch::Tensor> features;  // L^D entries, the last equals logits
};

/// Patch discriminator over one scale.
struct PatchDiscriminatorImpl : torch::nn::Module {
  explicit PatchDiscriminatorImpl(const DiscriminatorConfig& config);
  ScaleOutput forward(const torch::Tensor& x);
  torch::nn::ModuleList convs;
};
TORCH_MODULE(PatchDiscriminator);

struct MultiScaleDiscriminatorImpl : torch::nn::Module {
  explicit MultiScaleDiscriminatorImpl(DiscriminatorConfig config);
  // y (+) x_hand (+) x_head (+) x_torso; scale k sees the input downsampled k times
  std::vector<ScaleOutput> forward(const torch::Tensor& y, const torch::Tensor& parts);

  DiscriminatorConfig config;
  torch::nn::ModuleList scales;
};
TORCH_MODULE(MultiScaleDiscriminator);

// Per-sample L1 over each feature map, summed over layers and scales, batch mean.
// Real features are treated as constants.
torch::Tensor feature_matching_loss(const std::vector<ScaleOutput>& real, const std::vector<ScaleOutput>& fake);

struct AdversarialLosses {
  torch::Tensor d_loss;
  torch::Tensor g_loss;
};

// Logistic loss averaged over patches and scales; the generator term is non-saturating.
AdversarialLosses adversarial_losses(const std::vector<torch::Tensor>& real_logits,
                                     const std::vector<torch::Tensor>& fake_logits);
std::vector<torch::Tensor> logits_of(const std::vector<ScaleOutput>& outputs);

/// Frozen random conv backbone with a trainable linear head per attribute key.
struct AttributeClassifierImpl : torch::nn::Module {
  AttributeClassifierImpl(std::vector<AttributeKey> keys, std::uint64_t seed);
  std::vector<torch::Tensor> forward(const torch::Tensor& x);  // logits per key
  torch::Tensor features(const torch::Tensor& x);
  // Fits the heads on labelled images; returns the final training accuracy.
  double fit(const torch::Tensor& images, const std::vector<SignerSpec>& labels, int steps);
  // Freezes everything (used during PENet training).
  void freeze();

  std::vector<AttributeKey> keys;
  torch::nn::Sequential backbone{nullptr};
  torch::nn::ModuleList heads;
};
TORCH_MODULE(AttributeClassifier);

// Label indices per key; throws VocabularyError on unknown labels.
std::vector<torch::Tensor> attribute_targets(const std::vector<AttributeKey>& keys, const std::vector<SignerSpec>& labels);
// Sum over keys of the batch-mean cross-entropy.
torch::Tensor attribute_loss(const std::vector<torch::Tensor>& logits, const std::vector<torch::Tensor>& targets);

}  // namespace penet
