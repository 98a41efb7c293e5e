#pragma once

#include <torch/torch.h>

#include <memory>
#include <vector>

namespace penet {

/// Frozen multi-tap feature network used by the perceptual loss and as the
/// default FID embedding.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<torch::Tensor> taps(const torch::Tensor& x) = 0;
  // Pooled embedding used for FID.
  virtual torch::Tensor embed(const torch::Tensor& x) = 0;
  virtual int64_t embedding_dim() const = 0;
};

/// Five-tap conv net with fixed random weights drawn from `seed`.
class RandomConvExtractor : public FeatureExtractor {
 public:
  explicit RandomConvExtractor(std::uint64_t seed = 7, int64_t embedding_dim = 64);
  std::vector<torch::Tensor> taps(const torch::Tensor& x) override;
  torch::Tensor embed(const torch::Tensor& x) override;
  int64_t embedding_dim() const override { return embedding_dim_; }
  // widths of the five taps
  static const std::vector<int64_t>& tap_channels();

 private:
  std::vector<torch::Tensor> weights_, biases_;
  torch::Tensor projection_;  // [sum(tap_channels), embedding_dim]
  int64_t embedding_dim_;
};

// sum over taps of the per-sample L2 norm of the feature difference, batch mean
torch::Tensor perceptual_loss(const torch::Tensor& x, const torch::Tensor& x_hat, FeatureExtractor& extractor);

struct EdgeMaps {
  torch::Tensor sobel, laplacian, canny;  // [B, 1, H, W], non-negative
};

torch::Tensor to_grayscale(const torch::Tensor& rgb);
EdgeMaps edge_maps(const torch::Tensor& image);
// sum over the three operators of the per-sample L1 map difference, batch mean
torch::Tensor edge_loss(const torch::Tensor& x, const torch::Tensor& x_hat);

struct LossWeights {
  double edge = 0.01;
  double attrib = 0.001;
  double beta = 0.001;
};

// Undefined tensors count as zero.
struct LossComponents {
  torch::Tensor perc, feat, edge, attrib, vae;
};

struct LossReport {
  double perc = 0, feat = 0, edge = 0, attrib = 0, vae = 0, total = 0, d_loss = 0;
};

struct TotalLoss {
  torch::Tensor total;
  LossReport report;
};

TotalLoss total_generator_loss(const LossComponents& components, const LossWeights& weights);

}  // namespace penet
