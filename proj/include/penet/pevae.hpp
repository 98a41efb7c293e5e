#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include "penet/nnblocks.hpp"

namespace penet {

enum class FusionScheme { kEarly, kShared, kSeparate };

std::string scheme_name(FusionScheme scheme);
FusionScheme parse_scheme(const std::string& name);

struct PosteriorConfig {
  FusionScheme scheme = FusionScheme::kSeparate;
  int64_t latent_dim = 64;
  int64_t dim = 256;
  int64_t heads = 4;
  int64_t layers = 2;
  int64_t image_size = 64;
  int64_t x_channels = 3;
  int64_t y_channels = 3;
  std::vector<int64_t> widths{32, 64, 128};  // strided stack down to the token grid
  int64_t patch = 2;
  bool use_pose = true;            // false: q(z|x) baseline without the pose
  bool conv_fusion = false;        // f_xy by ConvFuse instead of attention
  bool attribute_token = false;    // a joins the fused sequence as one token
  bool attribute_upsampled = false;  // pose branch sees y (+) a-up
  int64_t attribute_dim = 512;
  // shared scheme: width of the generator encoder level reused for y
  int64_t shared_channels = 0;

  int64_t grid() const { return image_size >> static_cast<int64_t>(widths.size()); }
  void validate() const;
};

struct PosteriorParams {
  torch::Tensor mu;       // [B, M]
  torch::Tensor log_var;  // [B, M]
};

struct PosteriorInputs {
  torch::Tensor x;                 // target image [B, 3, S, S]
  torch::Tensor y;                 // conditioning [B, Cy, S, S]
  torch::Tensor shared_pose;       // shared scheme: generator encoder feature at the token grid
  torch::Tensor attribute;         // [B, 512] when attribute_token
  torch::Tensor attribute_up;      // [B, 3, S, S] when attribute_upsampled
};

/// q(z | x, y, a): separate image/pose encoders tokenised and fused by
/// attention, with the early / shared / conv-fusion variants.
struct PosteriorEncoderImpl : torch::nn::Module {
  explicit PosteriorEncoderImpl(PosteriorConfig config);
  PosteriorParams forward(const PosteriorInputs& in);

  PosteriorConfig config;
  torch::nn::Sequential image_stack{nullptr}, pose_stack{nullptr};
  PatchEmbed image_tokens{nullptr}, pose_tokens{nullptr};
  MhaFuse fuse{nullptr};
  ConvFuse conv_fuse{nullptr};
  torch::nn::Linear conv_proj{nullptr}, attribute_proj{nullptr};
  torch::nn::Sequential mu_head{nullptr}, log_var_head{nullptr};
};
TORCH_MODULE(PosteriorEncoder);

// z = mu + exp(log_var / 2) * eps, eps ~ N(0, I) from `gen`.
torch::Tensor reparameterize(const PosteriorParams& params, torch::Generator& gen);
// KL(q || N(0, I)) summed over latent dims, averaged over the batch.
torch::Tensor kl_loss(const PosteriorParams& params);
torch::Tensor sample_prior(torch::Generator& gen, int64_t batch, int64_t latent_dim);

}  // namespace penet
