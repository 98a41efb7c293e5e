#pragma once

#include <torch/torch.h>

#include <vector>

namespace penet {

/// Linear patch projection with a learnable class token and positional
/// embedding; token count N = floor(H/h) * floor(W/w).
struct PatchEmbedImpl : torch::nn::Module {
  PatchEmbedImpl(int64_t in_channels, int64_t height, int64_t width, int64_t patch, int64_t dim,
                 bool positional = true);

  // [B, C, H, W] -> [B, N + 1, d]
  torch::Tensor forward(const torch::Tensor& x);
  int64_t num_patches() const { return num_patches_; }

  torch::nn::Conv2d proj{nullptr};
  torch::Tensor cls_token;
  torch::Tensor pos_embed;  // undefined when positional == false

 private:
  int64_t height_, width_, patch_, num_patches_;
};
TORCH_MODULE(PatchEmbed);

struct MultiHeadAttentionImpl : torch::nn::Module {
  MultiHeadAttentionImpl(int64_t dim, int64_t heads);
  torch::Tensor forward(const torch::Tensor& tokens);

  torch::nn::Linear query{nullptr}, key{nullptr}, value{nullptr}, out{nullptr};
  int64_t heads;
};
TORCH_MODULE(MultiHeadAttention);

/// Pre-norm layer: y = Att(LN(z)) + z, z' = MLP(LN(y)) + y.
struct TransformerLayerImpl : torch::nn::Module {
  TransformerLayerImpl(int64_t dim, int64_t heads, int64_t mlp_ratio = 4);
  torch::Tensor forward(const torch::Tensor& tokens);

  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  MultiHeadAttention attn{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(TransformerLayer);

/// Concatenates two token sequences behind its own class token, runs
/// n_layers transformer layers and returns the class-token output [B, d].
struct MhaFuseImpl : torch::nn::Module {
  MhaFuseImpl(int64_t dim, int64_t heads, int64_t n_layers = 2);
  torch::Tensor forward(const torch::Tensor& seq_a, const torch::Tensor& seq_b = {});

  torch::Tensor cls_token;
  torch::nn::ModuleList layers;
  int64_t dim;
};
TORCH_MODULE(MhaFuse);

/// Channel concatenation, 3x3 conv (stride 1, pad 1), LeakyReLU(0.2).
struct ConvFuseImpl : torch::nn::Module {
  ConvFuseImpl(int64_t channels_a, int64_t channels_b, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& a, const torch::Tensor& b);

  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(ConvFuse);

// Per-sample, per-channel spatial standardisation.
torch::Tensor instance_normalize(const torch::Tensor& x, double eps = 1e-5);

/// Style modulation of a skip feature: IN(f) * (1 + s(z)) + b(z).
struct PsiModulateImpl : torch::nn::Module {
  PsiModulateImpl(int64_t channels, int64_t style_dim);
  torch::Tensor forward(const torch::Tensor& feature, const torch::Tensor& style);

  torch::nn::Linear scale{nullptr}, shift{nullptr};
};
TORCH_MODULE(PsiModulate);

/// Ablation variant: the style is tiled and concatenated, then a plain conv.
struct PsiConvImpl : torch::nn::Module {
  PsiConvImpl(int64_t channels, int64_t style_dim, int64_t style_channels = 16);
  torch::Tensor forward(const torch::Tensor& feature, const torch::Tensor& style);

  torch::nn::Linear style_proj{nullptr};
  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(PsiConv);

enum class PsiMode { kModulate, kConv, kNone };

/// Skip aggregator selected by mode; kNone passes the feature through.
struct SkipMixerImpl : torch::nn::Module {
  SkipMixerImpl(PsiMode mode, int64_t channels, int64_t style_dim);
  torch::Tensor forward(const torch::Tensor& feature, const torch::Tensor& style);

  PsiMode mode;
  PsiModulate modulate{nullptr};
  PsiConv conv{nullptr};
};
TORCH_MODULE(SkipMixer);

struct UNetConfig {
  int64_t levels = 5;
  int64_t base_channels = 32;
  int64_t max_channels = 256;
  int64_t in_channels = 3;
  int64_t image_size = 64;

  // feature width at encoder level i (level L is the bottleneck)
  int64_t channels(int64_t level) const;
  // spatial size at encoder level i
  int64_t spatial(int64_t level) const { return image_size >> level; }
  void validate() const;
};

struct EncoderFeatures {
  std::vector<torch::Tensor> levels;  // level i at image_size / 2^i
  torch::Tensor bottleneck;           // image_size / 2^L
};

/// Level 0 is a full-resolution stem; each further level halves the size.
struct UNetEncoderImpl : torch::nn::Module {
  explicit UNetEncoderImpl(UNetConfig config);
  EncoderFeatures forward(const torch::Tensor& x);

  UNetConfig config;
  torch::nn::ModuleList blocks;
  torch::nn::Conv2d bottleneck_down{nullptr}, bottleneck_conv{nullptr};
};
TORCH_MODULE(UNetEncoder);

struct DecoderOptions {
  PsiMode psi = PsiMode::kModulate;
  bool skips = true;
  int64_t style_dim = 256;
  int64_t out_channels = 3;
};

/// Decoder mirror of UNetEncoder; at every level the skip f_E^i (+) f_D is
/// passed through its own aggregator together with the style code.
struct UNetDecoderImpl : torch::nn::Module {
  UNetDecoderImpl(UNetConfig config, DecoderOptions options, std::vector<SkipMixer> shared_mixers = {});

  // Returns sigmoid-bounded output; `level_outputs` receives each level's feature.
  torch::Tensor forward(const EncoderFeatures& features, const torch::Tensor& style,
                        std::vector<torch::Tensor>* level_outputs = nullptr);

  // channel count entering the mixer at a level
  int64_t mixer_channels(int64_t level) const;

  UNetConfig config;
  DecoderOptions options;
  torch::nn::ModuleList up_convs, out_convs;
  std::vector<SkipMixer> mixers;  // index = encoder level
  torch::nn::Linear bottleneck_style{nullptr};
  torch::nn::Conv2d to_rgb{nullptr};
};
TORCH_MODULE(UNetDecoder);

// Plain strided conv stack [C -> widths...], each 4x4/s2 with LeakyReLU.
torch::nn::Sequential make_down_stack(int64_t in_channels, const std::vector<int64_t>& widths);

void zero_parameters(torch::nn::Module& module);

}  // namespace penet
