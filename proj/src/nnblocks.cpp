#include "penet/nnblocks.hpp"

#include <cmath>

#include "penet/errors.hpp"

namespace penet {

namespace F = torch::nn::functional;

namespace {

torch::Tensor leaky(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); }

torch::nn::Conv2d conv3x3(int64_t in, int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(1).padding(1));
}

torch::nn::Conv2d conv4x4_down(int64_t in, int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1));
}

}  // namespace

PatchEmbedImpl::PatchEmbedImpl(int64_t in_channels, int64_t height, int64_t width, int64_t patch, int64_t dim,
                               bool positional)
    : height_(height), width_(width), patch_(patch) {
  if (patch <= 0 || patch > height || patch > width)
    throw ParameterError("patchify_embed: patch larger than the image");
  num_patches_ = (height / patch) * (width / patch);
  proj = register_module("proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, dim, patch)
                                                       .stride(patch)
                                                       .bias(false)));
  cls_token = register_parameter("cls_token", torch::randn({1, 1, dim}) * 0.02);
  if (positional) pos_embed = register_parameter("pos_embed", torch::randn({1, num_patches_ + 1, dim}) * 0.02);
}

torch::Tensor PatchEmbedImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(2) != height_ || x.size(3) != width_)
    throw ParameterError("patchify_embed: input does not match the configured image size");
  auto tokens = proj(x).flatten(2).transpose(1, 2);
  auto seq = torch::cat({cls_token.expand({x.size(0), 1, cls_token.size(2)}), tokens}, 1);
  return pos_embed.defined() ? seq + pos_embed : seq;
}

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int64_t dim, int64_t heads_) : heads(heads_) {
  if (heads_ <= 0 || dim % heads_ != 0) throw ParameterError("attention: dim must be divisible by heads");
  query = register_module("query", torch::nn::Linear(dim, dim));
  key = register_module("key", torch::nn::Linear(dim, dim));
  value = register_module("value", torch::nn::Linear(dim, dim));
  out = register_module("out", torch::nn::Linear(dim, dim));
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& x) {
  const int64_t b = x.size(0), t = x.size(1), d = x.size(2), dh = d / heads;
  auto split = [&](const torch::Tensor& v) { return v.view({b, t, heads, dh}).transpose(1, 2); };
  const auto q = split(query(x)), k = split(key(x)), v = split(value(x));
  const auto weights = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh)), -1);
  return out(torch::matmul(weights, v).transpose(1, 2).reshape({b, t, d}));
}

TransformerLayerImpl::TransformerLayerImpl(int64_t dim, int64_t heads, int64_t mlp_ratio) {
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn = register_module("attn", MultiHeadAttention(dim, heads));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  fc1 = register_module("fc1", torch::nn::Linear(dim, dim * mlp_ratio));
  fc2 = register_module("fc2", torch::nn::Linear(dim * mlp_ratio, dim));
}

torch::Tensor TransformerLayerImpl::forward(const torch::Tensor& z) {
  const auto y = attn(norm1(z)) + z;
  return fc2(F::gelu(fc1(norm2(y)))) + y;
}

MhaFuseImpl::MhaFuseImpl(int64_t dim_, int64_t heads, int64_t n_layers) : dim(dim_) {
  if (n_layers < 1) throw ParameterError("mha_fuse: need at least one layer");
  cls_token = register_parameter("cls_token", torch::randn({1, 1, dim_}) * 0.02);
  layers = register_module("layers", torch::nn::ModuleList());
  for (int64_t i = 0; i < n_layers; ++i) layers->push_back(TransformerLayer(dim_, heads));
}

torch::Tensor MhaFuseImpl::forward(const torch::Tensor& seq_a, const torch::Tensor& seq_b) {
  if (seq_a.dim() != 3 || seq_a.size(2) != dim) throw ParameterError("mha_fuse: sequence width mismatch");
  std::vector<torch::Tensor> parts = {cls_token.expand({seq_a.size(0), 1, dim}), seq_a};
  if (seq_b.defined() && seq_b.numel() > 0) {
    if (seq_b.dim() != 3 || seq_b.size(2) != dim || seq_b.size(0) != seq_a.size(0))
      throw ParameterError("mha_fuse: sequence width mismatch");
    parts.push_back(seq_b);
  }
  auto z = torch::cat(parts, 1);
  for (const auto& layer : *layers) z = layer->as<TransformerLayer>()->forward(z);
  return z.select(1, 0);
}

ConvFuseImpl::ConvFuseImpl(int64_t channels_a, int64_t channels_b, int64_t out_channels) {
  conv = register_module("conv", conv3x3(channels_a + channels_b, out_channels));
}

torch::Tensor ConvFuseImpl::forward(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.dim() != 4 || b.dim() != 4 || a.size(0) != b.size(0) || a.size(2) != b.size(2) || a.size(3) != b.size(3))
    throw ParameterError("conv_fuse: feature maps are not spatially aligned");
  return leaky(conv(torch::cat({a, b}, 1)));
}

torch::Tensor instance_normalize(const torch::Tensor& x, double eps) {
  const auto mean = x.mean({2, 3}, true);
  const auto var = (x - mean).pow(2).mean({2, 3}, true);
  return (x - mean) / torch::sqrt(var + eps);
}

PsiModulateImpl::PsiModulateImpl(int64_t channels, int64_t style_dim) {
  scale = register_module("scale", torch::nn::Linear(style_dim, channels));
  shift = register_module("shift", torch::nn::Linear(style_dim, channels));
}

torch::Tensor PsiModulateImpl::forward(const torch::Tensor& feature, const torch::Tensor& style) {
  const auto s = scale(style).unsqueeze(-1).unsqueeze(-1);
  const auto b = shift(style).unsqueeze(-1).unsqueeze(-1);
  return instance_normalize(feature) * (1 + s) + b;
}

PsiConvImpl::PsiConvImpl(int64_t channels, int64_t style_dim, int64_t style_channels) {
  style_proj = register_module("style_proj", torch::nn::Linear(style_dim, style_channels));
  conv = register_module("conv", conv3x3(channels + style_channels, channels));
}

torch::Tensor PsiConvImpl::forward(const torch::Tensor& feature, const torch::Tensor& style) {
  const auto tiled = style_proj(style).unsqueeze(-1).unsqueeze(-1).expand(
      {feature.size(0), -1, feature.size(2), feature.size(3)});
  return leaky(conv(torch::cat({feature, tiled}, 1)));
}

SkipMixerImpl::SkipMixerImpl(PsiMode mode_, int64_t channels, int64_t style_dim) : mode(mode_) {
  if (mode == PsiMode::kModulate) modulate = register_module("modulate", PsiModulate(channels, style_dim));
  if (mode == PsiMode::kConv) conv = register_module("conv", PsiConv(channels, style_dim));
}

torch::Tensor SkipMixerImpl::forward(const torch::Tensor& feature, const torch::Tensor& style) {
  switch (mode) {
    case PsiMode::kModulate: return modulate(feature, style);
    case PsiMode::kConv: return conv(feature, style);
    case PsiMode::kNone: return feature;
  }
  return feature;
}

int64_t UNetConfig::channels(int64_t level) const {
  return std::min(base_channels << level, max_channels);
}

void UNetConfig::validate() const {
  if (levels < 1 || base_channels < 1 || in_channels < 1)
    throw ParameterError("unet: levels, channels must be positive");
  if (image_size % (int64_t{1} << levels) != 0)
    throw ParameterError("unet: image size must be divisible by 2^levels");
}

UNetEncoderImpl::UNetEncoderImpl(UNetConfig cfg) : config(cfg) {
  config.validate();
  blocks = register_module("blocks", torch::nn::ModuleList());
  blocks->push_back(conv3x3(config.in_channels, config.channels(0)));
  for (int64_t i = 1; i < config.levels; ++i) blocks->push_back(conv4x4_down(config.channels(i - 1), config.channels(i)));
  const int64_t last = config.channels(config.levels - 1), neck = config.channels(config.levels);
  bottleneck_down = register_module("bottleneck_down", conv4x4_down(last, neck));
  bottleneck_conv = register_module("bottleneck_conv", conv3x3(neck, neck));
}

EncoderFeatures UNetEncoderImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != config.in_channels || x.size(2) != config.image_size ||
      x.size(3) != config.image_size)
    throw ParameterError("generator: input does not match the configured size");
  EncoderFeatures out;
  auto h = x;
  for (const auto& block : *blocks) {
    h = leaky(block->as<torch::nn::Conv2d>()->forward(h));
    out.levels.push_back(h);
  }
  out.bottleneck = leaky(bottleneck_conv(leaky(bottleneck_down(h))));
  return out;
}

UNetDecoderImpl::UNetDecoderImpl(UNetConfig cfg, DecoderOptions opts, std::vector<SkipMixer> shared_mixers)
    : config(cfg), options(opts) {
  config.validate();
  up_convs = register_module("up_convs", torch::nn::ModuleList());
  out_convs = register_module("out_convs", torch::nn::ModuleList());
  const bool shared = !shared_mixers.empty();
  if (shared && static_cast<int64_t>(shared_mixers.size()) != config.levels)
    throw ParameterError("decoder: shared aggregator count must equal the level count");
  for (int64_t i = 0; i < config.levels; ++i) {
    up_convs->push_back(conv3x3(config.channels(i + 1), config.channels(i)));
    out_convs->push_back(conv3x3(mixer_channels(i), config.channels(i)));
    if (shared) {
      mixers.push_back(shared_mixers[i]);
    } else {
      mixers.push_back(register_module("mixer" + std::to_string(i),
                                       SkipMixer(options.psi, mixer_channels(i), options.style_dim)));
    }
  }
  if (options.psi == PsiMode::kNone)
    bottleneck_style = register_module("bottleneck_style",
                                       torch::nn::Linear(options.style_dim, config.channels(config.levels)));
  to_rgb = register_module("to_rgb", conv3x3(config.channels(0), options.out_channels));
}

int64_t UNetDecoderImpl::mixer_channels(int64_t level) const {
  return options.skips ? 2 * config.channels(level) : config.channels(level);
}

torch::Tensor UNetDecoderImpl::forward(const EncoderFeatures& features, const torch::Tensor& style,
                                       std::vector<torch::Tensor>* level_outputs) {
  auto x = features.bottleneck;
  if (bottleneck_style) x = x + bottleneck_style(style).unsqueeze(-1).unsqueeze(-1);
  for (int64_t i = config.levels - 1; i >= 0; --i) {
    x = F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
    x = leaky(up_convs[i]->as<torch::nn::Conv2d>()->forward(x));
    auto skip = options.skips ? torch::cat({features.levels[i], x}, 1) : x;
    x = leaky(out_convs[i]->as<torch::nn::Conv2d>()->forward(mixers[i]->forward(skip, style)));
    if (level_outputs) level_outputs->push_back(x);
  }
  return torch::sigmoid(to_rgb(x));
}

torch::nn::Sequential make_down_stack(int64_t in_channels, const std::vector<int64_t>& widths) {
  torch::nn::Sequential seq;
  int64_t c = in_channels;
  for (int64_t w : widths) {
    seq->push_back(conv4x4_down(c, w));
    seq->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    c = w;
  }
  return seq;
}

void zero_parameters(torch::nn::Module& module) {
  torch::NoGradGuard guard;
  for (auto& p : module.parameters()) p.zero_();
}

}  // namespace penet
