#include "penet/pevae.hpp"

#include "penet/errors.hpp"

namespace penet {

namespace {

torch::nn::Sequential mlp_head(int64_t in, int64_t out) {
  return torch::nn::Sequential(torch::nn::Linear(in, in), torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)),
                               torch::nn::Linear(in, out));
}

}  // namespace

std::string scheme_name(FusionScheme scheme) {
  switch (scheme) {
    case FusionScheme::kEarly: return "early";
    case FusionScheme::kShared: return "shared";
    case FusionScheme::kSeparate: return "separate";
  }
  return "separate";
}

FusionScheme parse_scheme(const std::string& name) {
  if (name == "early") return FusionScheme::kEarly;
  if (name == "shared") return FusionScheme::kShared;
  if (name == "separate") return FusionScheme::kSeparate;
  throw ParameterError("unknown fusion scheme '" + name + "'");
}

void PosteriorConfig::validate() const {
  if (latent_dim < 1) throw ParameterError("posterior: latent dimension must be >= 1");
  if (widths.empty() || grid() < patch) throw ParameterError("posterior: encoder too deep for the image size");
  if (dim % heads != 0) throw ParameterError("posterior: dim must be divisible by heads");
  if (scheme == FusionScheme::kShared && attribute_upsampled)
    throw ParameterError("posterior: the shared pose encoder cannot take y (+) a-up");
  if (scheme == FusionScheme::kShared && use_pose && shared_channels <= 0)
    throw ParameterError("posterior: shared scheme needs the generator feature width");
  if (conv_fusion && (scheme != FusionScheme::kSeparate || !use_pose))
    throw ParameterError("posterior: conv fusion needs separate image and pose encoders");
}

PosteriorEncoderImpl::PosteriorEncoderImpl(PosteriorConfig cfg) : config(std::move(cfg)) {
  config.validate();
  const int64_t g = config.grid(), last = config.widths.back();
  const int64_t pose_in = config.y_channels + (config.attribute_upsampled ? 3 : 0);
  const bool early = config.scheme == FusionScheme::kEarly && config.use_pose;
  image_stack = register_module("image_stack",
                                make_down_stack(config.x_channels + (early ? pose_in : 0), config.widths));
  const bool own_pose_stack = config.use_pose && config.scheme == FusionScheme::kSeparate;
  if (own_pose_stack) pose_stack = register_module("pose_stack", make_down_stack(pose_in, config.widths));

  if (config.conv_fusion) {
    conv_fuse = register_module("conv_fuse", ConvFuse(last, last, last));
    conv_proj = register_module("conv_proj", torch::nn::Linear(last, config.dim));
  } else {
    image_tokens = register_module("image_tokens", PatchEmbed(last, g, g, config.patch, config.dim));
    if (own_pose_stack) pose_tokens = register_module("pose_tokens", PatchEmbed(last, g, g, config.patch, config.dim));
    if (config.use_pose && config.scheme == FusionScheme::kShared)
      pose_tokens = register_module("pose_tokens", PatchEmbed(config.shared_channels, g, g, config.patch, config.dim));
    fuse = register_module("fuse", MhaFuse(config.dim, config.heads, config.layers));
  }
  if (config.attribute_token) attribute_proj = register_module("attribute_proj", torch::nn::Linear(config.attribute_dim, config.dim));
  mu_head = register_module("mu_head", mlp_head(config.dim, config.latent_dim));
  log_var_head = register_module("log_var_head", mlp_head(config.dim, config.latent_dim));
}

PosteriorParams PosteriorEncoderImpl::forward(const PosteriorInputs& in) {
  const int64_t s = config.image_size;
  if (in.x.dim() != 4 || in.x.size(2) != s || in.x.size(3) != s || in.x.size(1) != config.x_channels)
    throw ParameterError("posterior: image shape does not match the configuration");
  torch::Tensor pose_input;
  if (config.use_pose) {
    if (in.y.dim() != 4 || in.y.sizes().slice(2) != in.x.sizes().slice(2) || in.y.size(0) != in.x.size(0) ||
        in.y.size(1) != config.y_channels)
      throw ParameterError("posterior: pose and image shapes differ");
    pose_input = in.y;
    if (config.attribute_upsampled) {
      if (!in.attribute_up.defined() || in.attribute_up.sizes().slice(2) != in.y.sizes().slice(2))
        throw ParameterError("posterior: upsampled attribute map missing or misshaped");
      pose_input = torch::cat({in.y, in.attribute_up}, 1);
    }
  }
  torch::Tensor attr_token;
  if (config.attribute_token) {
    if (!in.attribute.defined() || in.attribute.size(-1) != config.attribute_dim)
      throw ParameterError("posterior: attribute embedding missing");
    attr_token = attribute_proj(in.attribute).unsqueeze(1);
  }

  torch::Tensor fused;
  if (config.conv_fusion) {
    auto f = conv_fuse(image_stack->forward(in.x), pose_stack->forward(pose_input)).mean({2, 3});
    fused = conv_proj(f);
    if (attr_token.defined()) fused = fused + attr_token.squeeze(1);
  } else {
    const bool early = config.scheme == FusionScheme::kEarly && config.use_pose;
    auto image_seq = image_tokens(image_stack->forward(early ? torch::cat({in.x, pose_input}, 1) : in.x));
    std::vector<torch::Tensor> rest;
    if (config.use_pose && config.scheme == FusionScheme::kSeparate) rest.push_back(pose_tokens(pose_stack->forward(pose_input)));
    if (config.use_pose && config.scheme == FusionScheme::kShared) {
      if (!in.shared_pose.defined()) throw ParameterError("posterior: shared scheme needs the generator pose feature");
      rest.push_back(pose_tokens(in.shared_pose));
    }
    if (attr_token.defined()) rest.push_back(attr_token);
    fused = fuse(image_seq, rest.empty() ? torch::Tensor() : torch::cat(rest, 1));
  }
  return {mu_head->forward(fused), log_var_head->forward(fused)};
}

torch::Tensor reparameterize(const PosteriorParams& params, torch::Generator& gen) {
  auto eps = torch::randn(params.mu.sizes(), gen, params.mu.options());
  return params.mu + torch::exp(0.5 * params.log_var) * eps;
}

torch::Tensor kl_loss(const PosteriorParams& params) {
  auto per_dim = 0.5 * (params.mu.pow(2) + params.log_var.exp() - 1 - params.log_var);
  return per_dim.flatten(1).sum(1).mean();
}

torch::Tensor sample_prior(torch::Generator& gen, int64_t batch, int64_t latent_dim) {
  if (latent_dim < 1 || batch < 1) throw ParameterError("sample_prior: sizes must be positive");
  return torch::randn({batch, latent_dim}, gen);
}

}  // namespace penet
