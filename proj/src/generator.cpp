#include "penet/generator.hpp"

#include <fstream>

#include <json.hpp>

#include "penet/errors.hpp"
#include "penet/tensor_utils.hpp"

namespace penet {

torch::Tensor AttributeEncoder::encode_batch(const std::vector<SignerSpec>& labels) const {
  std::vector<torch::Tensor> rows;
  rows.reserve(labels.size());
  for (const auto& l : labels) rows.push_back(encode(l));
  return torch::stack(rows);
}

int64_t AttributeEncoder::combination_index(const SignerSpec& labels) const {
  int64_t index = 0;
  for (AttributeKey key : keys_) {
    const int64_t radix = static_cast<int64_t>(attribute_vocabulary(key).size());
    index = index * radix + attribute_index(key, labels.label(key));
  }
  return index;
}

int64_t AttributeEncoder::combination_count() const {
  int64_t n = 1;
  for (AttributeKey key : keys_) n *= static_cast<int64_t>(attribute_vocabulary(key).size());
  return n;
}

OrthogonalAttributeEncoder::OrthogonalAttributeEncoder(std::vector<AttributeKey> keys, std::uint64_t seed,
                                                       int64_t dim)
    : AttributeEncoder(std::move(keys)) {
  const int64_t n = combination_count();
  if (dim < n) throw ParameterError("attribute encoder: more combinations than embedding dimensions");
  auto gen = make_generator(seed);
  auto gaussian = torch::randn({dim, n}, gen, torch::kFloat64);
  basis_ = std::get<0>(torch::linalg_qr(gaussian)).to(torch::kFloat32).contiguous();
}

torch::Tensor OrthogonalAttributeEncoder::encode(const SignerSpec& labels) const {
  return basis_.select(1, combination_index(labels)).clone();
}

TableAttributeEncoder::TableAttributeEncoder(std::vector<AttributeKey> keys,
                                             std::map<std::string, std::vector<float>> table)
    : AttributeEncoder(std::move(keys)) {
  for (auto& [k, v] : table) {
    if (static_cast<int64_t>(v.size()) != kAttributeDim)
      throw ParameterError("attribute table: embedding for '" + k + "' is not 512-d");
    table_[k] = torch::tensor(v, torch::kFloat32);
  }
}

std::unique_ptr<TableAttributeEncoder> TableAttributeEncoder::from_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open attribute table");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path, std::string("malformed attribute table: ") + e.what());
  }
  std::vector<AttributeKey> keys;
  for (const auto& k : doc.at("keys")) keys.push_back(parse_attribute_key(k.get<std::string>()));
  std::map<std::string, std::vector<float>> table;
  for (auto& [k, v] : doc.at("embeddings").items()) table[k] = v.get<std::vector<float>>();
  return std::make_unique<TableAttributeEncoder>(std::move(keys), std::move(table));
}

torch::Tensor TableAttributeEncoder::encode(const SignerSpec& labels) const {
  combination_index(labels);  // vocabulary check
  const auto it = table_.find(combination_key(labels, keys_));
  if (it == table_.end()) throw VocabularyError("attribute table has no entry for " + combination_key(labels, keys_));
  return it->second.clone();
}

AttributeUpsamplerImpl::AttributeUpsamplerImpl(int64_t image_size, int64_t attribute_dim, int64_t channels_)
    : seed_size(image_size / 8), channels(channels_) {
  if (image_size % 8 != 0 || image_size < 8) throw ParameterError("attribute upsampler: size must be a multiple of 8");
  auto act = [] { return torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)); };
  mlp = register_module("mlp", torch::nn::Sequential(torch::nn::Linear(attribute_dim, 256), act(),
                                                     torch::nn::Linear(256, 256), act(), torch::nn::Linear(256, 256),
                                                     act(), torch::nn::Linear(256, channels * seed_size * seed_size)));
  auto up = [](int64_t in, int64_t out) {
    return torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1));
  };
  deconv = register_module("deconv", torch::nn::Sequential(up(channels, channels / 2), act(),
                                                           up(channels / 2, channels / 4), act(),
                                                           up(channels / 4, 3), torch::nn::Tanh()));
}

torch::Tensor AttributeUpsamplerImpl::forward(const torch::Tensor& a) {
  auto h = mlp->forward(a).view({a.size(0), channels, seed_size, seed_size});
  return deconv->forward(torch::nn::functional::leaky_relu(h, torch::nn::functional::LeakyReLUFuncOptions().negative_slope(0.2)));
}

void PENetConfig::finalize() {
  unet.in_channels = condition_channels(pose_format);
  unet.validate();
  posterior.latent_dim = latent_dim;
  posterior.image_size = unet.image_size;
  posterior.y_channels = unet.in_channels;
  posterior.attribute_dim = kAttributeDim;
  if (!conditional) {
    posterior.attribute_token = false;
    posterior.attribute_upsampled = false;
  }
  // the shared scheme borrows the generator level whose size equals the token grid
  int64_t level = 0;
  while (level < unet.levels && unet.spatial(level) > posterior.grid()) ++level;
  if (posterior.scheme == FusionScheme::kShared && (level >= unet.levels || unet.spatial(level) != posterior.grid()))
    throw ParameterError("generator: no encoder level matches the shared posterior grid");
  posterior.shared_channels = level < unet.levels ? unet.channels(level) : 0;
  posterior.validate();
}

PENetImpl::PENetImpl(PENetConfig cfg) : config(std::move(cfg)) {
  config.finalize();
  encoder = register_module("encoder", UNetEncoder(config.unet));
  DecoderOptions opts{config.psi, config.skips, config.style_dim, 3};
  std::vector<SkipMixer> mixers;
  if (config.share_psi) {
    shared_mixers = register_module("shared_mixers", torch::nn::ModuleList());
    for (int64_t i = 0; i < config.unet.levels; ++i) {
      const int64_t c = config.skips ? 2 * config.unet.channels(i) : config.unet.channels(i);
      mixers.push_back(SkipMixer(config.psi, c, config.style_dim));
      shared_mixers->push_back(mixers.back());
    }
  }
  head_decoder = register_module("head_decoder", UNetDecoder(config.unet, opts, mixers));
  if (config.hand_decoder) hand_decoder = register_module("hand_decoder", UNetDecoder(config.unet, opts, mixers));
  torso_decoder = register_module("torso_decoder", UNetDecoder(config.unet, opts, mixers));
  z_proj = register_module("z_proj", torch::nn::Linear(config.latent_dim, config.style_dim));
  if (config.conditional) a_proj = register_module("a_proj", torch::nn::Linear(kAttributeDim, config.style_dim));
  style_fuse = register_module("style_fuse", MhaFuse(config.style_dim, config.heads, config.fuse_layers));
  posterior = register_module("posterior", PosteriorEncoder(config.posterior));
  if (config.posterior.attribute_upsampled) upsampler = register_module("upsampler", AttributeUpsampler(config.unet.image_size));
}

torch::Tensor PENetImpl::fuse_style(const torch::Tensor& z, const torch::Tensor& a) {
  if (z.dim() != 2 || z.size(1) != config.latent_dim) throw ParameterError("fuse_style: latent has the wrong size");
  auto z_token = z_proj(z).unsqueeze(1);
  if (!config.conditional) return style_fuse(z_token);
  if (!a.defined() || a.dim() != 2 || a.size(1) != kAttributeDim || a.size(0) != z.size(0))
    throw ParameterError("fuse_style: attribute embedding must be [B, 512]");
  return style_fuse(z_token, a_proj(a).unsqueeze(1));
}

EncoderFeatures PENetImpl::encode_pose(const torch::Tensor& y) { return encoder(y); }

GeneratorOutput PENetImpl::decode(const EncoderFeatures& features, const torch::Tensor& z_a) {
  GeneratorOutput out;
  out.head = head_decoder(features, z_a);
  out.torso = torso_decoder(features, z_a);
  out.hand = hand_decoder ? hand_decoder(features, z_a) : out.torso;
  return out;
}

int64_t PENetImpl::shared_level() const {
  int64_t level = 0;
  while (config.unet.spatial(level) > config.posterior.grid()) ++level;
  return level;
}

torch::Tensor PENetImpl::shared_pose_feature(const EncoderFeatures& features) const {
  return features.levels.at(shared_level());
}

PosteriorParams PENetImpl::encode_posterior(const torch::Tensor& x, const torch::Tensor& y, const torch::Tensor& a,
                                            const EncoderFeatures* features) {
  PosteriorInputs in;
  in.x = x;
  in.y = y;
  if (config.posterior.attribute_token) in.attribute = a;
  if (config.posterior.attribute_upsampled) {
    if (!a.defined()) throw ParameterError("posterior: attribute embedding required");
    in.attribute_up = upsampler(a);
  }
  if (config.posterior.scheme == FusionScheme::kShared && config.posterior.use_pose) {
    if (features) {
      in.shared_pose = shared_pose_feature(*features);
    } else {
      auto f = encode_pose(y);
      in.shared_pose = shared_pose_feature(f);
    }
  }
  return posterior(in);
}

PartMasks resolve_overlaps(const PartMasks& masks) {
  PartMasks out;
  out.hand = masks.hand;
  out.head = masks.head * (1 - masks.hand);
  out.torso = masks.torso * (1 - masks.hand) * (1 - masks.head);
  return out;
}

torch::Tensor compose(const GeneratorOutput& parts, const PartMasks& masks) {
  const auto& ref = parts.head;
  for (const auto* m : {&masks.head, &masks.hand, &masks.torso}) {
    if (!m->defined() || m->dim() != 4 || m->size(0) != ref.size(0) || m->size(1) != 1 ||
        m->sizes().slice(2) != ref.sizes().slice(2))
      throw ParameterError("compose: mask size does not match the parts");
  }
  for (const auto* p : {&parts.hand, &parts.torso})
    if (p->sizes() != ref.sizes()) throw ParameterError("compose: part shapes differ");
  const auto m = resolve_overlaps(masks);
  return parts.hand * m.hand + parts.head * m.head + parts.torso * m.torso;
}

}  // namespace penet
