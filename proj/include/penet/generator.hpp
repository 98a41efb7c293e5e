#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "penet/nnblocks.hpp"
#include "penet/pevae.hpp"
#include "penet/posekit.hpp"
#include "penet/synthdata.hpp"

namespace penet {

inline constexpr int64_t kAttributeDim = 512;

/// Maps attribute labels to a fixed 512-d embedding.
class AttributeEncoder {
 public:
  virtual ~AttributeEncoder() = default;
  // [512]; throws VocabularyError for labels outside the corpus vocabulary
  virtual torch::Tensor encode(const SignerSpec& labels) const = 0;
  torch::Tensor encode_batch(const std::vector<SignerSpec>& labels) const;  // [B, 512]
  const std::vector<AttributeKey>& keys() const { return keys_; }

 protected:
  explicit AttributeEncoder(std::vector<AttributeKey> keys) : keys_(std::move(keys)) {}
  // mixed-radix index of the label combination over keys()
  int64_t combination_index(const SignerSpec& labels) const;
  int64_t combination_count() const;

  std::vector<AttributeKey> keys_;
};

/// Default stand-in for a text encoder: one-hot combination times a fixed
/// random matrix with orthonormal columns.
class OrthogonalAttributeEncoder : public AttributeEncoder {
 public:
  OrthogonalAttributeEncoder(std::vector<AttributeKey> keys, std::uint64_t seed, int64_t dim = kAttributeDim);
  torch::Tensor encode(const SignerSpec& labels) const override;

 private:
  torch::Tensor basis_;  // [dim, combinations]
};

/// Adapter for externally computed embeddings, keyed by combination_key.
class TableAttributeEncoder : public AttributeEncoder {
 public:
  TableAttributeEncoder(std::vector<AttributeKey> keys, std::map<std::string, std::vector<float>> table);
  // {"keys": ["skin_tone"], "embeddings": {"tone1": [...512 floats], ...}}
  static std::unique_ptr<TableAttributeEncoder> from_json(const std::filesystem::path& path);
  torch::Tensor encode(const SignerSpec& labels) const override;

 private:
  std::map<std::string, torch::Tensor> table_;
};

/// a-up: 4-layer MLP then transpose convs doubling up to the image size.
struct AttributeUpsamplerImpl : torch::nn::Module {
  AttributeUpsamplerImpl(int64_t image_size, int64_t attribute_dim = kAttributeDim, int64_t channels = 32);
  torch::Tensor forward(const torch::Tensor& a);  // [B, 3, S, S] in (-1, 1)

  torch::nn::Sequential mlp{nullptr}, deconv{nullptr};
  int64_t seed_size, channels;
};
TORCH_MODULE(AttributeUpsampler);

struct PENetConfig {
  UNetConfig unet{5, 16, 128, 3, 64};
  PoseFormat pose_format = PoseFormat::kSkeleton;
  PsiMode psi = PsiMode::kModulate;
  bool skips = true;
  bool share_psi = false;       // one set of aggregators for all part decoders
  bool hand_decoder = true;     // false: the torso decoder also paints the hands
  bool conditional = true;      // attribute enters the style code
  int64_t latent_dim = 64;
  int64_t style_dim = 256;
  int64_t heads = 4;
  int64_t fuse_layers = 2;
  PosteriorConfig posterior;    // latent_dim, image_size, y_channels are synced from above

  // fills derived fields and checks consistency
  void finalize();
};

struct GeneratorOutput {
  torch::Tensor head, hand, torso;  // [B, 3, S, S] in [0, 1]
};

struct PartMasks {
  torch::Tensor head, hand, torso;  // [B, 1, S, S] binary
};

/// PENet: shared pose encoder + bottleneck, per-part decoders driven by the
/// fused style code, and the posterior over z.
struct PENetImpl : torch::nn::Module {
  explicit PENetImpl(PENetConfig config);

  torch::Tensor fuse_style(const torch::Tensor& z, const torch::Tensor& a);
  EncoderFeatures encode_pose(const torch::Tensor& y);
  GeneratorOutput decode(const EncoderFeatures& features, const torch::Tensor& z_a);
  GeneratorOutput generate(const torch::Tensor& y, const torch::Tensor& z_a) { return decode(encode_pose(y), z_a); }
  // posterior over z given the target image, pose, attribute
  PosteriorParams encode_posterior(const torch::Tensor& x, const torch::Tensor& y, const torch::Tensor& a,
                                   const EncoderFeatures* features = nullptr);
  // generator feature reused by the shared posterior scheme
  torch::Tensor shared_pose_feature(const EncoderFeatures& features) const;
  int64_t shared_level() const;

  PENetConfig config;
  UNetEncoder encoder{nullptr};
  UNetDecoder head_decoder{nullptr}, hand_decoder{nullptr}, torso_decoder{nullptr};
  torch::nn::ModuleList shared_mixers{nullptr};
  torch::nn::Linear z_proj{nullptr}, a_proj{nullptr};
  MhaFuse style_fuse{nullptr};
  PosteriorEncoder posterior{nullptr};
  AttributeUpsampler upsampler{nullptr};
};
TORCH_MODULE(PENet);

// x = hand*m_hand + head*m_head + torso*m_torso after hand > head > torso.
torch::Tensor compose(const GeneratorOutput& parts, const PartMasks& masks);
// Disjoint masks after the priority rule.
PartMasks resolve_overlaps(const PartMasks& masks);

}  // namespace penet
