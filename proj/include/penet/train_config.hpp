#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "penet/critics.hpp"
#include "penet/generator.hpp"
#include "penet/losses.hpp"

namespace penet {

/// Flat key=value training configuration. Every field round-trips through
/// serialize(), whose text also defines the hash stored in checkpoints.
struct TrainConfig {
  std::string corpus;
  int image_size = 64;
  int batch_size = 4;
  int steps = 2000;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  LossWeights weights;
  FusionScheme scheme = FusionScheme::kSeparate;
  PoseFormat pose_format = PoseFormat::kSkeleton;
  PsiMode psi = PsiMode::kModulate;
  bool skips = true;
  bool hand_mask = true;
  bool share_psi = false;
  bool conditional = true;
  std::vector<AttributeKey> attribute_keys{kAttributeKeys.begin(), kAttributeKeys.end()};
  bool posterior_pose = true;
  bool fxy_conv = false;
  bool posterior_attribute = true;
  bool attribute_upsampled = false;
  int levels = 5;
  int base_channels = 16;
  int max_channels = 128;
  int latent_dim = 64;
  int style_dim = 256;
  int d_scales = 2;
  int d_layers = 4;
  int d_base_channels = 32;
  int classifier_steps = 300;
  bool augment = false;
  std::uint64_t seed = 0;
  bool debug_checks = false;

  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
  // one "key=value" line per field in a fixed order
  std::string serialize() const;
  std::uint64_t hash() const;
  void set(const std::string& key, const std::string& value);
  void validate() const;

  PENetConfig model_config() const;
  DiscriminatorConfig critic_config() const;
};

std::uint64_t fnv1a64(const std::string& bytes);
std::string psi_name(PsiMode mode);
PsiMode parse_psi(const std::string& name);

}  // namespace penet
