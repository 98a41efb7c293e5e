#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "penet/image.hpp"
#include "penet/posekit.hpp"

namespace penet {

enum class AttributeKey { kSkinTone, kGender, kEthnicity };
inline constexpr std::array<AttributeKey, 3> kAttributeKeys = {
    AttributeKey::kSkinTone, AttributeKey::kGender, AttributeKey::kEthnicity};

std::string_view attribute_key_name(AttributeKey key);
AttributeKey parse_attribute_key(std::string_view name);
const std::vector<std::string>& attribute_vocabulary(AttributeKey key);
// Position of value in the key's vocabulary; throws VocabularyError.
int attribute_index(AttributeKey key, std::string_view value);

Rgb skin_tone_colour(std::string_view tone);

struct SignerSpec {
  std::string skin_tone = "tone1";
  std::string gender_proxy = "A";
  std::string ethnicity_proxy = "E1";
  Rgb clothing_colour{0.2f, 0.3f, 0.6f};
  double body_scale = 1.0;

  const std::string& label(AttributeKey key) const;
  void validate() const;
  friend bool operator==(const SignerSpec&, const SignerSpec&) = default;
};

// "tone2|A|E1"-style key over the selected attributes.
std::string combination_key(const SignerSpec& spec, const std::vector<AttributeKey>& keys);

/// One synthetic training sample.
struct FrameRecord {
  Image image;       // W x H x 3
  Pose pose;
  Image mask_head;   // W x H x 1, binary
  Image mask_hand;
  Image mask_torso;
  SignerSpec attributes;
  int signer_id = 0;
  int t = 0;
};

/// Per-pixel surface class of the rendered figure.
enum class Material : std::uint8_t { kBackground, kClothing, kSleeve, kSkin, kHand, kHair, kMarker };

// Figure proportions, in canvas-relative units, at rest.
Pose rest_pose(Canvas canvas, double body_scale = 1.0);

// Smooth joint-angle trajectories (low-pass-filtered random walk) driven
// through forward kinematics, so limb lengths equal the rest lengths.
PoseSequence sample_pose_sequence(std::mt19937_64& rng, int frames, double amplitude,
                                  Canvas canvas = {64, 64}, double body_scale = 1.0);

FrameRecord render_frame(const SignerSpec& spec, const Pose& pose);
std::vector<Material> render_materials(const SignerSpec& spec, const Pose& pose);
// Binary mask of pixels whose surface is one of the given materials.
Image material_mask(const SignerSpec& spec, const Pose& pose, std::initializer_list<Material> materials);
// Union of the skin-coloured shapes (neck, forearms, hands, head), occlusion ignored.
Image skin_geometry_mask(const SignerSpec& spec, const Pose& pose);

// Same geometric transform applied to image (bilinear), masks (nearest), and pose.
FrameRecord augment(const FrameRecord& frame, const AugmentParams& params, std::mt19937_64& rng);
FrameRecord apply_transform(const FrameRecord& frame, const GeometricTransform& t);

struct ManifestRecord {
  int index = 0;
  int signer = 0;
  int t = 0;
  std::string frame_path;
  std::array<std::string, 3> mask_paths;  // head, hand, torso
  std::uint32_t frame_crc = 0;
  std::array<std::uint32_t, 3> mask_crc{};
  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct CorpusManifest {
  int image_size = 64;
  std::uint64_t seed = 0;
  std::vector<SignerSpec> signers;
  std::vector<ManifestRecord> records;
  std::map<std::string, int> attribute_counts;  // "skin_tone=tone1" -> frames
  std::uint32_t poses_crc = 0;

  const SignerSpec& signer_of(const ManifestRecord& r) const { return signers.at(r.signer); }
  friend bool operator==(const CorpusManifest&, const CorpusManifest&) = default;
};

struct Corpus {
  CorpusManifest manifest;
  std::vector<FrameRecord> records;
};

struct CorpusOptions {
  int signers = 32;
  int frames = 64;
  int image_size = 64;
  std::uint64_t seed = 0;
  double amplitude = 1.0;
  // cycle skin tones over signers so every tone is present when signers >= 4
  bool cycle_skin_tones = true;
};

std::vector<SignerSpec> sample_signers(int count, std::mt19937_64& rng, bool cycle_skin_tones);
Corpus generate_corpus(const CorpusOptions& options);

// Recompute attribute_counts from records.
void recount_attributes(CorpusManifest& manifest);

CorpusManifest write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

/// Inverse-frequency sampling weights over records, normalised to sum 1.
std::vector<double> weighted_sampler(const CorpusManifest& manifest,
                                     const std::vector<AttributeKey>& keys = {kAttributeKeys.begin(),
                                                                              kAttributeKeys.end()});

// Draw one index from normalised weights by inverse CDF.
std::size_t draw_index(const std::vector<double>& weights, std::mt19937_64& rng);

std::uint32_t file_crc32(const std::filesystem::path& path);

}  // namespace penet
