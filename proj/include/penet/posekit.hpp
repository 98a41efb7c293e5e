#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "penet/image.hpp"

namespace penet {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

struct Canvas {
  int width = 0;
  int height = 0;
  friend bool operator==(const Canvas&, const Canvas&) = default;
};

/// Fixed 17-joint signer skeleton. "Left" is the signer's left, which faces
/// the viewer's right.
namespace joints {
inline constexpr int kNose = 0, kLeftEye = 1, kRightEye = 2, kLeftEar = 3, kRightEar = 4;
inline constexpr int kNeck = 5, kSpine = 6, kLeftHip = 7, kRightHip = 8;
inline constexpr int kLeftShoulder = 9, kLeftElbow = 10, kLeftWrist = 11;
inline constexpr int kRightShoulder = 12, kRightElbow = 13, kRightWrist = 14;
inline constexpr int kLeftHand = 15, kRightHand = 16;
inline constexpr int kCount = 17;
}  // namespace joints

struct Limb {
  int a;
  int b;
};

struct SkeletonTopology {
  std::array<std::string_view, joints::kCount> names;
  std::array<Limb, 17> limbs;
  // index pairs exchanged under a horizontal flip
  std::array<Limb, 7> mirror_pairs;
};

const SkeletonTopology& skeleton();

// Joint index after mirroring (left <-> right).
int mirrored_joint(int joint);

/// Body regions used for pose-estimation reporting.
enum class PoseRegion { kHead, kRightHand, kLeftHand, kTorso };
inline constexpr std::array<PoseRegion, 4> kPoseRegions = {
    PoseRegion::kHead, PoseRegion::kRightHand, PoseRegion::kLeftHand, PoseRegion::kTorso};
std::string_view region_name(PoseRegion region);
PoseRegion joint_region(int joint);

struct Pose {
  std::vector<Point2> keypoints;
  std::vector<std::uint8_t> visible;
  Canvas canvas;

  std::size_t size() const noexcept { return keypoints.size(); }
  bool is_visible(std::size_t i) const noexcept { return visible[i] != 0; }

  // Throws ParameterError when K == 0, sizes disagree, or a visible joint is off-canvas.
  void validate() const;

  friend bool operator==(const Pose&, const Pose&) = default;
};

struct PoseSequence {
  std::vector<Pose> frames;
  void validate() const;
};

// Mark joints outside [0, W) x [0, H) invisible.
void clip_to_canvas(Pose& pose);

/// K single-channel Gaussian maps, double precision, channel-major.
struct HeatmapStack {
  int width = 0;
  int height = 0;
  int count = 0;
  double tau = 6.0;
  std::vector<double> values;

  double at(int k, int x, int y) const noexcept {
    return values[(static_cast<std::size_t>(k) * height + y) * width + x];
  }
  // W x H x K float image for network input.
  Image to_image() const;
};

using Rgb = std::array<float, 3>;
using Palette = std::vector<Rgb>;

struct SkeletonImage {
  Image pixels;
  Palette palette;
  double stroke_width = 1.0;
};

inline constexpr double kDefaultTau = 6.0;

HeatmapStack render_heatmaps(const Pose& pose, double tau = kDefaultTau);

// Distinct, fully saturated colour per limb of skeleton().
Palette default_palette();
// Palette permuted so that mirrored limbs exchange colours.
Palette mirrored_palette(const Palette& palette);

// 4x supersampled, box-filtered segment rasterisation with round caps.
SkeletonImage render_skeleton(const Pose& pose, const Palette& palette, double stroke_width);

// Conditioning image for a pose in either format, returned as W x H x C.
enum class PoseFormat { kSkeleton, kHeatmap };
Image render_condition(const Pose& pose, PoseFormat format, double stroke_width, double tau);
int condition_channels(PoseFormat format);
double default_stroke_width(int image_size);

struct AugmentParams {
  double max_rotation_deg = 15.0;
  double max_shift_px = 4.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double flip_prob = 0.5;

  static AugmentParams identity() { return {0.0, 0.0, 1.0, 1.0, 0.0}; }
};

/// Similarity transform about the canvas centre, optionally followed by a
/// horizontal reflection x -> W - 1 - x.
struct GeometricTransform {
  double rotation_deg = 0.0;
  double scale = 1.0;
  double shift_x = 0.0;
  double shift_y = 0.0;
  bool flip = false;

  bool is_identity() const noexcept {
    return rotation_deg == 0.0 && scale == 1.0 && shift_x == 0.0 && shift_y == 0.0 && !flip;
  }
  Point2 apply(Point2 p, Canvas canvas) const;
  Point2 apply_inverse(Point2 p, Canvas canvas) const;
};

GeometricTransform sample_transform(const AugmentParams& params, std::mt19937_64& rng);

// Transformed keypoints; joints leaving the canvas become invisible and a
// flip exchanges left/right indices.
Pose transform_pose(const Pose& pose, const GeometricTransform& t);

enum class Interpolation { kNearest, kBilinear };
Image warp_image(const Image& image, const GeometricTransform& t, Interpolation interp);

/// One row of the poses JSON-lines file.
struct PoseRow {
  int frame = 0;
  Pose pose;
};

void write_pose_rows(const std::filesystem::path& path, std::span<const PoseRow> rows);
// Canvas is not stored in the rows; the caller supplies it.
std::vector<PoseRow> read_pose_rows(const std::filesystem::path& path, Canvas canvas);

}  // namespace penet
