#include "penet/posekit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "penet/errors.hpp"

namespace penet {

namespace {

using namespace joints;

constexpr SkeletonTopology kSkeleton{
    {"nose", "left_eye", "right_eye", "left_ear", "right_ear", "neck", "spine", "left_hip",
     "right_hip", "left_shoulder", "left_elbow", "left_wrist", "right_shoulder", "right_elbow",
     "right_wrist", "left_hand", "right_hand"},
    {{{kNose, kLeftEye},
      {kNose, kRightEye},
      {kLeftEye, kLeftEar},
      {kRightEye, kRightEar},
      {kNose, kNeck},
      {kNeck, kSpine},
      {kSpine, kLeftHip},
      {kSpine, kRightHip},
      {kLeftHip, kRightHip},
      {kNeck, kLeftShoulder},
      {kLeftShoulder, kLeftElbow},
      {kLeftElbow, kLeftWrist},
      {kLeftWrist, kLeftHand},
      {kNeck, kRightShoulder},
      {kRightShoulder, kRightElbow},
      {kRightElbow, kRightWrist},
      {kRightWrist, kRightHand}}},
    {{{kLeftEye, kRightEye},
      {kLeftEar, kRightEar},
      {kLeftHip, kRightHip},
      {kLeftShoulder, kRightShoulder},
      {kLeftElbow, kRightElbow},
      {kLeftWrist, kRightWrist},
      {kLeftHand, kRightHand}}}};

// Index of the limb whose endpoints are the mirror images of limb i.
int mirrored_limb(int i) {
  const auto& limbs = kSkeleton.limbs;
  const int a = mirrored_joint(limbs[i].a), b = mirrored_joint(limbs[i].b);
  for (int j = 0; j < static_cast<int>(limbs.size()); ++j) {
    if ((limbs[j].a == a && limbs[j].b == b) || (limbs[j].a == b && limbs[j].b == a)) return j;
  }
  return i;
}

double segment_distance_sq(double px, double py, Point2 a, Point2 b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len_sq = dx * dx + dy * dy;
  double t = len_sq > 0.0 ? ((px - a.x) * dx + (py - a.y) * dy) / len_sq : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - px, ey = a.y + t * dy - py;
  return ex * ex + ey * ey;
}

Rgb hsv_to_rgb(double h, double s, double v) {
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(i) % 6) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

}  // namespace

const SkeletonTopology& skeleton() { return kSkeleton; }

int mirrored_joint(int joint) {
  for (const Limb& pair : kSkeleton.mirror_pairs) {
    if (pair.a == joint) return pair.b;
    if (pair.b == joint) return pair.a;
  }
  return joint;
}

std::string_view region_name(PoseRegion region) {
  switch (region) {
    case PoseRegion::kHead: return "head";
    case PoseRegion::kRightHand: return "r_hand";
    case PoseRegion::kLeftHand: return "l_hand";
    case PoseRegion::kTorso: return "torso";
  }
  return "?";
}

PoseRegion joint_region(int joint) {
  if (joint <= kRightEar) return PoseRegion::kHead;
  if (joint == kRightWrist || joint == kRightHand) return PoseRegion::kRightHand;
  if (joint == kLeftWrist || joint == kLeftHand) return PoseRegion::kLeftHand;
  return PoseRegion::kTorso;
}

void Pose::validate() const {
  if (keypoints.empty()) throw ParameterError("pose must have at least one keypoint");
  if (visible.size() != keypoints.size())
    throw ParameterError("pose visibility size does not match keypoint count");
  if (canvas.width <= 0 || canvas.height <= 0) throw ParameterError("pose canvas must be positive");
  for (std::size_t i = 0; i < keypoints.size(); ++i) {
    if (!visible[i]) continue;
    const Point2 p = keypoints[i];
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x < canvas.width && p.y < canvas.height))
      throw ParameterError("visible keypoint " + std::to_string(i) + " lies outside the canvas");
  }
}

void PoseSequence::validate() const {
  for (const Pose& p : frames) {
    p.validate();
    if (p.size() != frames.front().size() || p.canvas != frames.front().canvas)
      throw ParameterError("pose sequence frames must share K and canvas");
  }
}

void clip_to_canvas(Pose& pose) {
  for (std::size_t i = 0; i < pose.size(); ++i) {
    const Point2 p = pose.keypoints[i];
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x < pose.canvas.width && p.y < pose.canvas.height))
      pose.visible[i] = 0;
  }
}

HeatmapStack render_heatmaps(const Pose& pose, double tau) {
  if (!(tau > 0.0)) throw ParameterError("render_heatmaps: tau must be positive");
  pose.validate();
  const int w = pose.canvas.width, h = pose.canvas.height, k = static_cast<int>(pose.size());
  HeatmapStack stack{w, h, k, tau, std::vector<double>(static_cast<std::size_t>(w) * h * k, 0.0)};
  const double denom = 2.0 * tau * tau;
  for (int i = 0; i < k; ++i) {
    if (!pose.is_visible(i)) continue;
    const Point2 c = pose.keypoints[i];
    for (int y = 0; y < h; ++y) {
      const double dy = y - c.y;
      for (int x = 0; x < w; ++x) {
        const double dx = x - c.x;
        stack.values[(static_cast<std::size_t>(i) * h + y) * w + x] = std::exp(-(dx * dx + dy * dy) / denom);
      }
    }
  }
  return stack;
}

Image HeatmapStack::to_image() const {
  Image image(width, height, count);
  for (int k = 0; k < count; ++k)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) image.at(x, y, k) = static_cast<float>(at(k, x, y));
  return image;
}

Palette default_palette() {
  Palette palette;
  const std::size_t n = kSkeleton.limbs.size();
  for (std::size_t i = 0; i < n; ++i) {
    // stride the hue wheel so neighbouring limbs get well separated colours
    const double hue = static_cast<double>((i * 7) % n) / static_cast<double>(n);
    palette.push_back(hsv_to_rgb(hue, 1.0, 1.0));
  }
  return palette;
}

Palette mirrored_palette(const Palette& palette) {
  Palette out(palette.size());
  for (std::size_t i = 0; i < palette.size(); ++i) out[i] = palette[mirrored_limb(static_cast<int>(i))];
  return out;
}

SkeletonImage render_skeleton(const Pose& pose, const Palette& palette, double stroke_width) {
  pose.validate();
  if (palette.size() < kSkeleton.limbs.size())
    throw ParameterError("render_skeleton: palette must cover every limb");
  if (!(stroke_width > 0.0)) throw ParameterError("render_skeleton: stroke width must be positive");
  if (pose.size() != static_cast<std::size_t>(joints::kCount))
    throw ParameterError("render_skeleton: pose must use the 17-joint skeleton");

  constexpr int kSuper = 4;
  const int w = pose.canvas.width, h = pose.canvas.height;
  SkeletonImage out{Image(w, h, 3), palette, stroke_width};
  const double half = 0.5 * stroke_width;
  const double half_sq = half * half;

  for (std::size_t li = 0; li < kSkeleton.limbs.size(); ++li) {
    const Limb limb = kSkeleton.limbs[li];
    if (!pose.is_visible(limb.a) || !pose.is_visible(limb.b)) continue;
    const Point2 a = pose.keypoints[limb.a], b = pose.keypoints[limb.b];
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - half - 1)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + half + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - half - 1)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + half + 1)));
    const Rgb colour = palette[li];
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        int hits = 0;
        for (int sy = 0; sy < kSuper; ++sy) {
          const double py = y - 0.5 + (sy + 0.5) / kSuper;
          for (int sx = 0; sx < kSuper; ++sx) {
            const double px = x - 0.5 + (sx + 0.5) / kSuper;
            if (segment_distance_sq(px, py, a, b) <= half_sq) ++hits;
          }
        }
        if (hits == 0) continue;
        const float alpha = static_cast<float>(hits) / (kSuper * kSuper);
        for (int c = 0; c < 3; ++c) {
          float& v = out.pixels.at(x, y, c);
          v = v * (1.0f - alpha) + colour[c] * alpha;
        }
      }
    }
  }
  return out;
}

double default_stroke_width(int image_size) { return std::max(1.0, image_size / 32.0); }

int condition_channels(PoseFormat format) {
  return format == PoseFormat::kSkeleton ? 3 : joints::kCount;
}

Image render_condition(const Pose& pose, PoseFormat format, double stroke_width, double tau) {
  if (format == PoseFormat::kSkeleton) return render_skeleton(pose, default_palette(), stroke_width).pixels;
  return render_heatmaps(pose, tau).to_image();
}

Point2 GeometricTransform::apply(Point2 p, Canvas canvas) const {
  const double cx = 0.5 * (canvas.width - 1), cy = 0.5 * (canvas.height - 1);
  const double th = rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double dx = p.x - cx, dy = p.y - cy;
  Point2 q{cx + scale * (c * dx - s * dy) + shift_x, cy + scale * (s * dx + c * dy) + shift_y};
  if (flip) q.x = canvas.width - 1 - q.x;
  return q;
}

Point2 GeometricTransform::apply_inverse(Point2 p, Canvas canvas) const {
  const double cx = 0.5 * (canvas.width - 1), cy = 0.5 * (canvas.height - 1);
  if (flip) p.x = canvas.width - 1 - p.x;
  const double th = rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double dx = (p.x - shift_x - cx) / scale, dy = (p.y - shift_y - cy) / scale;
  return {cx + c * dx + s * dy, cy - s * dx + c * dy};
}

GeometricTransform sample_transform(const AugmentParams& params, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  GeometricTransform t;
  t.rotation_deg = params.max_rotation_deg * (2.0 * unit(rng) - 1.0);
  t.scale = params.scale_min + (params.scale_max - params.scale_min) * unit(rng);
  t.shift_x = params.max_shift_px * (2.0 * unit(rng) - 1.0);
  t.shift_y = params.max_shift_px * (2.0 * unit(rng) - 1.0);
  t.flip = unit(rng) < params.flip_prob;
  return t;
}

Pose transform_pose(const Pose& pose, const GeometricTransform& t) {
  if (t.is_identity()) return pose;
  Pose out = pose;
  for (std::size_t i = 0; i < pose.size(); ++i) {
    const std::size_t dst =
        t.flip && pose.size() == static_cast<std::size_t>(joints::kCount)
            ? static_cast<std::size_t>(mirrored_joint(static_cast<int>(i)))
            : i;
    out.keypoints[dst] = t.apply(pose.keypoints[i], pose.canvas);
    out.visible[dst] = pose.visible[i];
  }
  clip_to_canvas(out);
  return out;
}

Image warp_image(const Image& image, const GeometricTransform& t, Interpolation interp) {
  if (t.is_identity()) return image;
  const Canvas canvas{image.width, image.height};
  Image out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const Point2 src = t.apply_inverse({static_cast<double>(x), static_cast<double>(y)}, canvas);
      if (interp == Interpolation::kNearest) {
        const int sx = static_cast<int>(std::lround(src.x)), sy = static_cast<int>(std::lround(src.y));
        if (!image.contains(sx, sy)) continue;
        for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = image.at(sx, sy, c);
        continue;
      }
      const int x0 = static_cast<int>(std::floor(src.x)), y0 = static_cast<int>(std::floor(src.y));
      const double fx = src.x - x0, fy = src.y - y0;
      for (int c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (int j = 0; j < 2; ++j) {
          for (int i = 0; i < 2; ++i) {
            const double wgt = (i ? fx : 1.0 - fx) * (j ? fy : 1.0 - fy);
            if (wgt == 0.0 || !image.contains(x0 + i, y0 + j)) continue;
            acc += wgt * image.at(x0 + i, y0 + j, c);
          }
        }
        out.at(x, y, c) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

void write_pose_rows(const std::filesystem::path& path, std::span<const PoseRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError(path, "cannot open for writing");
  for (const PoseRow& row : rows) {
    nlohmann::json kp = nlohmann::json::array();
    nlohmann::json vis = nlohmann::json::array();
    for (std::size_t i = 0; i < row.pose.size(); ++i) {
      kp.push_back({row.pose.keypoints[i].x, row.pose.keypoints[i].y});
      vis.push_back(row.pose.visible[i] != 0);
    }
    out << nlohmann::json{{"frame", row.frame}, {"kp", kp}, {"vis", vis}}.dump() << '\n';
  }
  if (!out) throw IoError(path, "write failed");
}

std::vector<PoseRow> read_pose_rows(const std::filesystem::path& path, Canvas canvas) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open for reading");
  std::vector<PoseRow> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PoseRow row;
      row.frame = j.at("frame").get<int>();
      row.pose.canvas = canvas;
      for (const auto& p : j.at("kp")) row.pose.keypoints.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      for (const auto& v : j.at("vis")) row.pose.visible.push_back(v.get<bool>() ? 1 : 0);
      row.pose.validate();
      rows.push_back(std::move(row));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path, "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ParameterError& e) {
      throw IoError(path, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

}  // namespace penet
