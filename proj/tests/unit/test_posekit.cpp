#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "penet/errors.hpp"
#include "penet/posekit.hpp"
#include "penet/synthdata.hpp"

using namespace penet;

namespace {

Pose empty_pose(Canvas canvas) {
  Pose p;
  p.canvas = canvas;
  p.keypoints.assign(joints::kCount, {0.0, 0.0});
  p.visible.assign(joints::kCount, 0);
  return p;
}

Pose random_pose(std::mt19937_64& rng, Canvas canvas) {
  std::uniform_real_distribution<double> ux(0.0, canvas.width - 1.0), uy(0.0, canvas.height - 1.0);
  Pose p = empty_pose(canvas);
  for (int i = 0; i < joints::kCount; ++i) {
    p.keypoints[i] = {ux(rng), uy(rng)};
    p.visible[i] = 1;
  }
  return p;
}

// Bresenham pixels of an integer segment; independent of the supersampler.
std::vector<std::pair<int, int>> bresenham(int x0, int y0, int x1, int y1) {
  std::vector<std::pair<int, int>> out;
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    out.emplace_back(x0, y0);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) err += dy, x0 += sx;
    if (e2 <= dx) err += dx, y0 += sy;
  }
  return out;
}

double mean_abs_diff(const Image& a, const Image& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) acc += std::abs(a.pixels[i] - b.pixels[i]);
  return acc / static_cast<double>(a.pixels.size());
}

}  // namespace

TEST_CASE("heatmap closed form") {
  Pose p = empty_pose({32, 32});
  p.keypoints[0] = {10.0, 12.0};
  p.visible[0] = 1;
  const auto hm = render_heatmaps(p, 6.0);
  CHECK(hm.at(0, 10, 12) == 1.0);
  // pixel (16, 12) lies 6 px from the keypoint
  CHECK(std::abs(hm.at(0, 16, 12) - std::exp(-0.5)) < 1e-12);
  CHECK(std::abs(hm.at(0, 16, 12) - 0.6065306597) < 1e-9);

  double invisible_sum = 0.0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) invisible_sum += hm.at(1, x, y);
  CHECK(invisible_sum == 0.0);

  CHECK_THROWS_AS(render_heatmaps(p, 0.0), ParameterError);
  CHECK_THROWS_AS(render_heatmaps(p, -1.0), ParameterError);
}

TEST_CASE("heatmap argmax sits on the keypoint pixel and values stay in [0, 1]") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Pose p = random_pose(rng, {40, 40});
    const auto hm = render_heatmaps(p, 3.0);
    for (int k = 0; k < joints::kCount; ++k) {
      int bx = 0, by = 0;
      double best = -1.0, lo = 1.0;
      for (int y = 0; y < 40; ++y) {
        for (int x = 0; x < 40; ++x) {
          const double v = hm.at(k, x, y);
          lo = std::min(lo, v);
          if (v > best) best = v, bx = x, by = y;
        }
      }
      CHECK(lo >= 0.0);
      CHECK(best <= 1.0);
      CHECK(bx == static_cast<int>(std::lround(p.keypoints[k].x)));
      CHECK(by == static_cast<int>(std::lround(p.keypoints[k].y)));
    }
  }
}

TEST_CASE("heatmap is non-increasing with distance") {
  Pose p = empty_pose({32, 32});
  p.keypoints[3] = {15.0, 15.0};
  p.visible[3] = 1;
  const auto hm = render_heatmaps(p, 4.0);
  for (int x = 15; x < 31; ++x) CHECK(hm.at(3, x + 1, 15) <= hm.at(3, x, 15));
}

TEST_CASE("skeleton rendering") {
  const Palette palette = default_palette();
  SUBCASE("all invisible gives an all-zero image") {
    const auto img = render_skeleton(empty_pose({32, 32}), palette, 2.0);
    for (float v : img.pixels.pixels) CHECK(v == 0.0f);
  }
  SUBCASE("horizontal limb against a Bresenham rasteriser") {
    Pose p = empty_pose({40, 40});
    p.keypoints[joints::kLeftElbow] = {10.0, 20.0};
    p.keypoints[joints::kLeftWrist] = {20.0, 20.0};
    p.visible[joints::kLeftElbow] = p.visible[joints::kLeftWrist] = 1;
    const auto img = render_skeleton(p, palette, 1.0);
    const auto oracle = bresenham(10, 20, 20, 20);
    int nonzero_row = 0;
    for (int x = 0; x < 40; ++x)
      if (img.pixels.at(x, 20, 0) + img.pixels.at(x, 20, 1) + img.pixels.at(x, 20, 2) > 0) ++nonzero_row;
    CHECK(nonzero_row >= 10);
    CHECK(nonzero_row >= static_cast<int>(oracle.size()) - 1);
    for (auto [x, y] : oracle) {
      const float sum = img.pixels.at(x, y, 0) + img.pixels.at(x, y, 1) + img.pixels.at(x, y, 2);
      CHECK(sum > 0.0f);
    }
    // nothing leaks beyond half a stroke
    for (int x = 0; x < 40; ++x) CHECK(img.pixels.at(x, 18, 0) == 0.0f);
  }
  SUBCASE("deterministic and background exactly zero") {
    std::mt19937_64 rng(3);
    const Pose p = rest_pose({64, 64});
    const auto a = render_skeleton(p, palette, 2.0);
    const auto b = render_skeleton(p, palette, 2.0);
    CHECK(a.pixels == b.pixels);
    CHECK(a.pixels.at(0, 0, 0) == 0.0f);
    CHECK(a.pixels.at(63, 63, 2) == 0.0f);
  }
  SUBCASE("limb colours are distinct") {
    for (std::size_t i = 0; i < palette.size(); ++i)
      for (std::size_t j = i + 1; j < palette.size(); ++j) CHECK(palette[i] != palette[j]);
  }
  SUBCASE("short palette is rejected") {
    CHECK_THROWS_AS(render_skeleton(rest_pose({64, 64}), Palette(3), 1.0), ParameterError);
  }
}

TEST_CASE("augmentation geometry") {
  const Canvas canvas{64, 64};
  const Pose rest = rest_pose(canvas);
  SUBCASE("identity params return the input unchanged") {
    std::mt19937_64 rng(1);
    SignerSpec spec;
    const FrameRecord f = render_frame(spec, rest);
    const FrameRecord g = augment(f, AugmentParams::identity(), rng);
    CHECK(g.image == f.image);
    CHECK(g.pose == f.pose);
    CHECK(g.mask_head == f.mask_head);
  }
  SUBCASE("horizontal flip reflects and swaps left/right") {
    GeometricTransform t;
    t.flip = true;
    const Pose flipped = transform_pose(rest, t);
    for (int i = 0; i < joints::kCount; ++i) {
      const int j = mirrored_joint(i);
      CHECK(flipped.keypoints[j].x == doctest::Approx(canvas.width - 1 - rest.keypoints[i].x));
      CHECK(flipped.keypoints[j].y == doctest::Approx(rest.keypoints[i].y));
    }
    CHECK(mirrored_joint(joints::kLeftHand) == joints::kRightHand);
    CHECK(mirrored_joint(joints::kNose) == joints::kNose);
  }
  SUBCASE("rotation keeps the centre fixed") {
    const Canvas odd{65, 65};
    Pose p = empty_pose(odd);
    p.keypoints[0] = {32.0, 32.0};
    p.visible[0] = 1;
    GeometricTransform t;
    t.rotation_deg = 90.0;
    const Pose r = transform_pose(p, t);
    CHECK(r.keypoints[0].x == doctest::Approx(32.0).epsilon(1e-12));
    CHECK(r.keypoints[0].y == doctest::Approx(32.0).epsilon(1e-12));
    CHECK(r.is_visible(0));
  }
  SUBCASE("keypoints pushed off-canvas become invisible") {
    GeometricTransform t;
    t.shift_x = 200.0;
    const Pose r = transform_pose(rest, t);
    for (int i = 0; i < joints::kCount; ++i) CHECK_FALSE(r.is_visible(i));
  }
  SUBCASE("inverse undoes apply") {
    GeometricTransform t{12.0, 1.07, 2.5, -1.5, true};
    const Point2 p{13.25, 40.5};
    const Point2 q = t.apply_inverse(t.apply(p, canvas), canvas);
    CHECK(q.x == doctest::Approx(p.x));
    CHECK(q.y == doctest::Approx(p.y));
  }
}

TEST_CASE("render/augment commutation within 0.02 mean absolute difference") {
  const Canvas canvas{64, 64};
  const Palette palette = default_palette();
  std::mt19937_64 rng(11);
  AugmentParams params;  // +-15 deg, shift, scale, flip 0.5
  for (int trial = 0; trial < 30; ++trial) {
    const PoseSequence seq = sample_pose_sequence(rng, 1, 1.0, canvas);
    const Pose& pose = seq.frames[0];
    const GeometricTransform t = sample_transform(params, rng);
    const Image warped = warp_image(render_skeleton(pose, palette, 2.0).pixels, t, Interpolation::kBilinear);
    const Palette& pal = t.flip ? mirrored_palette(palette) : palette;
    const Image direct = render_skeleton(transform_pose(pose, t), t.flip ? pal : palette, 2.0).pixels;
    CHECK(mean_abs_diff(warped, direct) < 0.02);
  }
}

TEST_CASE("pose rows round trip through JSON lines") {
  const auto path = std::filesystem::temp_directory_path() / "penet_pose_rows.jsonl";
  std::mt19937_64 rng(5);
  const PoseSequence seq = sample_pose_sequence(rng, 4, 1.0, {64, 64});
  std::vector<PoseRow> rows;
  for (int i = 0; i < 4; ++i) rows.push_back({i, seq.frames[i]});
  write_pose_rows(path, rows);
  const auto back = read_pose_rows(path, {64, 64});
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].frame == rows[i].frame);
    CHECK(back[i].pose == rows[i].pose);
  }
  std::filesystem::remove(path);
}
