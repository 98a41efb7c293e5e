#include "penet/synthdata.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>

#include <json.hpp>

#include "penet/errors.hpp"

namespace penet {

namespace {

using namespace joints;

const std::vector<std::string> kSkinTones = {"tone1", "tone2", "tone3", "tone4"};
const std::vector<std::string> kGenders = {"A", "B"};
const std::vector<std::string> kEthnicities = {"E1", "E2"};

constexpr Rgb rgb8(int r, int g, int b) {
  return {static_cast<float>(r) / 255.0f, static_cast<float>(g) / 255.0f, static_cast<float>(b) / 255.0f};
}

const std::array<Rgb, 4> kSkinColours = {rgb8(250, 214, 180), rgb8(214, 160, 112), rgb8(160, 100, 62),
                                         rgb8(92, 58, 38)};
const std::array<Rgb, 6> kClothingColours = {rgb8(40, 70, 160), rgb8(150, 40, 40), rgb8(40, 120, 60),
                                             rgb8(110, 60, 140), rgb8(70, 70, 70), rgb8(180, 140, 40)};
constexpr Rgb kHairColour = rgb8(45, 30, 20);
constexpr Rgb kMarkerColour = rgb8(20, 15, 15);

// Rest layout on the unit square.
constexpr std::array<Point2, kCount> kRestLayout = {{{0.500, 0.215},
                                                     {0.535, 0.190},
                                                     {0.465, 0.190},
                                                     {0.575, 0.200},
                                                     {0.425, 0.200},
                                                     {0.500, 0.320},
                                                     {0.500, 0.550},
                                                     {0.575, 0.780},
                                                     {0.425, 0.780},
                                                     {0.615, 0.355},
                                                     {0.685, 0.530},
                                                     {0.620, 0.655},
                                                     {0.385, 0.355},
                                                     {0.315, 0.530},
                                                     {0.380, 0.655},
                                                     {0.585, 0.695},
                                                     {0.415, 0.695}}};

Rgb scaled(Rgb c, float s) { return {c[0] * s, c[1] * s, c[2] * s}; }

Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }

Point2 rotate(Point2 v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

double dist_sq_to_segment(Point2 p, Point2 a, Point2 b) {
  const Point2 d = b - a;
  const double len_sq = d.x * d.x + d.y * d.y;
  double t = len_sq > 0 ? ((p.x - a.x) * d.x + (p.y - a.y) * d.y) / len_sq : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Point2 e = a + t * d - p;
  return e.x * e.x + e.y * e.y;
}

enum class Part { kNone, kTorso, kHead, kHand };

struct Hit {
  Part part = Part::kNone;
  Material material = Material::kBackground;
};

/// Shape geometry of one figure; classify() returns the front-most surface.
class Figure {
 public:
  Figure(const SignerSpec& spec, const Pose& pose) : spec_(spec), kp_(pose.keypoints) {
    unit_ = pose.canvas.width / 64.0 * spec.body_scale;
    const bool wide = spec.gender_proxy == "B";
    torso_pad_ = (wide ? 2.5 : 1.5) * unit_;
    sleeve_r_ = (wide ? 2.0 : 1.6) * unit_;
    forearm_r_ = 1.3 * unit_;
    wrist_r_ = 1.1 * unit_;
    neck_r_ = 1.5 * unit_;
    hand_r_ = 2.5 * unit_;
    eye_r_ = 0.8 * unit_;

    const Point2 ear_axis = kp_[kLeftEar] - kp_[kRightEar];
    const double ear_len = std::hypot(ear_axis.x, ear_axis.y);
    head_u_ = ear_len > 0 ? (1.0 / ear_len) * ear_axis : Point2{1.0, 0.0};
    head_c_ = 0.5 * (kp_[kLeftEar] + kp_[kRightEar]);
    head_rx_ = 0.5 * ear_len + 1.2 * unit_;
    head_ry_ = 1.25 * head_rx_;
    neck_top_ = kp_[kNeck] + 0.55 * (kp_[kNose] - kp_[kNeck]);
    quad_ = {kp_[kLeftShoulder], kp_[kRightShoulder], kp_[kRightHip], kp_[kLeftHip]};
  }

  Hit classify(Point2 p) const {
    for (int hand : {kLeftHand, kRightHand})
      if (in_disk(p, kp_[hand], hand_r_)) return {Part::kHand, Material::kHand};
    if (auto head = head_surface(p)) return {Part::kHead, *head};
    for (auto [a, b] : {std::pair{kLeftWrist, kLeftHand}, std::pair{kRightWrist, kRightHand}})
      if (in_capsule(p, kp_[a], kp_[b], wrist_r_)) return {Part::kTorso, Material::kSkin};
    for (auto [a, b] : {std::pair{kLeftElbow, kLeftWrist}, std::pair{kRightElbow, kRightWrist}})
      if (in_capsule(p, kp_[a], kp_[b], forearm_r_)) return {Part::kTorso, Material::kSkin};
    for (auto [a, b] : {std::pair{kLeftShoulder, kLeftElbow}, std::pair{kRightShoulder, kRightElbow}})
      if (in_capsule(p, kp_[a], kp_[b], sleeve_r_)) return {Part::kTorso, Material::kSleeve};
    if (in_capsule(p, kp_[kNeck], neck_top_, neck_r_)) return {Part::kTorso, Material::kSkin};
    if (in_torso(p)) return {Part::kTorso, Material::kClothing};
    return {};
  }

  bool in_skin_geometry(Point2 p) const {
    if (in_disk(p, kp_[kLeftHand], hand_r_) || in_disk(p, kp_[kRightHand], hand_r_)) return true;
    if (head_local(p).has_value()) return true;
    if (in_capsule(p, kp_[kLeftWrist], kp_[kLeftHand], wrist_r_) ||
        in_capsule(p, kp_[kRightWrist], kp_[kRightHand], wrist_r_))
      return true;
    if (in_capsule(p, kp_[kLeftElbow], kp_[kLeftWrist], forearm_r_) ||
        in_capsule(p, kp_[kRightElbow], kp_[kRightWrist], forearm_r_))
      return true;
    return in_capsule(p, kp_[kNeck], neck_top_, neck_r_);
  }

  Rgb colour(Material m) const {
    const Rgb skin = skin_tone_colour(spec_.skin_tone);
    switch (m) {
      case Material::kBackground: return {0, 0, 0};
      case Material::kClothing: return spec_.clothing_colour;
      case Material::kSleeve: return scaled(spec_.clothing_colour, 0.75f);
      case Material::kSkin: return skin;
      case Material::kHand: return scaled(skin, 0.9f);
      case Material::kHair: return kHairColour;
      case Material::kMarker: return kMarkerColour;
    }
    return {0, 0, 0};
  }

 private:
  static bool in_disk(Point2 p, Point2 c, double r) {
    const Point2 d = p - c;
    return d.x * d.x + d.y * d.y <= r * r;
  }
  static bool in_capsule(Point2 p, Point2 a, Point2 b, double r) {
    return dist_sq_to_segment(p, a, b) <= r * r;
  }

  bool in_torso(Point2 p) const {
    // convex quad test, orientation independent
    int sign = 0;
    bool inside = true;
    for (int i = 0; i < 4; ++i) {
      const Point2 a = quad_[i], b = quad_[(i + 1) % 4];
      const double cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
      const int s = cross > 0 ? 1 : (cross < 0 ? -1 : 0);
      if (s == 0) continue;
      if (sign == 0) sign = s;
      else if (s != sign) inside = false;
    }
    if (inside) return true;
    for (int i = 0; i < 4; ++i)
      if (in_capsule(p, quad_[i], quad_[(i + 1) % 4], torso_pad_)) return true;
    return false;
  }

  // (u, v) head-frame coordinates when p lies in the head ellipse; v grows downward.
  std::optional<Point2> head_local(Point2 p) const {
    const Point2 d = p - head_c_;
    const double u = d.x * head_u_.x + d.y * head_u_.y;
    const double v = -d.x * head_u_.y + d.y * head_u_.x;
    if ((u / head_rx_) * (u / head_rx_) + (v / head_ry_) * (v / head_ry_) > 1.0) return std::nullopt;
    return Point2{u, v};
  }

  std::optional<Material> head_surface(Point2 p) const {
    const auto local = head_local(p);
    if (!local) return std::nullopt;
    const double u = local->x, v = local->y;
    if (in_disk(p, kp_[kLeftEye], eye_r_) || in_disk(p, kp_[kRightEye], eye_r_)) return Material::kMarker;
    if (spec_.ethnicity_proxy == "E2" && std::abs(u) < 0.35 * head_rx_ &&
        std::abs(v - 0.55 * head_ry_) < 0.6 * unit_)
      return Material::kMarker;
    const bool hair = spec_.gender_proxy == "B"
                          ? (v < -0.3 * head_ry_ || (std::abs(u) > 0.7 * head_rx_ && v < 0.3 * head_ry_))
                          : v < -0.45 * head_ry_;
    return hair ? Material::kHair : Material::kSkin;
  }

  const SignerSpec& spec_;
  const std::vector<Point2>& kp_;
  double unit_, torso_pad_, sleeve_r_, forearm_r_, wrist_r_, neck_r_, hand_r_, eye_r_;
  Point2 head_c_, head_u_, neck_top_;
  double head_rx_, head_ry_;
  std::array<Point2, 4> quad_;
};

void check_figure_pose(const Pose& pose) {
  pose.validate();
  if (pose.size() != static_cast<std::size_t>(kCount))
    throw ParameterError("figure rendering needs the 17-joint skeleton");
}

nlohmann::json signer_to_json(const SignerSpec& s) {
  return {{"skin_tone", s.skin_tone},
          {"gender_proxy", s.gender_proxy},
          {"ethnicity_proxy", s.ethnicity_proxy},
          {"clothing_colour", {s.clothing_colour[0], s.clothing_colour[1], s.clothing_colour[2]}},
          {"body_scale", s.body_scale}};
}

SignerSpec signer_from_json(const nlohmann::json& j) {
  SignerSpec s;
  s.skin_tone = j.at("skin_tone").get<std::string>();
  s.gender_proxy = j.at("gender_proxy").get<std::string>();
  s.ethnicity_proxy = j.at("ethnicity_proxy").get<std::string>();
  for (int c = 0; c < 3; ++c) s.clothing_colour[c] = j.at("clothing_colour").at(c).get<float>();
  s.body_scale = j.at("body_scale").get<double>();
  s.validate();
  return s;
}

constexpr std::array<const char*, 3> kPartNames = {"head", "hand", "torso"};

}  // namespace

std::string_view attribute_key_name(AttributeKey key) {
  switch (key) {
    case AttributeKey::kSkinTone: return "skin_tone";
    case AttributeKey::kGender: return "gender_proxy";
    case AttributeKey::kEthnicity: return "ethnicity_proxy";
  }
  return "?";
}

AttributeKey parse_attribute_key(std::string_view name) {
  for (AttributeKey k : kAttributeKeys)
    if (attribute_key_name(k) == name) return k;
  throw VocabularyError("unknown attribute key: " + std::string(name));
}

const std::vector<std::string>& attribute_vocabulary(AttributeKey key) {
  switch (key) {
    case AttributeKey::kSkinTone: return kSkinTones;
    case AttributeKey::kGender: return kGenders;
    case AttributeKey::kEthnicity: return kEthnicities;
  }
  return kSkinTones;
}

int attribute_index(AttributeKey key, std::string_view value) {
  const auto& vocab = attribute_vocabulary(key);
  const auto it = std::find(vocab.begin(), vocab.end(), value);
  if (it == vocab.end())
    throw VocabularyError("unknown " + std::string(attribute_key_name(key)) + " label: " + std::string(value));
  return static_cast<int>(it - vocab.begin());
}

Rgb skin_tone_colour(std::string_view tone) {
  return kSkinColours[attribute_index(AttributeKey::kSkinTone, tone)];
}

const std::string& SignerSpec::label(AttributeKey key) const {
  switch (key) {
    case AttributeKey::kSkinTone: return skin_tone;
    case AttributeKey::kGender: return gender_proxy;
    case AttributeKey::kEthnicity: return ethnicity_proxy;
  }
  return skin_tone;
}

void SignerSpec::validate() const {
  for (AttributeKey k : kAttributeKeys) attribute_index(k, label(k));
  if (!(body_scale > 0.0)) throw ParameterError("body_scale must be positive");
}

std::string combination_key(const SignerSpec& spec, const std::vector<AttributeKey>& keys) {
  std::string out;
  for (AttributeKey k : keys) {
    if (!out.empty()) out += '|';
    out += spec.label(k);
  }
  return out;
}

Pose rest_pose(Canvas canvas, double body_scale) {
  Pose pose;
  pose.canvas = canvas;
  for (const Point2& p : kRestLayout) {
    const double x = 0.5 + body_scale * (p.x - 0.5), y = 0.5 + body_scale * (p.y - 0.5);
    pose.keypoints.push_back({x * canvas.width, y * canvas.height});
  }
  pose.visible.assign(kCount, 1);
  clip_to_canvas(pose);
  return pose;
}

PoseSequence sample_pose_sequence(std::mt19937_64& rng, int frames, double amplitude, Canvas canvas,
                                  double body_scale) {
  if (frames < 1) throw ParameterError("sample_pose_sequence: T must be >= 1");
  // root dx, root dy, torso lean, head tilt, then shoulder/elbow/wrist per arm
  constexpr int kDof = 10;
  constexpr std::array<double, kDof> kRange = {0.04, 0.03, 0.08, 0.25, 0.8, 0.9, 0.6, 0.8, 0.9, 0.6};
  std::normal_distribution<double> normal(0.0, 1.0);

  std::array<double, kDof> walk{}, smooth{};
  for (int d = 0; d < kDof; ++d) walk[d] = smooth[d] = normal(rng);

  const Pose rest = rest_pose(canvas, body_scale);
  PoseSequence seq;
  seq.frames.reserve(frames);
  for (int t = 0; t < frames; ++t) {
    if (t > 0) {
      for (int d = 0; d < kDof; ++d) {
        walk[d] = 0.9 * walk[d] + 0.4359 * normal(rng);
        smooth[d] = 0.6 * smooth[d] + 0.4 * walk[d];
      }
    }
    std::array<double, kDof> q{};
    for (int d = 0; d < kDof; ++d) q[d] = amplitude * kRange[d] * std::tanh(smooth[d]);

    const auto& r = rest.keypoints;
    std::vector<Point2> kp(kCount);
    const Point2 neck = r[kNeck] + Point2{q[0] * canvas.width, q[1] * canvas.height};
    kp[kNeck] = neck;
    const double lean = q[2];
    for (int j : {kSpine, kLeftHip, kRightHip, kLeftShoulder, kRightShoulder})
      kp[j] = neck + rotate(r[j] - r[kNeck], lean);
    for (int j : {kNose, kLeftEye, kRightEye, kLeftEar, kRightEar})
      kp[j] = neck + rotate(r[j] - r[kNeck], lean + q[3]);
    struct Arm { int shoulder, elbow, wrist, hand; double sign; int dof; };
    for (const Arm arm : {Arm{kLeftShoulder, kLeftElbow, kLeftWrist, kLeftHand, 1.0, 4},
                          Arm{kRightShoulder, kRightElbow, kRightWrist, kRightHand, -1.0, 7}}) {
      double angle = lean + arm.sign * q[arm.dof];
      kp[arm.elbow] = kp[arm.shoulder] + rotate(r[arm.elbow] - r[arm.shoulder], angle);
      angle += arm.sign * q[arm.dof + 1];
      kp[arm.wrist] = kp[arm.elbow] + rotate(r[arm.wrist] - r[arm.elbow], angle);
      angle += arm.sign * q[arm.dof + 2];
      kp[arm.hand] = kp[arm.wrist] + rotate(r[arm.hand] - r[arm.wrist], angle);
    }
    Pose pose{kp, std::vector<std::uint8_t>(kCount, 1), canvas};
    clip_to_canvas(pose);
    seq.frames.push_back(std::move(pose));
  }
  return seq;
}

std::vector<Material> render_materials(const SignerSpec& spec, const Pose& pose) {
  check_figure_pose(pose);
  const Figure figure(spec, pose);
  const int w = pose.canvas.width, h = pose.canvas.height;
  std::vector<Material> out(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out[static_cast<std::size_t>(y) * w + x] = figure.classify({static_cast<double>(x), static_cast<double>(y)}).material;
  return out;
}

FrameRecord render_frame(const SignerSpec& spec, const Pose& pose) {
  spec.validate();
  check_figure_pose(pose);
  const Figure figure(spec, pose);
  const int w = pose.canvas.width, h = pose.canvas.height;
  FrameRecord rec;
  rec.image = Image(w, h, 3);
  rec.mask_head = Image(w, h, 1);
  rec.mask_hand = Image(w, h, 1);
  rec.mask_torso = Image(w, h, 1);
  rec.pose = pose;
  rec.attributes = spec;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Hit hit = figure.classify({static_cast<double>(x), static_cast<double>(y)});
      if (hit.part == Part::kNone) continue;
      const Rgb c = figure.colour(hit.material);
      for (int k = 0; k < 3; ++k) rec.image.at(x, y, k) = c[k];
      Image& mask = hit.part == Part::kHand ? rec.mask_hand
                    : hit.part == Part::kHead ? rec.mask_head
                                              : rec.mask_torso;
      mask.at(x, y) = 1.0f;
    }
  }
  quantize8(rec.image);
  return rec;
}

Image material_mask(const SignerSpec& spec, const Pose& pose, std::initializer_list<Material> materials) {
  const auto mats = render_materials(spec, pose);
  Image mask(pose.canvas.width, pose.canvas.height, 1);
  for (std::size_t i = 0; i < mats.size(); ++i)
    if (std::find(materials.begin(), materials.end(), mats[i]) != materials.end()) mask.pixels[i] = 1.0f;
  return mask;
}

Image skin_geometry_mask(const SignerSpec& spec, const Pose& pose) {
  check_figure_pose(pose);
  const Figure figure(spec, pose);
  Image mask(pose.canvas.width, pose.canvas.height, 1);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (figure.in_skin_geometry({static_cast<double>(x), static_cast<double>(y)})) mask.at(x, y) = 1.0f;
  return mask;
}

FrameRecord apply_transform(const FrameRecord& frame, const GeometricTransform& t) {
  if (t.is_identity()) return frame;
  FrameRecord out = frame;
  out.image = warp_image(frame.image, t, Interpolation::kBilinear);
  out.mask_head = warp_image(frame.mask_head, t, Interpolation::kNearest);
  out.mask_hand = warp_image(frame.mask_hand, t, Interpolation::kNearest);
  out.mask_torso = warp_image(frame.mask_torso, t, Interpolation::kNearest);
  out.pose = transform_pose(frame.pose, t);
  return out;
}

FrameRecord augment(const FrameRecord& frame, const AugmentParams& params, std::mt19937_64& rng) {
  return apply_transform(frame, sample_transform(params, rng));
}

std::vector<SignerSpec> sample_signers(int count, std::mt19937_64& rng, bool cycle_skin_tones) {
  std::uniform_int_distribution<int> tone(0, 3), binary(0, 1), clothing(0, 5);
  std::uniform_real_distribution<double> scale(0.92, 1.08);
  const int offset = tone(rng);
  std::vector<SignerSpec> out;
  for (int i = 0; i < count; ++i) {
    SignerSpec s;
    s.skin_tone = kSkinTones[cycle_skin_tones ? (offset + i) % 4 : tone(rng)];
    s.gender_proxy = kGenders[binary(rng)];
    s.ethnicity_proxy = kEthnicities[binary(rng)];
    s.clothing_colour = kClothingColours[clothing(rng)];
    s.body_scale = scale(rng);
    out.push_back(s);
  }
  return out;
}

void recount_attributes(CorpusManifest& manifest) {
  manifest.attribute_counts.clear();
  for (const ManifestRecord& r : manifest.records) {
    const SignerSpec& s = manifest.signer_of(r);
    for (AttributeKey k : kAttributeKeys)
      ++manifest.attribute_counts[std::string(attribute_key_name(k)) + "=" + s.label(k)];
  }
}

Corpus generate_corpus(const CorpusOptions& options) {
  if (options.signers < 0 || options.frames < 1 || options.image_size < 16)
    throw ParameterError("generate_corpus: need signers >= 0, frames >= 1, size >= 16");
  std::mt19937_64 rng(options.seed);
  Corpus corpus;
  corpus.manifest.image_size = options.image_size;
  corpus.manifest.seed = options.seed;
  corpus.manifest.signers = sample_signers(options.signers, rng, options.cycle_skin_tones);
  const Canvas canvas{options.image_size, options.image_size};
  for (int s = 0; s < options.signers; ++s) {
    const SignerSpec& spec = corpus.manifest.signers[s];
    const PoseSequence seq = sample_pose_sequence(rng, options.frames, options.amplitude, canvas, spec.body_scale);
    for (int t = 0; t < options.frames; ++t) {
      FrameRecord rec = render_frame(spec, seq.frames[t]);
      rec.signer_id = s;
      rec.t = t;
      ManifestRecord mr;
      mr.index = static_cast<int>(corpus.records.size());
      mr.signer = s;
      mr.t = t;
      mr.frame_path = "frames/" + std::to_string(s) + "/" + std::to_string(t) + ".png";
      for (int p = 0; p < 3; ++p)
        mr.mask_paths[p] = "masks/" + std::to_string(s) + "/" + std::to_string(t) + "_" + kPartNames[p] + ".png";
      corpus.manifest.records.push_back(mr);
      corpus.records.push_back(std::move(rec));
    }
  }
  recount_attributes(corpus.manifest);
  return corpus;
}

std::uint32_t file_crc32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "missing file");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

CorpusManifest write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (corpus.records.size() != corpus.manifest.records.size())
    throw ParameterError("write_corpus: manifest and records disagree");
  fs::create_directories(dir);
  CorpusManifest manifest = corpus.manifest;
  std::vector<PoseRow> rows;
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    const FrameRecord& rec = corpus.records[i];
    ManifestRecord& mr = manifest.records[i];
    write_png(dir / mr.frame_path, rec.image);
    mr.frame_crc = file_crc32(dir / mr.frame_path);
    const std::array<const Image*, 3> masks = {&rec.mask_head, &rec.mask_hand, &rec.mask_torso};
    for (int p = 0; p < 3; ++p) {
      write_png(dir / mr.mask_paths[p], *masks[p]);
      mr.mask_crc[p] = file_crc32(dir / mr.mask_paths[p]);
    }
    rows.push_back({mr.index, rec.pose});
  }
  write_pose_rows(dir / "poses.jsonl", rows);
  manifest.poses_crc = file_crc32(dir / "poses.jsonl");
  recount_attributes(manifest);

  nlohmann::json j;
  j["image_size"] = manifest.image_size;
  j["seed"] = manifest.seed;
  j["signers"] = nlohmann::json::array();
  for (const SignerSpec& s : manifest.signers) j["signers"].push_back(signer_to_json(s));
  j["records"] = nlohmann::json::array();
  for (const ManifestRecord& r : manifest.records) {
    nlohmann::json masks, crcs;
    for (int p = 0; p < 3; ++p) {
      masks[kPartNames[p]] = r.mask_paths[p];
      crcs[kPartNames[p]] = r.mask_crc[p];
    }
    j["records"].push_back({{"index", r.index}, {"signer", r.signer}, {"t", r.t}, {"frame", r.frame_path},
                            {"frame_crc", r.frame_crc}, {"masks", masks}, {"mask_crc", crcs}});
  }
  j["attribute_counts"] = manifest.attribute_counts;
  j["poses_crc"] = manifest.poses_crc;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError(dir / "manifest.json", "cannot open for writing");
  out << j.dump(1) << '\n';
  return manifest;
}

Corpus read_corpus(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError(manifest_path, "missing manifest");
  Corpus corpus;
  CorpusManifest& m = corpus.manifest;
  try {
    const auto j = nlohmann::json::parse(in);
    m.image_size = j.at("image_size").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("signers")) m.signers.push_back(signer_from_json(s));
    for (const auto& r : j.at("records")) {
      ManifestRecord mr;
      mr.index = r.at("index").get<int>();
      mr.signer = r.at("signer").get<int>();
      mr.t = r.at("t").get<int>();
      mr.frame_path = r.at("frame").get<std::string>();
      mr.frame_crc = r.at("frame_crc").get<std::uint32_t>();
      for (int p = 0; p < 3; ++p) {
        mr.mask_paths[p] = r.at("masks").at(kPartNames[p]).get<std::string>();
        mr.mask_crc[p] = r.at("mask_crc").at(kPartNames[p]).get<std::uint32_t>();
      }
      if (mr.signer < 0 || mr.signer >= static_cast<int>(m.signers.size()))
        throw IoError(manifest_path, "record references unknown signer");
      m.records.push_back(mr);
    }
    m.attribute_counts = j.at("attribute_counts").get<std::map<std::string, int>>();
    m.poses_crc = j.at("poses_crc").get<std::uint32_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path, std::string("malformed manifest: ") + e.what());
  }

  const auto verify = [&](const std::filesystem::path& rel, std::uint32_t crc) {
    const auto path = dir / rel;
    if (!std::filesystem::exists(path)) throw IoError(path, "missing file");
    if (file_crc32(path) != crc) throw IoError(path, "checksum mismatch");
    return path;
  };

  const Canvas canvas{m.image_size, m.image_size};
  const auto rows = read_pose_rows(verify("poses.jsonl", m.poses_crc), canvas);
  std::map<int, const Pose*> pose_by_frame;
  for (const PoseRow& row : rows) pose_by_frame[row.frame] = &row.pose;

  for (const ManifestRecord& mr : m.records) {
    FrameRecord rec;
    rec.image = read_png(verify(mr.frame_path, mr.frame_crc));
    rec.mask_head = read_png(verify(mr.mask_paths[0], mr.mask_crc[0]));
    rec.mask_hand = read_png(verify(mr.mask_paths[1], mr.mask_crc[1]));
    rec.mask_torso = read_png(verify(mr.mask_paths[2], mr.mask_crc[2]));
    const auto it = pose_by_frame.find(mr.index);
    if (it == pose_by_frame.end()) throw IoError(dir / "poses.jsonl", "no pose for frame " + std::to_string(mr.index));
    rec.pose = *it->second;
    rec.attributes = m.signer_of(mr);
    rec.signer_id = mr.signer;
    rec.t = mr.t;
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

std::vector<double> weighted_sampler(const CorpusManifest& manifest, const std::vector<AttributeKey>& keys) {
  if (manifest.records.empty()) throw ParameterError("weighted_sampler: empty manifest");
  std::map<std::string, int> counts;
  std::vector<std::string> combo(manifest.records.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    combo[i] = combination_key(manifest.signer_of(manifest.records[i]), keys);
    ++counts[combo[i]];
  }
  std::vector<double> weights(combo.size());
  for (std::size_t i = 0; i < combo.size(); ++i) weights[i] = 1.0 / counts[combo[i]];
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (double& w : weights) w /= total;
  return weights;
}

std::size_t draw_index(const std::vector<double>& weights, std::mt19937_64& rng) {
  // 53-bit uniform from the raw engine output, independent of library distributions
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return weights.size() - 1;
}

}  // namespace penet
