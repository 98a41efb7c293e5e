#include "penet/train_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "penet/errors.hpp"

namespace penet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ParameterError("config: '" + key + "' expects a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ParameterError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Field {
  const char* name;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

#define PENET_INT(field)                                                                          \
  Field{#field, [](const TrainConfig& c) { return std::to_string(c.field); },                     \
        [](TrainConfig& c, const std::string& v) { c.field = parse_number<decltype(c.field)>(#field, v); }}
#define PENET_DOUBLE(name, field)                                                                 \
  Field{name, [](const TrainConfig& c) { return format_double(c.field); },                        \
        [](TrainConfig& c, const std::string& v) { c.field = parse_number<double>(name, v); }}
#define PENET_BOOL(field)                                                                         \
  Field{#field, [](const TrainConfig& c) { return std::string(c.field ? "true" : "false"); },     \
        [](TrainConfig& c, const std::string& v) { c.field = parse_bool(#field, v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"corpus", [](const TrainConfig& c) { return c.corpus; },
            [](TrainConfig& c, const std::string& v) { c.corpus = v; }},
      PENET_INT(image_size),
      PENET_INT(batch_size),
      PENET_INT(steps),
      PENET_DOUBLE("lr_g", lr_g),
      PENET_DOUBLE("lr_d", lr_d),
      PENET_DOUBLE("beta1", beta1),
      PENET_DOUBLE("beta2", beta2),
      PENET_DOUBLE("lambda_edge", weights.edge),
      PENET_DOUBLE("lambda_attrib", weights.attrib),
      PENET_DOUBLE("beta", weights.beta),
      Field{"scheme", [](const TrainConfig& c) { return scheme_name(c.scheme); },
            [](TrainConfig& c, const std::string& v) { c.scheme = parse_scheme(v); }},
      Field{"pose_format",
            [](const TrainConfig& c) { return std::string(c.pose_format == PoseFormat::kSkeleton ? "skeleton" : "heatmap"); },
            [](TrainConfig& c, const std::string& v) {
              if (v == "skeleton") c.pose_format = PoseFormat::kSkeleton;
              else if (v == "heatmap") c.pose_format = PoseFormat::kHeatmap;
              else throw ParameterError("config: pose_format must be skeleton or heatmap");
            }},
      Field{"psi", [](const TrainConfig& c) { return psi_name(c.psi); },
            [](TrainConfig& c, const std::string& v) { c.psi = parse_psi(v); }},
      PENET_BOOL(skips),
      PENET_BOOL(hand_mask),
      PENET_BOOL(share_psi),
      PENET_BOOL(conditional),
      Field{"attribute_keys",
            [](const TrainConfig& c) {
              std::string out;
              for (auto k : c.attribute_keys) out += (out.empty() ? "" : ",") + std::string(attribute_key_name(k));
              return out;
            },
            [](TrainConfig& c, const std::string& v) {
              c.attribute_keys.clear();
              std::stringstream ss(v);
              std::string item;
              while (std::getline(ss, item, ',')) {
                item = trim(item);
                if (!item.empty()) c.attribute_keys.push_back(parse_attribute_key(item));
              }
            }},
      PENET_BOOL(posterior_pose),
      PENET_BOOL(fxy_conv),
      PENET_BOOL(posterior_attribute),
      PENET_BOOL(attribute_upsampled),
      PENET_INT(levels),
      PENET_INT(base_channels),
      PENET_INT(max_channels),
      PENET_INT(latent_dim),
      PENET_INT(style_dim),
      PENET_INT(d_scales),
      PENET_INT(d_layers),
      PENET_INT(d_base_channels),
      PENET_INT(classifier_steps),
      PENET_BOOL(augment),
      PENET_INT(seed),
      PENET_BOOL(debug_checks),
  };
  return table;
}

}  // namespace

std::string psi_name(PsiMode mode) {
  switch (mode) {
    case PsiMode::kModulate: return "modulate";
    case PsiMode::kConv: return "conv";
    case PsiMode::kNone: return "none";
  }
  return "modulate";
}

PsiMode parse_psi(const std::string& name) {
  if (name == "modulate") return PsiMode::kModulate;
  if (name == "conv") return PsiMode::kConv;
  if (name == "none") return PsiMode::kNone;
  throw ParameterError("unknown psi variant '" + name + "'");
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.name) {
      f.set(*this, value);
      return;
    }
  }
  throw ParameterError("config: unknown key '" + key + "'");
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig config;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParameterError("config line " + std::to_string(lineno) + ": expected key=value");
    config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  config.validate();
  return config;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string TrainConfig::serialize() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.name) + "=" + f.get(*this) + "\n";
  return out;
}

std::uint64_t TrainConfig::hash() const { return fnv1a64(serialize()); }

void TrainConfig::validate() const {
  if (image_size < 8 || batch_size < 1 || steps < 0) throw ParameterError("config: sizes must be positive");
  if (lr_g < 0 || lr_d < 0) throw ParameterError("config: learning rates must be non-negative");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ParameterError("config: moment terms must be in [0, 1)");
  if (weights.edge < 0 || weights.attrib < 0 || weights.beta < 0) throw ParameterError("config: loss weights must be non-negative");
  if (classifier_steps < 0) throw ParameterError("config: classifier_steps must be >= 0");
  model_config();
  critic_config().validate();
}

PENetConfig TrainConfig::model_config() const {
  PENetConfig m;
  m.unet.levels = levels;
  m.unet.base_channels = base_channels;
  m.unet.max_channels = max_channels;
  m.unet.image_size = image_size;
  m.pose_format = pose_format;
  m.psi = psi;
  m.skips = skips;
  m.share_psi = share_psi;
  m.hand_decoder = hand_mask;
  m.conditional = conditional;
  m.latent_dim = latent_dim;
  m.style_dim = style_dim;
  m.posterior.scheme = scheme;
  m.posterior.use_pose = posterior_pose;
  m.posterior.conv_fusion = fxy_conv;
  m.posterior.attribute_token = posterior_attribute;
  m.posterior.attribute_upsampled = attribute_upsampled;
  m.finalize();
  return m;
}

DiscriminatorConfig TrainConfig::critic_config() const {
  DiscriminatorConfig d;
  d.n_scales = d_scales;
  d.layers = d_layers;
  d.in_channels = condition_channels(pose_format) + 9;
  d.base_channels = d_base_channels;
  return d;
}

}  // namespace penet
