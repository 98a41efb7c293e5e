#include "penet/losses.hpp"

#include <cmath>

#include "penet/errors.hpp"
#include "penet/tensor_utils.hpp"

namespace penet {

namespace F = torch::nn::functional;

namespace {

constexpr double kEps = 1.0 / 1024.0;
constexpr double kCannyLow = 0.1, kCannyHigh = 0.2, kCannyTemperature = 0.02;

// sqrt(v^2 + eps^2) - eps: a smooth |v| that is exactly 0 at 0
torch::Tensor smooth_abs(const torch::Tensor& v) { return torch::sqrt(v * v + kEps * kEps) - kEps; }

torch::Tensor filter(const torch::Tensor& gray, const torch::Tensor& kernel) {
  const int64_t pad = kernel.size(-1) / 2;
  auto padded = F::pad(gray, F::PadFuncOptions({pad, pad, pad, pad}).mode(torch::kReplicate));
  return F::conv2d(padded, kernel.to(gray.dtype()).view({1, 1, kernel.size(0), kernel.size(1)}));
}

torch::Tensor sobel_x() { return torch::tensor({{-1.0, 0.0, 1.0}, {-2.0, 0.0, 2.0}, {-1.0, 0.0, 1.0}}); }
torch::Tensor sobel_y() { return sobel_x().t().contiguous(); }

torch::Tensor gaussian5() {
  auto r = torch::arange(-2, 3, torch::kFloat64);
  auto g = torch::exp(-0.5 * r * r);
  g = g / g.sum();
  return torch::outer(g, g);
}

// value of `map` at the pixel offset (dx, dy), replicate border
torch::Tensor shifted(const torch::Tensor& map, int64_t dx, int64_t dy) {
  auto padded = F::pad(map, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
  const int64_t h = map.size(2), w = map.size(3);
  return padded.slice(2, 1 + dy, 1 + dy + h).slice(3, 1 + dx, 1 + dx + w);
}

torch::Tensor soft_canny(const torch::Tensor& gray) {
  auto smooth = filter(gray, gaussian5());
  auto gx = filter(smooth, sobel_x()), gy = filter(smooth, sobel_y());
  auto mag = torch::sqrt(gx * gx + gy * gy + kEps * kEps) - kEps;
  auto norm2 = gx * gx + gy * gy + kEps * kEps;
  // four quantised gradient directions, softly selected by alignment
  const int64_t offsets[4][2] = {{1, 0}, {1, 1}, {0, 1}, {-1, 1}};
  std::vector<torch::Tensor> align, suppress;
  for (const auto& o : offsets) {
    const double len = std::hypot(static_cast<double>(o[0]), static_cast<double>(o[1]));
    auto proj = (gx * (o[0] / len) + gy * (o[1] / len));
    align.push_back(8.0 * proj * proj / norm2);
    auto neighbour = torch::maximum(shifted(mag, o[0], o[1]), shifted(mag, -o[0], -o[1]));
    suppress.push_back(torch::sigmoid((mag - neighbour) / kCannyTemperature));
  }
  auto w = torch::softmax(torch::stack(align), 0);
  auto nms = (w * torch::stack(suppress)).sum(0);
  auto thresholds = 0.5 * (torch::sigmoid((mag - kCannyLow) / kCannyTemperature) +
                           torch::sigmoid((mag - kCannyHigh) / kCannyTemperature));
  return mag * nms * thresholds;
}

torch::Tensor init_uniform(torch::Generator& gen, at::IntArrayRef shape, double fan_in) {
  const double bound = std::sqrt(6.0 / fan_in);
  return torch::rand(shape, gen) * (2 * bound) - bound;
}

}  // namespace

const std::vector<int64_t>& RandomConvExtractor::tap_channels() {
  static const std::vector<int64_t> widths{16, 32, 64, 64, 64};
  return widths;
}

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed, int64_t embedding_dim) : embedding_dim_(embedding_dim) {
  auto gen = make_generator(seed);
  int64_t c = 3, total = 0;
  for (int64_t w : tap_channels()) {
    weights_.push_back(init_uniform(gen, {w, c, 3, 3}, static_cast<double>(c * 9)));
    biases_.push_back(torch::zeros({w}));
    c = w;
    total += w;
  }
  auto gaussian = torch::randn({total, embedding_dim}, gen, torch::kFloat64);
  projection_ = std::get<0>(torch::linalg_qr(gaussian)).to(torch::kFloat32);
}

std::vector<torch::Tensor> RandomConvExtractor::taps(const torch::Tensor& x) {
  std::vector<torch::Tensor> out;
  auto h = x * 2.0 - 1.0;
  for (size_t i = 0; i < weights_.size(); ++i) {
    auto w = weights_[i].to(x.dtype());
    auto b = biases_[i].to(x.dtype());
    h = F::leaky_relu(F::conv2d(h, w, F::Conv2dFuncOptions().bias(b).stride(i == 0 ? 1 : 2).padding(1)),
                      F::LeakyReLUFuncOptions().negative_slope(0.2));
    out.push_back(h);
  }
  return out;
}

torch::Tensor RandomConvExtractor::embed(const torch::Tensor& x) {
  std::vector<torch::Tensor> pooled;
  for (const auto& t : taps(x)) pooled.push_back(t.mean({2, 3}));
  return torch::matmul(torch::cat(pooled, 1), projection_.to(x.dtype()));
}

torch::Tensor perceptual_loss(const torch::Tensor& x, const torch::Tensor& x_hat, FeatureExtractor& extractor) {
  require_same_shape(x, x_hat, "perceptual loss");
  const auto a = extractor.taps(x), b = extractor.taps(x_hat);
  torch::Tensor total = torch::zeros({x.size(0)}, x_hat.options());
  for (size_t l = 0; l < a.size(); ++l) total = total + torch::linalg_vector_norm((a[l] - b[l]).flatten(1), 2, {1});
  return total.mean();
}

torch::Tensor to_grayscale(const torch::Tensor& rgb) {
  if (rgb.dim() != 4) throw ParameterError("edge maps: expected [B, C, H, W]");
  if (rgb.size(1) == 1) return rgb;
  if (rgb.size(1) != 3) throw ParameterError("edge maps: expected 1 or 3 channels");
  return 0.299 * rgb.narrow(1, 0, 1) + 0.587 * rgb.narrow(1, 1, 1) + 0.114 * rgb.narrow(1, 2, 1);
}

EdgeMaps edge_maps(const torch::Tensor& image) {
  auto gray = to_grayscale(image);
  EdgeMaps maps;
  auto gx = filter(gray, sobel_x()), gy = filter(gray, sobel_y());
  maps.sobel = torch::sqrt(gx * gx + gy * gy + kEps * kEps) - kEps;
  maps.laplacian = smooth_abs(filter(gray, torch::tensor({{0.0, 1.0, 0.0}, {1.0, -4.0, 1.0}, {0.0, 1.0, 0.0}})));
  maps.canny = soft_canny(gray);
  return maps;
}

torch::Tensor edge_loss(const torch::Tensor& x, const torch::Tensor& x_hat) {
  require_same_shape(x, x_hat, "edge loss");
  const auto a = edge_maps(x), b = edge_maps(x_hat);
  auto per_sample = sum_per_sample((a.sobel - b.sobel).abs()) + sum_per_sample((a.laplacian - b.laplacian).abs()) +
                    sum_per_sample((a.canny - b.canny).abs());
  return per_sample.mean();
}

TotalLoss total_generator_loss(const LossComponents& c, const LossWeights& w) {
  if (w.edge < 0 || w.attrib < 0 || w.beta < 0) throw ParameterError("loss weights must be non-negative");
  torch::Tensor total;
  LossReport report;
  auto add = [&](const torch::Tensor& term, double weight, double& slot) {
    if (!term.defined()) return;
    slot = term.item<double>();
    auto weighted = weight == 1.0 ? term : term * weight;
    total = total.defined() ? total + weighted : weighted;
  };
  add(c.perc, 1.0, report.perc);
  add(c.feat, 1.0, report.feat);
  add(c.edge, w.edge, report.edge);
  add(c.attrib, w.attrib, report.attrib);
  add(c.vae, w.beta, report.vae);
  if (!total.defined()) total = torch::zeros({});
  report.total = report.perc + report.feat + w.edge * report.edge + w.attrib * report.attrib + w.beta * report.vae;
  return {total, report};
}

}  // namespace penet
