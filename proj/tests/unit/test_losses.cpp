#include <doctest.h>

#include <torch/torch.h>

#include <cmath>

#include "gradcheck.hpp"
#include "penet/errors.hpp"
#include "penet/losses.hpp"

using namespace penet;

namespace {

// Direct 3x3 correlation with replicate borders, one value at a time.
double brute_filter(const torch::Tensor& gray, const double k[3][3], int64_t y, int64_t x) {
  const int64_t h = gray.size(2), w = gray.size(3);
  double acc = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const int64_t yy = std::clamp<int64_t>(y + dy, 0, h - 1), xx = std::clamp<int64_t>(x + dx, 0, w - 1);
      acc += k[dy + 1][dx + 1] * gray[0][0][yy][xx].item<double>();
    }
  return acc;
}

torch::Tensor step_image(double height, int64_t size = 12) {
  auto im = torch::zeros({1, 3, size, size}, torch::kFloat64);
  im.slice(3, size / 2).fill_(height);
  return im;
}

}  // namespace

TEST_CASE("perceptual loss") {
  torch::manual_seed(0);
  RandomConvExtractor ex;
  CHECK(RandomConvExtractor::tap_channels().size() == 5);
  auto x = torch::rand({2, 3, 32, 32}), n = torch::rand({2, 3, 32, 32});
  CHECK(perceptual_loss(x, x, ex).item<double>() == 0.0);
  double prev = -1;
  for (double t : {0.0, 0.5, 1.0}) {
    const double v = perceptual_loss(x, torch::lerp(x, n, t), ex).item<double>();
    CHECK(v >= prev);
    prev = v;
  }
  CHECK_THROWS_AS(perceptual_loss(x, torch::rand({2, 3, 16, 16}), ex), ParameterError);
  // deterministic frozen extractor
  RandomConvExtractor again;
  CHECK(torch::equal(ex.embed(x), again.embed(x)));
  CHECK(ex.embed(x).sizes() == torch::IntArrayRef({2, 64}));
}

TEST_CASE("edge maps of constant images vanish") {
  for (double c : {0.0, 0.3, 1.0}) {
    auto maps = edge_maps(torch::full({2, 3, 16, 16}, c));
    CHECK(maps.sobel.abs().max().item<double>() == 0.0);
    CHECK(maps.laplacian.abs().max().item<double>() == 0.0);
    CHECK(maps.canny.abs().max().item<double>() == 0.0);
  }
}

TEST_CASE("sobel magnitude matches a direct convolution") {
  const double kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  const double ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  const double eps = 1.0 / 1024;
  for (double h : {0.25, 1.0}) {
    auto im = step_image(h);
    auto maps = edge_maps(im);
    auto gray = 0.299 * im.narrow(1, 0, 1) + 0.587 * im.narrow(1, 1, 1) + 0.114 * im.narrow(1, 2, 1);
    for (int64_t y = 0; y < 12; ++y)
      for (int64_t x = 0; x < 12; ++x) {
        const double gx = brute_filter(gray, kx, y, x), gy = brute_filter(gray, ky, y, x);
        CHECK(maps.sobel[0][0][y][x].item<double>() == doctest::Approx(std::sqrt(gx * gx + gy * gy + eps * eps) - eps));
      }
    // the peak of a step of height h is 4h, less the smoothing offset
    CHECK(maps.sobel.max().item<double>() == doctest::Approx(std::sqrt(16 * h * h + eps * eps) - eps).epsilon(1e-5));
  }
}

TEST_CASE("laplacian of a ramp is zero inside") {
  auto ramp = torch::arange(16, torch::kFloat64).div(16).view({1, 1, 1, 16}).expand({1, 3, 16, 16}).contiguous();
  auto lap = edge_maps(ramp).laplacian;
  CHECK(lap.slice(2, 1, 15).slice(3, 1, 15).abs().max().item<double>() < 1e-12);
}

TEST_CASE("soft canny responds to a step and thins it") {
  auto maps = edge_maps(step_image(1.0, 16));
  CHECK(maps.canny.min().item<double>() >= 0.0);
  CHECK(maps.canny.max().item<double>() > 0.5);
  // far from the edge the response is negligible
  CHECK(maps.canny.slice(3, 0, 3).max().item<double>() < 1e-3);
}

TEST_CASE("edge loss") {
  auto flat = torch::full({1, 3, 12, 12}, 0.5, torch::kFloat64);
  auto step = step_image(1.0);
  CHECK(edge_loss(flat, flat).item<double>() == 0.0);
  CHECK(edge_loss(flat, step).item<double>() > 0.0);
  torch::manual_seed(1);
  auto a = torch::rand({2, 3, 12, 12}), b = torch::rand({2, 3, 12, 12});
  CHECK(edge_loss(a, b).item<double>() == doctest::Approx(edge_loss(b, a).item<double>()));
}

TEST_CASE("loss gradients match finite differences") {
  testing::Float64Scope f64;
  torch::manual_seed(2);
  RandomConvExtractor ex;
  auto x = torch::rand({2, 3, 16, 16});
  auto x_hat = torch::rand({2, 3, 16, 16});
  CHECK(testing::input_gradient_error([&](const torch::Tensor& v) { return perceptual_loss(x, v, ex); }, x_hat) < 1e-3);
  const auto target = edge_maps(x);
  auto op = [&](auto member) {
    return [&, member](const torch::Tensor& v) { return (edge_maps(v).*member - target.*member).abs().sum(); };
  };
  CHECK(testing::input_gradient_error(op(&EdgeMaps::sobel), x_hat) < 1e-3);
  CHECK(testing::input_gradient_error(op(&EdgeMaps::laplacian), x_hat) < 1e-3);
  CHECK(testing::input_gradient_error(op(&EdgeMaps::canny), x_hat) < 1e-3);
  CHECK(testing::input_gradient_error([&](const torch::Tensor& v) { return edge_loss(x, v); }, x_hat) < 1e-3);
}

TEST_CASE("total loss assembly") {
  LossWeights w;
  CHECK(w.edge == 0.01);
  CHECK(w.attrib == 0.001);
  CHECK(w.beta == 0.001);
  auto one = torch::ones({}, torch::kFloat64);
  auto all = total_generator_loss({one, one, one, one, one}, w);
  CHECK(all.total.item<double>() == doctest::Approx(2.012).epsilon(1e-12));
  CHECK(all.report.total == doctest::Approx(2.012).epsilon(1e-12));
  auto zero = torch::zeros({}, torch::kFloat64);
  CHECK(total_generator_loss({zero, zero, zero, zero, zero}, w).total.item<double>() == 0.0);
  CHECK(total_generator_loss({}, w).total.item<double>() == 0.0);
  // the "w/o L_edge" row only differs by the edge weight
  LossWeights no_edge = w;
  no_edge.edge = 0;
  CHECK(total_generator_loss({one, one, torch::full({}, 5.0), one, one}, no_edge).total.item<double>() ==
        doctest::Approx(2.002));
  CHECK_THROWS_AS(total_generator_loss({}, LossWeights{-1, 0, 0}), ParameterError);
}
