#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace penet::testing {

// Restores float32 on scope exit; gradient checks run in float64.
struct Float64Scope {
  Float64Scope() { torch::set_default_dtype(caffe2::TypeMeta::Make<double>()); }
  ~Float64Scope() { torch::set_default_dtype(caffe2::TypeMeta::Make<float>()); }
};

// `floor` keeps round-off on near-zero gradients from reading as error.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max(floor, std::abs(a) + std::abs(b));
}

// Round-off of a central difference is about eps*|L|/h; differences below a
// thousand times that are treated as absolute, not relative, agreement.
inline double difference_floor(double loss_value, double h) {
  return std::max(1e-6, 1e3 * 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(loss_value)) / h);
}

// The losses contain L1 terms and LeakyReLU, so a probe can straddle a kink.
// The analytic gradient is the derivative on the kink-free side, so the best
// of the central and the two one-sided differences is compared.
inline double difference_error(double f0, double fp, double fm, double h, double analytic, double floor) {
  if (std::abs(fp - fm) / (2 * h) + std::abs(analytic) < 1e-9) return 0.0;
  const double central = relative_error((fp - fm) / (2 * h), analytic, floor);
  const double forward = relative_error((fp - f0) / h, analytic, floor);
  const double backward = relative_error((f0 - fm) / h, analytic, floor);
  return std::min({central, forward, backward});
}

// Central differences of a scalar loss w.r.t. up to `probes` coordinates of x.
inline double input_gradient_error(const std::function<torch::Tensor(const torch::Tensor&)>& loss, torch::Tensor x,
                                   int probes = 30, double h = 1e-5) {
  x = x.to(torch::kFloat64).detach().requires_grad_(true);
  const auto value = loss(x);
  const double floor = difference_floor(value.item<double>(), h);
  auto analytic = torch::autograd::grad({value}, {x})[0].flatten();
  torch::NoGradGuard guard;
  auto flat = x.detach().clone().flatten();
  const int64_t stride = std::max<int64_t>(1, flat.numel() / probes);
  double worst = 0.0;
  for (int64_t i = 0; i < flat.numel(); i += stride) {
    auto xp = flat.clone(), xm = flat.clone();
    xp[i] += h;
    xm[i] -= h;
    const double fp = loss(xp.view(x.sizes())).item<double>(), fm = loss(xm.view(x.sizes())).item<double>();
    worst = std::max(worst, difference_error(value.item<double>(), fp, fm, h, analytic[i].item<double>(), floor));
  }
  return worst;
}

// Same check against a random slice of a module parameter, perturbed in place.
// h is smaller here: a bias shifts every activation of its channel, so a
// LeakyReLU/L1 kink within 1e-5 is common on small feature maps.
inline double weight_gradient_error(const std::function<torch::Tensor()>& loss, torch::Tensor param, int probes = 12,
                                    double h = 1e-6, std::uint64_t seed = 0) {
  param.mutable_grad() = torch::Tensor();
  const auto value = loss();
  const double floor = difference_floor(value.item<double>(), h);
  value.backward();
  auto analytic = param.grad().detach().clone().flatten();
  torch::NoGradGuard guard;
  auto flat = param.view(-1);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto picks = torch::randint(flat.numel(), {probes}, gen, torch::kLong);
  double worst = 0.0;
  for (int k = 0; k < probes; ++k) {
    const int64_t i = picks[k].item<int64_t>();
    const double orig = flat[i].item<double>();
    flat[i] = orig + h;
    const double fp = loss().item<double>();
    flat[i] = orig - h;
    const double fm = loss().item<double>();
    flat[i] = orig;
    worst = std::max(worst, difference_error(value.item<double>(), fp, fm, h, analytic[i].item<double>(), floor));
  }
  return worst;
}

}  // namespace penet::testing
