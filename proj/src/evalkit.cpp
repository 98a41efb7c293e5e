#include "penet/evalkit.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "penet/errors.hpp"
#include "penet/tensor_utils.hpp"

namespace penet {

namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[i] = std::exp(-0.5 * d * d / (kWindowSigma * kWindowSigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

// Separable Gaussian blur; windows are truncated at the border and their
// weights renormalised.
std::vector<double> blur(const std::vector<double>& src, int w, int h) {
  static const auto g = gaussian_window();
  const int r = kWindow / 2;
  std::vector<double> tmp(src.size()), out(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0, norm = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int xx = x + k;
        if (xx < 0 || xx >= w) continue;
        acc += g[k + r] * src[y * w + xx];
        norm += g[k + r];
      }
      tmp[y * w + x] = acc / norm;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0, norm = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int yy = y + k;
        if (yy < 0 || yy >= h) continue;
        acc += g[k + r] * tmp[yy * w + x];
        norm += g[k + r];
      }
      out[y * w + x] = acc / norm;
    }
  return out;
}

void require_same(const Image& a, const Image& b, const char* what) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw ParameterError(std::string(what) + ": image shapes differ");
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  require_same(a, b, "ssim");
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int w = a.width, h = a.height;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  double total = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = a.pixels[i * a.channels + c];
      y[i] = b.pixels[i * b.channels + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = blur(x, w, h), my = blur(y, w, h), sxx = blur(xx, w, h), syy = blur(yy, w, h),
               sxy = blur(xy, w, h);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
      acc += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(n);
  }
  return total / a.channels;
}

double psnr(const Image& a, const Image& b) {
  require_same(a, b, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.pixels.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

PixelMetrics pixel_metrics(const Image& x, const Image& x_hat, const Image* mask) {
  require_same(x, x_hat, "pixel metrics");
  if (!mask) return {ssim(x, x_hat), psnr(x, x_hat)};
  if (mask->width != x.width || mask->height != x.height || mask->channels != 1)
    throw ParameterError("pixel metrics: mask must be single-channel and match the image");
  int x0 = x.width, y0 = x.height, x1 = -1, y1 = -1;
  for (int yy = 0; yy < x.height; ++yy)
    for (int xx = 0; xx < x.width; ++xx)
      if (mask->at(xx, yy) > 0.5f) {
        x0 = std::min(x0, xx);
        y0 = std::min(y0, yy);
        x1 = std::max(x1, xx);
        y1 = std::max(y1, yy);
      }
  if (x1 < 0) return {};
  Image a(x1 - x0 + 1, y1 - y0 + 1, x.channels), b(a.width, a.height, x.channels);
  for (int yy = y0; yy <= y1; ++yy)
    for (int xx = x0; xx <= x1; ++xx) {
      if (mask->at(xx, yy) <= 0.5f) continue;
      for (int c = 0; c < x.channels; ++c) {
        a.at(xx - x0, yy - y0, c) = x.at(xx, yy, c);
        b.at(xx - x0, yy - y0, c) = x_hat.at(xx, yy, c);
      }
    }
  return {ssim(a, b), psnr(a, b)};
}

Moments feature_moments(const Eigen::MatrixXd& f, double ridge) {
  if (f.rows() < 2) throw NumericalError("fid: need at least two samples per set");
  Moments m;
  m.mean = f.colwise().mean().transpose();
  const Eigen::MatrixXd centred = f.rowwise() - m.mean.transpose();
  m.cov = centred.transpose() * centred / static_cast<double>(f.rows() - 1);
  if (f.rows() <= f.cols()) m.cov += ridge * Eigen::MatrixXd::Identity(f.cols(), f.cols());
  return m;
}

Eigen::MatrixXd matrix_sqrt(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw ParameterError("matrix_sqrt: matrix must be square");
  return m.sqrt();
}

double fid_from_moments(const Moments& a, const Moments& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows())
    throw ParameterError("fid: embedding dimensions differ");
  const double scale = std::max({1.0, a.cov.cwiseAbs().maxCoeff(), b.cov.cwiseAbs().maxCoeff()});
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a.cov), eb(b.cov);
  for (const auto* e : {&ea, &eb})
    if (e->eigenvalues().minCoeff() < -1e-9 * scale) throw NumericalError("fid: covariance is not positive semidefinite");
  // tr sqrt(A B) equals tr sqrt(A^1/2 B A^1/2), which stays symmetric when the
  // product is singular (a part rendered as a near-constant image, say)
  const Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd root_a = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  const Eigen::MatrixXd inner = root_a * b.cov * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ei(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double trace_root = ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  if (!std::isfinite(trace_root)) throw NumericalError("fid: matrix square root failed");
  const double value = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * trace_root;
  // tiny negative values are rounding noise
  return std::max(0.0, value);
}

double fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return fid_from_moments(feature_moments(a), feature_moments(b));
}

Eigen::MatrixXd to_eigen(const torch::Tensor& rows) {
  auto t = rows.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  if (t.dim() != 2) throw ParameterError("to_eigen: expected a 2-D tensor");
  Eigen::MatrixXd m(t.size(0), t.size(1));
  const double* p = t.data_ptr<double>();
  for (int64_t i = 0; i < t.size(0); ++i)
    for (int64_t j = 0; j < t.size(1); ++j) m(i, j) = p[i * t.size(1) + j];
  return m;
}

MetricStat summarize(const std::vector<double>& values) {
  MetricStat s;
  std::vector<double> v;
  for (double x : values)
    if (x == x) v.push_back(x);
  s.count = static_cast<int>(v.size());
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / v.size());
  return s;
}

namespace {

Image apply_mask(const Image& image, const Image& mask) {
  Image out = image;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      if (mask.at(x, y) <= 0.5f)
        for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = 0.0f;
  return out;
}

torch::Tensor stack(const std::vector<Image>& images) {
  std::vector<torch::Tensor> t;
  for (const auto& im : images) t.push_back(to_tensor(im));
  return torch::stack(t);
}

}  // namespace

RegionMetrics region_metrics(const std::vector<EvalFrame>& frames, FeatureExtractor& embedder) {
  RegionMetrics out;
  std::map<std::string, std::vector<double>> ssims, psnrs;
  std::map<std::string, std::vector<Image>> real_sets, fake_sets;
  for (const auto& f : frames) {
    const auto whole = pixel_metrics(f.truth, f.reconstruction);
    ssims["composite"].push_back(whole.ssim);
    psnrs["composite"].push_back(whole.psnr);
    real_sets["composite"].push_back(f.truth);
    for (const auto& s : f.samples) fake_sets["composite"].push_back(s);
    for (std::size_t r = 0; r < kMaskRegions.size(); ++r) {
      const auto m = pixel_metrics(f.truth, f.reconstruction, &f.masks[r]);
      ssims[kMaskRegions[r]].push_back(m.ssim);
      psnrs[kMaskRegions[r]].push_back(m.psnr);
      real_sets[kMaskRegions[r]].push_back(apply_mask(f.truth, f.masks[r]));
      for (const auto& s : f.samples) fake_sets[kMaskRegions[r]].push_back(apply_mask(s, f.masks[r]));
    }
  }
  torch::NoGradGuard guard;
  for (const auto& [name, values] : ssims) {
    out.ssim[name] = summarize(values);
    out.psnr[name] = summarize(psnrs[name]);
    const auto& reals = real_sets[name];
    const auto& fakes = fake_sets[name];
    if (reals.size() < 2 || fakes.size() < 2) {
      out.fid[name] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    out.fid[name] = fid(to_eigen(embedder.embed(stack(reals))), to_eigen(embedder.embed(stack(fakes))));
  }
  return out;
}

ToyPoseEstimator::ToyPoseEstimator(int image_size) : image_size_(image_size) {
  if (image_size % 4 != 0) throw ParameterError("pose estimator: image size must be a multiple of 4");
}

torch::Tensor ToyPoseEstimator::forward(const torch::Tensor& x) { return net_->forward(x); }

namespace {

torch::nn::Sequential make_estimator_net() {
  auto conv = [](int64_t in, int64_t out, int64_t stride) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
  };
  auto act = [] { return torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.1)); };
  auto up = [] {
    return torch::nn::Upsample(torch::nn::UpsampleOptions().scale_factor(std::vector<double>{2, 2}).mode(torch::kNearest));
  };
  return torch::nn::Sequential(conv(3, 24, 1), act(), conv(24, 48, 2), act(), conv(48, 64, 2), act(), conv(64, 64, 1),
                               act(), up(), conv(64, 32, 1), act(), up(), conv(32, 24, 1), act(),
                               conv(24, joints::kCount, 1));
}

torch::Tensor target_heatmaps(const std::vector<Pose>& poses, int size, double sigma) {
  auto grid = torch::arange(size, torch::kFloat32);
  std::vector<torch::Tensor> out;
  for (const auto& p : poses) {
    std::vector<float> kx, ky, vis;
    for (int j = 0; j < joints::kCount; ++j) {
      kx.push_back(static_cast<float>(p.keypoints[j].x));
      ky.push_back(static_cast<float>(p.keypoints[j].y));
      vis.push_back(p.visible[j] ? 1.0f : 0.0f);
    }
    auto dx = grid.view({1, 1, size}) - torch::tensor(kx).view({-1, 1, 1});
    auto dy = grid.view({1, size, 1}) - torch::tensor(ky).view({-1, 1, 1});
    auto h = torch::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)) * torch::tensor(vis).view({-1, 1, 1});
    out.push_back(h);
  }
  return torch::stack(out);
}

}  // namespace

double ToyPoseEstimator::train(const std::vector<Image>& images, const std::vector<Pose>& poses,
                               const PoseEstimatorOptions& options) {
  if (images.empty() || images.size() != poses.size()) throw ParameterError("pose estimator: need matching images and poses");
  torch::manual_seed(options.seed);
  net_ = make_estimator_net();
  auto x = stack(images);
  auto target = target_heatmaps(poses, image_size_, options.sigma);
  torch::optim::Adam opt(net_->parameters(), torch::optim::AdamOptions(options.learning_rate));
  auto gen = make_generator(options.seed);
  const int64_t n = x.size(0);
  for (int s = 0; s < options.steps; ++s) {
    auto idx = torch::randint(n, {std::min<int64_t>(options.batch_size, n)}, gen, torch::kInt64);
    auto logits = forward(x.index_select(0, idx));
    auto t = target.index_select(0, idx);
    // positives are rare, so up-weight them
    auto weight = 1.0 + 20.0 * t;
    auto loss = torch::nn::functional::binary_cross_entropy_with_logits(
        logits, t, torch::nn::functional::BinaryCrossEntropyWithLogitsFuncOptions().weight(weight));
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  trained_ = true;
  const auto estimates = infer(images);
  double err = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < poses.size(); ++i)
    for (int j = 0; j < joints::kCount; ++j) {
      if (!poses[i].visible[j]) continue;
      err += std::hypot(estimates[i].keypoints[j].x - poses[i].keypoints[j].x,
                        estimates[i].keypoints[j].y - poses[i].keypoints[j].y);
      ++count;
    }
  training_error_ = count ? err / count : 0.0;
  return training_error_;
}

std::vector<EstimatedPose> ToyPoseEstimator::infer(const std::vector<Image>& images) {
  if (!trained_) throw ParameterError("pose estimator: refusing to run an untrained estimator");
  torch::NoGradGuard guard;
  std::vector<EstimatedPose> out;
  if (images.empty()) return out;
  auto prob = torch::sigmoid(forward(stack(images))).contiguous();
  const int s = image_size_;
  for (int64_t b = 0; b < prob.size(0); ++b) {
    EstimatedPose est;
    for (int j = 0; j < joints::kCount; ++j) {
      auto map = prob[b][j];
      const int64_t arg = map.argmax().item<int64_t>();
      const int px = static_cast<int>(arg % s), py = static_cast<int>(arg / s);
      const auto acc = map.accessor<float, 2>();
      // sub-pixel refinement by the 3x3 centroid around the peak
      double wsum = 0.0, sx = 0.0, sy = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = px + dx, yy = py + dy;
          if (xx < 0 || yy < 0 || xx >= s || yy >= s) continue;
          const double w = acc[yy][xx];
          wsum += w;
          sx += w * xx;
          sy += w * yy;
        }
      est.keypoints.push_back(wsum > 0 ? Point2{sx / wsum, sy / wsum} : Point2{double(px), double(py)});
      est.confidence.push_back(acc[py][px]);
    }
    out.push_back(std::move(est));
  }
  return out;
}

std::string table_region_label(PoseRegion region) {
  switch (region) {
    case PoseRegion::kHead: return "Head";
    case PoseRegion::kRightHand: return "R-Hand";
    case PoseRegion::kLeftHand: return "L-Hand";
    case PoseRegion::kTorso: return "Clothes";
  }
  return "Clothes";
}

PoseEvalReport pose_eval(const SynthesisFn& generator, const std::vector<Pose>& poses, const std::vector<Image>& truths,
                         ToyPoseEstimator& estimator, int n_samples, double hit_threshold) {
  if (poses.size() != truths.size()) throw ParameterError("pose_eval: poses and truth images differ in count");
  PoseEvalReport report;
  report.samples_per_pose = n_samples;
  std::map<std::string, std::vector<double>> l2;
  for (PoseRegion r : kPoseRegions) report.regions[table_region_label(r)] = {};
  const auto truth_est = estimator.infer(truths);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const auto samples = generator(i, poses[i], n_samples);
    const auto est = estimator.infer(samples);
    for (const auto& e : est) {
      for (int j = 0; j < joints::kCount; ++j) {
        if (!poses[i].visible[j]) continue;
        const auto label = table_region_label(joint_region(j));
        auto& stats = report.regions[label];
        ++stats.total;
        if (e.confidence[j] >= hit_threshold && truth_est[i].confidence[j] >= hit_threshold) {
          ++stats.hits;
          l2[label].push_back(std::hypot(e.keypoints[j].x - poses[i].keypoints[j].x,
                                         e.keypoints[j].y - poses[i].keypoints[j].y));
        }
      }
    }
  }
  for (auto& [label, stats] : report.regions) {
    stats.hit_rate = stats.total ? 100.0 * stats.hits / stats.total : 0.0;
    stats.l2 = summarize(l2[label]);
  }
  return report;
}

}  // namespace penet
