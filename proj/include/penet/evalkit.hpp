#pragma once

#include <torch/torch.h>

#include <Eigen/Dense>

#include <array>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "penet/image.hpp"
#include "penet/losses.hpp"
#include "penet/posekit.hpp"

namespace penet {

inline constexpr double kPsnrCap = 100.0;
inline constexpr double kDefaultHitThreshold = 0.3;

struct PixelMetrics {
  double ssim = std::numeric_limits<double>::quiet_NaN();
  double psnr = std::numeric_limits<double>::quiet_NaN();
  bool valid() const { return ssim == ssim; }  // NaN marks a skipped (empty) region
};

// Gaussian-window SSIM (11x11, sigma 1.5, R = 1) averaged over channels.
double ssim(const Image& a, const Image& b);
// 10 log10(1 / MSE), capped at kPsnrCap.
double psnr(const Image& a, const Image& b);
// With a mask: both images cropped to the mask bounding box, off-mask pixels zeroed.
PixelMetrics pixel_metrics(const Image& x, const Image& x_hat, const Image* mask = nullptr);

struct Moments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Rows are samples. Adds `ridge` * I when there are no more samples than dims.
Moments feature_moments(const Eigen::MatrixXd& features, double ridge = 1e-6);
Eigen::MatrixXd matrix_sqrt(const Eigen::MatrixXd& m);
double fid_from_moments(const Moments& a, const Moments& b);
double fid(const Eigen::MatrixXd& features_a, const Eigen::MatrixXd& features_b);
Eigen::MatrixXd to_eigen(const torch::Tensor& rows);

struct MetricStat {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();
  int count = 0;
};
MetricStat summarize(const std::vector<double>& values);

inline constexpr std::array<const char*, 3> kMaskRegions = {"head", "hand", "torso"};

struct RegionMetrics {
  std::map<std::string, MetricStat> ssim, psnr;  // head, hand, torso, composite
  std::map<std::string, double> fid;             // head, hand, torso, composite
};

// Masks are stacked [head, hand, torso] single-channel images per frame.
struct EvalFrame {
  Image truth;
  Image reconstruction;  // pixel metrics
  std::vector<Image> samples;  // FID against the truths
  std::array<Image, 3> masks;
};
RegionMetrics region_metrics(const std::vector<EvalFrame>& frames, FeatureExtractor& embedder);

struct EstimatedPose {
  std::vector<Point2> keypoints;
  std::vector<double> confidence;  // in [0, 1]
};

struct PoseEstimatorOptions {
  int steps = 600;
  int batch_size = 8;
  double learning_rate = 2e-3;
  double sigma = 1.5;  // target heatmap width
  std::uint64_t seed = 3;
};

/// Small heatmap-regression network standing in for an off-the-shelf pose model.
class ToyPoseEstimator {
 public:
  explicit ToyPoseEstimator(int image_size = 64);
  // Returns the mean keypoint error (px) on the training frames.
  double train(const std::vector<Image>& images, const std::vector<Pose>& poses, const PoseEstimatorOptions& options = {});
  bool trained() const { return trained_; }
  double training_error() const { return training_error_; }
  std::vector<EstimatedPose> infer(const std::vector<Image>& images);
  EstimatedPose infer(const Image& image) { return infer(std::vector<Image>{image}).front(); }

 private:
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Sequential net_{nullptr};
  int image_size_;
  bool trained_ = false;
  double training_error_ = 0.0;
};

struct RegionPoseStats {
  MetricStat l2;
  double hit_rate = 0.0;  // percent
  int hits = 0;
  int total = 0;
};

struct PoseEvalReport {
  std::map<std::string, RegionPoseStats> regions;  // Head, R-Hand, L-Hand, Clothes
  int samples_per_pose = 5;
};

std::string table_region_label(PoseRegion region);

// n synthesised images for one pose
using SynthesisFn = std::function<std::vector<Image>(std::size_t pose_index, const Pose& pose, int n)>;

PoseEvalReport pose_eval(const SynthesisFn& generator, const std::vector<Pose>& poses, const std::vector<Image>& truths,
                         ToyPoseEstimator& estimator, int n_samples = 5, double hit_threshold = kDefaultHitThreshold);

}  // namespace penet
