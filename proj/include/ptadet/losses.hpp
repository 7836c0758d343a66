#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "ptadet/frustum.hpp"
#include "ptadet/geometry.hpp"
#include "ptadet/rpn.hpp"
#include "ptadet/tensor.hpp"

namespace ptadet {

struct LossWeights {
  double depth = 1.0;
  double rpn = 1.0;
  double rcnn = 0.0;  // refinement stage is not part of this pipeline; must stay 0
  double lambda1 = 10.0;  // depth residual balance
  double lambda2 = 1.0;   // rpn regression balance
  double vote = 1.0;      // vote offset term inside the rpn loss
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double foreground_depth = 1.0;  // multiplier on the depth loss

  /// Throws ConfigError on negative/non-finite weights or rcnn != 0.
  void validate() const;
};

struct FocalValue {
  double loss = 0.0;
  bool clamped = false;  // p was outside [1e-7, 1 - 1e-7]
};

/// -α_t (1 - c_t)^γ log c_t with c_t = p (foreground) or 1 - p, α_t = α or 1 - α.
FocalValue focal_loss(double p, bool is_foreground, double alpha, double gamma);
double smooth_l1(double x);

struct DepthTargets {
  std::vector<std::array<double, 2>> pixels;  // (u, v)
  std::vector<std::size_t> gt_bin;
  std::vector<double> gt_res;

  std::size_t size() const { return pixels.size(); }
  void validate(std::size_t bins) const;
};

/// Targets from LiDAR points: pixel = projection, depth = camera-frame depth, LID-encoded.
/// Points behind the camera or outside the image are skipped.
DepthTargets make_depth_targets(std::span<const Vec3> lidar_points, const Calibration& calib,
                                const LidBinning& binning, std::size_t image_height, std::size_t image_width);

struct DepthLoss {
  Tensor bin;    // mean multiclass focal over targets
  Tensor res;    // mean smooth-L1 of the gt-bin residual
  Tensor total;  // foreground_depth · (bin + λ1·res)
};

/// Predictions are read at the feature cell nearest to each target pixel.
DepthLoss depth_loss(const DepthPrediction& dp, const DepthTargets& targets, std::size_t stride,
                     const LossWeights& w);

struct RpnLoss {
  Tensor cls;
  Tensor reg;
  Tensor vote;
  Tensor total;  // cls + λ2·reg + vote_weight·vote
  bool no_foreground = false;
};

RpnLoss rpn_loss(const RpnOutput& out, const RpnTargets& targets, const LossWeights& w);

/// λ_depth·depth + λ_rpn·rpn.
Tensor total_loss(const Tensor& depth, const Tensor& rpn, const LossWeights& w);

}  // namespace ptadet
