#include "ptadet/losses.hpp"

#include <algorithm>
#include <cmath>

#include "ptadet/errors.hpp"

namespace ptadet {

void LossWeights::validate() const {
  for (double v : {depth, rpn, rcnn, lambda1, lambda2, vote, focal_alpha, focal_gamma, foreground_depth})
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("loss weights must be finite and non-negative");
  if (rcnn != 0.0) throw ConfigError("loss weight rcnn must be 0: the refinement stage is not implemented");
  if (focal_alpha > 1.0) throw ConfigError("focal alpha must lie in [0, 1]");
}

FocalValue focal_loss(double p, bool is_foreground, double alpha, double gamma) {
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  FocalValue v;
  v.clamped = !(p >= lo && p <= hi);
  const double c = std::clamp(p, lo, hi);
  const double ct = is_foreground ? c : 1.0 - c;
  const double at = is_foreground ? alpha : 1.0 - alpha;
  v.loss = -at * std::pow(1.0 - ct, gamma) * std::log(ct);
  return v;
}

double smooth_l1(double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; }

void DepthTargets::validate(std::size_t bins) const {
  if (pixels.empty()) throw ContractError("depth targets are empty");
  if (gt_bin.size() != pixels.size() || gt_res.size() != pixels.size())
    throw DimensionError("depth targets: field lengths differ");
  for (std::size_t i = 0; i < gt_bin.size(); ++i) {
    if (gt_bin[i] >= bins) throw ArgumentError("depth targets: bin out of range");
    if (!(gt_res[i] >= 0.0 && gt_res[i] < 1.0)) throw ArgumentError("depth targets: residual outside [0, 1)");
  }
}

DepthTargets make_depth_targets(std::span<const Vec3> lidar_points, const Calibration& calib,
                                const LidBinning& binning, std::size_t image_height, std::size_t image_width) {
  DepthTargets t;
  for (const Vec3& p : lidar_points) {
    const Vec3 cam = calib.lidar_to_camera(p);
    if (cam.z() <= 0.0) continue;
    const ImagePoint ip = calib.project_to_image(cam);
    if (ip.u < 0.0 || ip.v < 0.0 || ip.u > static_cast<double>(image_width - 1) ||
        ip.v > static_cast<double>(image_height - 1))
      continue;
    const LidEncoding e = binning.encode(ip.depth);
    t.pixels.push_back({ip.u, ip.v});
    t.gt_bin.push_back(e.bin);
    t.gt_res.push_back(e.residual);
  }
  return t;
}

DepthLoss depth_loss(const DepthPrediction& dp, const DepthTargets& targets, std::size_t stride,
                     const LossWeights& w) {
  const std::size_t d = dp.bin_logits.dim(1);
  targets.validate(d);
  const std::size_t n = targets.size();
  std::vector<std::size_t> cells(n), picks(n);
  for (std::size_t i = 0; i < n; ++i) {
    const long col = std::clamp(std::lround(pixel_to_grid(targets.pixels[i][0], stride)), 0L,
                                static_cast<long>(dp.width) - 1);
    const long row = std::clamp(std::lround(pixel_to_grid(targets.pixels[i][1], stride)), 0L,
                                static_cast<long>(dp.height) - 1);
    cells[i] = static_cast<std::size_t>(row) * dp.width + static_cast<std::size_t>(col);
    picks[i] = i * d + targets.gt_bin[i];
  }
  const Tensor probs = softmax(gather_rows(dp.bin_logits, cells), 1);
  const Tensor p_true = gather_rows(reshape(probs, {n * d, 1}), picks);
  const std::vector<unsigned char> all_fg(n, 1);
  const double inv_n = 1.0 / static_cast<double>(n);

  DepthLoss out;
  // multiclass focal: α_t = α for the true bin
  out.bin = scale(sum(focal_terms(p_true, all_fg, w.focal_alpha, w.focal_gamma)), inv_n);
  const Tensor r_pred = gather_rows(reshape(gather_rows(dp.residuals, cells), {n * d, 1}), picks);
  const Tensor r_true = Tensor::from({n, 1}, targets.gt_res);
  out.res = scale(sum(smooth_l1(sub(r_pred, r_true))), inv_n);
  out.total = scale(add(out.bin, scale(out.res, w.lambda1)), w.foreground_depth);
  return out;
}

RpnLoss rpn_loss(const RpnOutput& out, const RpnTargets& targets, const LossWeights& w) {
  const std::size_t n = out.coords.size();
  if (n == 0) throw ContractError("rpn loss: no points");
  if (targets.num_points != n || targets.cls_fg.size() != out.scores.numel())
    throw DimensionError("rpn loss: targets were built for a different output");
  RpnLoss l;
  l.cls = scale(sum(focal_terms(out.scores, targets.cls_fg, w.focal_alpha, w.focal_gamma)),
                1.0 / static_cast<double>(n));
  const std::size_t nf = targets.fg_points.size();
  if (nf == 0) {
    l.no_foreground = true;
    l.reg = Tensor::scalar(0.0);
    l.vote = Tensor::scalar(0.0);
    l.total = l.cls;
    return l;
  }
  const double inv = 1.0 / static_cast<double>(nf);
  l.reg = scale(sum(smooth_l1(sub(gather_rows(out.residuals, targets.fg_points), targets.reg_targets))), inv);
  l.vote = scale(sum(smooth_l1(sub(gather_rows(out.vote_offsets, targets.fg_points), targets.vote_targets))), inv);
  l.total = add(add(l.cls, scale(l.reg, w.lambda2)), scale(l.vote, w.vote));
  return l;
}

Tensor total_loss(const Tensor& depth, const Tensor& rpn, const LossWeights& w) {
  w.validate();
  return add(scale(depth, w.depth), scale(rpn, w.rpn));
}

}  // namespace ptadet
