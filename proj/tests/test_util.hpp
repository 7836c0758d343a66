#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <numbers>
#include <vector>

#include "ptadet/boxes.hpp"
#include "ptadet/geometry.hpp"
#include "ptadet/rng.hpp"

namespace ptadet::testing {

inline std::vector<Vec3> random_points(std::size_t n, Rng& rng, double extent = 10.0) {
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < n; ++i)
    pts.emplace_back(rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-extent, extent));
  return pts;
}

/// Points on a coarse integer lattice, so exact distance ties are common.
inline std::vector<Vec3> lattice_points(std::size_t n, Rng& rng, int span = 3) {
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < n; ++i)
    pts.emplace_back(static_cast<double>(rng.below(span)), static_cast<double>(rng.below(span)),
                     static_cast<double>(rng.below(span)));
  return pts;
}

inline Box3D random_box(Rng& rng, double spread = 3.0) {
  return {rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(-1.0, 1.0),
          rng.uniform(0.5, 5.0),       rng.uniform(0.5, 3.0),       rng.uniform(0.5, 2.5),
          rng.uniform(-std::numbers::pi, std::numbers::pi)};
}

/// KITTI-like calibration with a random small rotation, translation and intrinsics.
inline Calibration random_calibration(Rng& rng) {
  Calibration::Mat34 p2 = Calibration::Mat34::Zero();
  const double f = rng.uniform(300.0, 900.0);
  p2 << f, 0, rng.uniform(100.0, 700.0), rng.uniform(-50.0, 50.0), 0, f * rng.uniform(0.95, 1.05),
      rng.uniform(100.0, 300.0), rng.uniform(-1.0, 1.0), 0, 0, 1, rng.uniform(-0.01, 0.01);
  auto small_rotation = [&] {
    const Eigen::Vector3d axis = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
    return Eigen::AngleAxisd(rng.uniform(-0.05, 0.05), axis).toRotationMatrix();
  };
  const Eigen::Matrix3d r0 = small_rotation();
  Eigen::Matrix3d axes;
  axes << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  Calibration::Mat34 tr;
  tr.leftCols<3>() = small_rotation() * axes;
  tr.col(3) = Eigen::Vector3d(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.5, 0.0));
  return Calibration(p2, r0, tr);
}

// Plain greedy max-min: O(n·m), ties to the smaller index.
inline std::vector<std::size_t> fps_oracle(const std::vector<Vec3>& pts, std::size_t m, std::size_t start) {
  std::vector<std::size_t> out{start};
  std::vector<double> best(pts.size(), std::numeric_limits<double>::infinity());
  while (out.size() < m) {
    for (std::size_t i = 0; i < pts.size(); ++i) best[i] = std::min(best[i], (pts[i] - pts[out.back()]).squaredNorm());
    std::size_t arg = 0;
    for (std::size_t i = 1; i < pts.size(); ++i)
      if (best[i] > best[arg]) arg = i;
    out.push_back(arg);
  }
  return out;
}

// Quadratic NMS: walk boxes by (score desc, index asc), keep one unless a kept box overlaps it too much.
inline std::vector<std::size_t> nms_oracle(const std::vector<DetectionResult>& dets, double threshold) {
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < dets.size(); ++i) order.emplace_back(-dets[i].score, i);
  std::sort(order.begin(), order.end());
  std::vector<std::size_t> kept;
  for (const auto& [neg, i] : order) {
    bool drop = false;
    for (std::size_t k : kept) drop = drop || iou_bev(dets[i].box, dets[k].box) > threshold;
    if (!drop) kept.push_back(i);
  }
  return kept;
}

inline bool inside_box(const Box3D& b, double px, double py, double pz) {
  const double dx = px - b.x, dy = py - b.y;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double along = c * dx + s * dy, across = -s * dx + c * dy;
  return std::abs(along) <= b.l / 2 && std::abs(across) <= b.w / 2 && std::abs(pz - b.z) <= b.h / 2;
}

// Rejection-sampled 3D (or BEV when bev is set) IoU over the joint bounding box.
inline double monte_carlo_iou(const Box3D& a, const Box3D& b, std::size_t samples, Rng& rng, bool bev = false) {
  double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
  for (const Box3D* box : {&a, &b}) {
    const double ex = (std::abs(std::cos(box->yaw)) * box->l + std::abs(std::sin(box->yaw)) * box->w) / 2;
    const double ey = (std::abs(std::sin(box->yaw)) * box->l + std::abs(std::cos(box->yaw)) * box->w) / 2;
    lo[0] = std::min(lo[0], box->x - ex), hi[0] = std::max(hi[0], box->x + ex);
    lo[1] = std::min(lo[1], box->y - ey), hi[1] = std::max(hi[1], box->y + ey);
    lo[2] = std::min(lo[2], box->z - box->h / 2), hi[2] = std::max(hi[2], box->z + box->h / 2);
  }
  std::size_t in_a = 0, in_b = 0, both = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double x = rng.uniform(lo[0], hi[0]), y = rng.uniform(lo[1], hi[1]);
    const double z = bev ? a.z : rng.uniform(lo[2], hi[2]);
    Box3D fa = a, fb = b;
    if (bev) fb.z = a.z, fa.h = fb.h = 1.0;
    const bool ia = inside_box(fa, x, y, z), ib = inside_box(fb, x, y, z);
    in_a += ia;
    in_b += ib;
    both += ia && ib;
  }
  const std::size_t uni = in_a + in_b - both;
  return uni == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(uni);
}

// Box B is A jittered so that the pair usually overlaps.
inline std::pair<Box3D, Box3D> overlapping_pair(Rng& rng) {
  const Box3D a = random_box(rng, 2.0);
  Box3D b = random_box(rng, 0.0);
  b.x = a.x + rng.uniform(-1.5, 1.5);
  b.y = a.y + rng.uniform(-1.5, 1.5);
  b.z = a.z + rng.uniform(-0.5, 0.5);
  return {a, b};
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace ptadet::testing
