#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ptadet/tensor.hpp"

namespace ptadet {

using Vec3 = Eigen::Vector3d;

/// Coordinates in meters, LiDAR frame (X forward, Y left, Z up), with an
/// optional [N×C] feature tensor.
struct PointSet {
  std::vector<Vec3> coords;
  Tensor feats;

  std::size_t size() const { return coords.size(); }
  bool has_feats() const { return feats.defined(); }
  /// Throws ContractError when feats are present with the wrong row count.
  void validate() const;
};

// ---- sampling / grouping ----------------------------------------------------

/// Greedy max-min selection starting from `start`; ties go to the smaller index.
std::vector<std::size_t> farthest_point_sampling(std::span<const Vec3> points, std::size_t m, std::size_t start = 0);

/// Row-major [queries × k] neighbor indices, each row sorted by (distance, index).
struct KnnResult {
  std::size_t k = 0;
  std::vector<std::size_t> indices;
  std::vector<double> sq_dists;
};

KnnResult knn_group(std::span<const Vec3> queries, std::span<const Vec3> points, std::size_t k);

/// Interpolation stencil: for each target, k source indices and normalized weights.
struct IdwStencil {
  std::size_t k = 0;
  std::vector<std::size_t> indices;
  std::vector<double> weights;
};

inline constexpr double kIdwCoincidence = 1e-10;

/// Inverse-distance weights w = 1/d^p over the k nearest sources, normalized.
/// A source closer than 1e-10 takes weight 1 and the rest 0.
IdwStencil idw_stencil(std::span<const Vec3> targets, std::span<const Vec3> sources, std::size_t k = 3,
                       double p = 2.0);

/// Single-target inverse-distance interpolation of `neighbors.feats`.
std::vector<double> idw_interpolate(const Vec3& target, const PointSet& neighbors, std::size_t k = 3, double p = 2.0);

// ---- grid interpolation -----------------------------------------------------

/// Corner indices into a flattened grid and their blend weights.
template <std::size_t N>
struct Stencil {
  std::array<std::size_t, N> index{};
  std::array<double, N> weight{};
  bool clamped = false;
};

/// (u, v) = (column, row) on an H×W lattice; clamped to [0, W-1]×[0, H-1].
Stencil<4> bilinear_stencil(std::size_t height, std::size_t width, double u, double v);
/// (u, v, d) = (column, row, depth slice) on an H×W×D lattice, flattened as (row·W + col)·D + d.
Stencil<8> trilinear_stencil(std::size_t height, std::size_t width, std::size_t depth, double u, double v, double d);

struct Sample {
  std::vector<double> values;
  bool clamped = false;
};

/// grid is [H×W×C] row-major.
Sample bilinear_sample(std::span<const double> grid, std::size_t height, std::size_t width, std::size_t channels,
                       double u, double v);
/// volume is [H×W×D×C] row-major.
Sample trilinear_sample(std::span<const double> volume, std::size_t height, std::size_t width, std::size_t depth,
                        std::size_t channels, double u, double v, double d);

// ---- depth discretization ---------------------------------------------------

struct LidEncoding {
  std::size_t bin = 0;
  double residual = 0.0;  // fraction of the bin width, in [0, 1)
  bool clamped = false;
};

/// Linear-increasing depth bins: edge(i) = d_min + (d_max - d_min)·i(i+1)/(D(D+1)).
class LidBinning {
 public:
  LidBinning(double d_min = 0.0, double d_max = 70.4, std::size_t bins = 80);

  double d_min() const { return d_min_; }
  double d_max() const { return d_max_; }
  std::size_t bins() const { return bins_; }

  double edge(std::size_t i) const;
  std::vector<double> edges() const;
  double width(std::size_t bin) const { return edge(bin + 1) - edge(bin); }

  LidEncoding encode(double depth) const;
  double decode(std::size_t bin, double residual) const;
  /// Continuous position along the bin axis with bin centers at integers.
  double bin_coordinate(double depth) const;

 private:
  double d_min_, d_max_;
  std::size_t bins_;
};

// ---- calibration ------------------------------------------------------------

struct ImagePoint {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

/// KITTI camera calibration. Camera coordinates here are rectified
/// reference-camera coordinates (X right, Y down, Z forward).
class Calibration {
 public:
  using Mat34 = Eigen::Matrix<double, 3, 4>;

  /// Throws NumericError if R0_rect, Tr_velo_to_cam (homogeneous) or the
  /// left 3×3 block of P2 is singular.
  Calibration(const Mat34& p2, const Eigen::Matrix3d& r0_rect, const Mat34& tr_velo_to_cam);
  static Calibration identity();

  const Mat34& p2() const { return p2_; }
  const Eigen::Matrix3d& r0_rect() const { return r0_; }
  const Mat34& tr_velo_to_cam() const { return tr_; }

  Vec3 lidar_to_camera(const Vec3& p) const;
  Vec3 camera_to_lidar(const Vec3& p) const;

  /// Perspective projection of a camera-frame point. Throws BehindCameraError if depth <= 0.
  ImagePoint project_to_image(const Vec3& camera_point) const;
  /// Inverse of project_to_image for a known depth.
  Vec3 lift_from_image(double u, double v, double depth) const;
  ImagePoint project_lidar(const Vec3& lidar_point) const { return project_to_image(lidar_to_camera(lidar_point)); }

 private:
  Mat34 p2_;
  Eigen::Matrix3d r0_;
  Mat34 tr_;
  Eigen::Matrix4d lidar_to_cam_;  // R0_h · Tr_h
  Eigen::Matrix4d cam_to_lidar_;  // Tr_h⁻¹ · R0_h⁻¹
  Eigen::Matrix3d k_inv_;
};

}  // namespace ptadet
