#include "ptadet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ptadet/errors.hpp"

namespace ptadet {

void PointSet::validate() const {
  for (const Vec3& p : coords)
    if (!p.allFinite()) throw ContractError("PointSet: non-finite coordinate");
  if (feats.defined() && (feats.rank() != 2 || feats.dim(0) != coords.size()))
    throw ContractError("PointSet: feature rows " + shape_str(feats.shape()) + " vs " + std::to_string(coords.size()) +
                        " points");
}

std::vector<std::size_t> farthest_point_sampling(std::span<const Vec3> points, std::size_t m, std::size_t start) {
  const std::size_t n = points.size();
  if (n == 0) throw ArgumentError("farthest_point_sampling: empty point set");
  if (m == 0 || m > n)
    throw ArgumentError("farthest_point_sampling: m=" + std::to_string(m) + " outside [1, " + std::to_string(n) + "]");
  if (start >= n) throw ArgumentError("farthest_point_sampling: start index out of range");

  std::vector<std::size_t> chosen{start};
  chosen.reserve(m);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::size_t last = start;
  while (chosen.size() < m) {
    std::size_t best = n;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      min_d2[i] = std::min(min_d2[i], (points[i] - points[last]).squaredNorm());
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    chosen.push_back(best);
    last = best;
  }
  return chosen;
}

KnnResult knn_group(std::span<const Vec3> queries, std::span<const Vec3> points, std::size_t k) {
  const std::size_t n = points.size();
  if (k == 0 || k > n) throw ArgumentError("knn_group: k=" + std::to_string(k) + " with " + std::to_string(n) + " points");
  KnnResult res;
  res.k = k;
  res.indices.reserve(queries.size() * k);
  res.sq_dists.reserve(queries.size() * k);
  std::vector<std::pair<double, std::size_t>> cand(n);
  for (const Vec3& q : queries) {
    for (std::size_t i = 0; i < n; ++i) cand[i] = {(points[i] - q).squaredNorm(), i};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t j = 0; j < k; ++j) {
      res.sq_dists.push_back(cand[j].first);
      res.indices.push_back(cand[j].second);
    }
  }
  return res;
}

IdwStencil idw_stencil(std::span<const Vec3> targets, std::span<const Vec3> sources, std::size_t k, double p) {
  if (sources.empty()) throw ContractError("idw: no source points");
  const std::size_t kk = std::min(k, sources.size());
  KnnResult nn = knn_group(targets, sources, kk);
  IdwStencil st{kk, std::move(nn.indices), std::vector<double>(targets.size() * kk)};
  for (std::size_t t = 0; t < targets.size(); ++t) {
    double* w = &st.weights[t * kk];
    const double* d2 = &nn.sq_dists[t * kk];
    if (std::sqrt(d2[0]) < kIdwCoincidence) {
      std::fill_n(w, kk, 0.0);
      w[0] = 1.0;
      continue;
    }
    double total = 0.0;
    for (std::size_t j = 0; j < kk; ++j) total += (w[j] = 1.0 / std::pow(std::sqrt(d2[j]), p));
    for (std::size_t j = 0; j < kk; ++j) w[j] /= total;
  }
  return st;
}

std::vector<double> idw_interpolate(const Vec3& target, const PointSet& neighbors, std::size_t k, double p) {
  if (!neighbors.has_feats()) throw ContractError("idw_interpolate: neighbors carry no features");
  neighbors.validate();
  const IdwStencil st = idw_stencil(std::span<const Vec3>(&target, 1), neighbors.coords, k, p);
  const std::size_t c = neighbors.feats.dim(1);
  auto f = neighbors.feats.data();
  std::vector<double> out(c, 0.0);
  for (std::size_t j = 0; j < st.k; ++j)
    for (std::size_t ch = 0; ch < c; ++ch) out[ch] += st.weights[j] * f[st.indices[j] * c + ch];
  return out;
}

// ---- grid interpolation -----------------------------------------------------

namespace {

struct Axis {
  std::size_t lo, hi;
  double frac;
};

Axis clamp_axis(double x, std::size_t extent, bool& clamped) {
  const double top = static_cast<double>(extent - 1);
  if (!(x >= 0.0) || x > top) {
    clamped = true;
    x = std::isnan(x) ? 0.0 : std::clamp(x, 0.0, top);
  }
  const auto lo = static_cast<std::size_t>(std::floor(x));
  const std::size_t hi = std::min(lo + 1, extent - 1);
  return {lo, hi, x - static_cast<double>(lo)};
}

}  // namespace

Stencil<4> bilinear_stencil(std::size_t height, std::size_t width, double u, double v) {
  if (height == 0 || width == 0) throw DimensionError("bilinear_stencil: empty grid");
  Stencil<4> s;
  const Axis cu = clamp_axis(u, width, s.clamped);
  const Axis rv = clamp_axis(v, height, s.clamped);
  std::size_t t = 0;
  for (int dv = 0; dv < 2; ++dv)
    for (int du = 0; du < 2; ++du, ++t) {
      const std::size_t row = dv ? rv.hi : rv.lo;
      const std::size_t col = du ? cu.hi : cu.lo;
      s.index[t] = row * width + col;
      s.weight[t] = (dv ? rv.frac : 1.0 - rv.frac) * (du ? cu.frac : 1.0 - cu.frac);
    }
  return s;
}

Stencil<8> trilinear_stencil(std::size_t height, std::size_t width, std::size_t depth, double u, double v, double d) {
  if (height == 0 || width == 0 || depth == 0) throw DimensionError("trilinear_stencil: empty volume");
  Stencil<8> s;
  const Axis cu = clamp_axis(u, width, s.clamped);
  const Axis rv = clamp_axis(v, height, s.clamped);
  const Axis dd = clamp_axis(d, depth, s.clamped);
  std::size_t t = 0;
  for (int dv = 0; dv < 2; ++dv)
    for (int du = 0; du < 2; ++du)
      for (int dz = 0; dz < 2; ++dz, ++t) {
        const std::size_t row = dv ? rv.hi : rv.lo;
        const std::size_t col = du ? cu.hi : cu.lo;
        const std::size_t slice = dz ? dd.hi : dd.lo;
        s.index[t] = (row * width + col) * depth + slice;
        s.weight[t] = (dv ? rv.frac : 1.0 - rv.frac) * (du ? cu.frac : 1.0 - cu.frac) * (dz ? dd.frac : 1.0 - dd.frac);
      }
  return s;
}

namespace {

template <std::size_t N>
Sample apply_stencil(const Stencil<N>& s, std::span<const double> grid, std::size_t cells, std::size_t channels) {
  if (grid.size() != cells * channels) throw DimensionError("grid sample: buffer size does not match extents");
  Sample out{std::vector<double>(channels, 0.0), s.clamped};
  for (std::size_t t = 0; t < N; ++t) {
    if (s.weight[t] == 0.0) continue;
    for (std::size_t c = 0; c < channels; ++c) out.values[c] += s.weight[t] * grid[s.index[t] * channels + c];
  }
  return out;
}

}  // namespace

Sample bilinear_sample(std::span<const double> grid, std::size_t height, std::size_t width, std::size_t channels,
                       double u, double v) {
  return apply_stencil(bilinear_stencil(height, width, u, v), grid, height * width, channels);
}

Sample trilinear_sample(std::span<const double> volume, std::size_t height, std::size_t width, std::size_t depth,
                        std::size_t channels, double u, double v, double d) {
  return apply_stencil(trilinear_stencil(height, width, depth, u, v, d), volume, height * width * depth, channels);
}

// ---- LID --------------------------------------------------------------------

LidBinning::LidBinning(double d_min, double d_max, std::size_t bins) : d_min_(d_min), d_max_(d_max), bins_(bins) {
  if (!(d_min < d_max) || bins == 0) throw ArgumentError("LidBinning: need d_min < d_max and at least one bin");
}

double LidBinning::edge(std::size_t i) const {
  if (i > bins_) throw ArgumentError("LidBinning::edge index out of range");
  const double n = static_cast<double>(bins_);
  const double x = static_cast<double>(i);
  return d_min_ + (d_max_ - d_min_) * x * (x + 1.0) / (n * (n + 1.0));
}

std::vector<double> LidBinning::edges() const {
  std::vector<double> e(bins_ + 1);
  for (std::size_t i = 0; i <= bins_; ++i) e[i] = edge(i);
  return e;
}

LidEncoding LidBinning::encode(double depth) const {
  LidEncoding enc;
  if (!(depth >= d_min_) || depth > d_max_) {
    enc.clamped = true;
    depth = std::isnan(depth) ? d_min_ : std::clamp(depth, d_min_, d_max_);
  }
  const double n = static_cast<double>(bins_);
  const double t = (depth - d_min_) / (d_max_ - d_min_) * n * (n + 1.0);
  auto bin = static_cast<std::size_t>(std::max(0.0, std::floor((-1.0 + std::sqrt(1.0 + 4.0 * t)) / 2.0)));
  bin = std::min(bin, bins_ - 1);
  // Closed form can be off by one near edges.
  while (bin > 0 && depth < edge(bin)) --bin;
  while (bin + 1 < bins_ && depth >= edge(bin + 1)) ++bin;
  enc.bin = bin;
  enc.residual = (depth - edge(bin)) / width(bin);
  if (enc.residual >= 1.0) enc.residual = std::nextafter(1.0, 0.0);
  enc.residual = std::max(enc.residual, 0.0);
  return enc;
}

double LidBinning::decode(std::size_t bin, double residual) const {
  if (bin >= bins_) throw ArgumentError("LidBinning::decode bin out of range");
  return edge(bin) + residual * width(bin);
}

double LidBinning::bin_coordinate(double depth) const {
  const LidEncoding e = encode(depth);
  return static_cast<double>(e.bin) + e.residual - 0.5;
}

// ---- calibration ------------------------------------------------------------

namespace {

Eigen::Matrix4d homogeneous(const Calibration::Mat34& m) {
  Eigen::Matrix4d h = Eigen::Matrix4d::Identity();
  h.topRows<3>() = m;
  return h;
}

Eigen::Matrix4d homogeneous(const Eigen::Matrix3d& m) {
  Eigen::Matrix4d h = Eigen::Matrix4d::Identity();
  h.topLeftCorner<3, 3>() = m;
  return h;
}

template <typename M>
M checked_inverse(const M& m, const char* what) {
  Eigen::FullPivLU<M> lu(m);
  lu.setThreshold(1e-12);
  if (!m.allFinite() || !lu.isInvertible()) throw NumericError(std::string("singular calibration: ") + what);
  return lu.inverse();
}

}  // namespace

Calibration::Calibration(const Mat34& p2, const Eigen::Matrix3d& r0_rect, const Mat34& tr_velo_to_cam)
    : p2_(p2), r0_(r0_rect), tr_(tr_velo_to_cam) {
  const Eigen::Matrix4d r0h = homogeneous(r0_);
  const Eigen::Matrix4d trh = homogeneous(tr_);
  lidar_to_cam_ = r0h * trh;
  cam_to_lidar_ = checked_inverse(trh, "Tr_velo_to_cam") * checked_inverse(r0h, "R0_rect");
  k_inv_ = checked_inverse(Eigen::Matrix3d(p2_.leftCols<3>()), "P2");
}

Calibration Calibration::identity() {
  Mat34 eye = Mat34::Zero();
  eye.leftCols<3>() = Eigen::Matrix3d::Identity();
  return Calibration(eye, Eigen::Matrix3d::Identity(), eye);
}

Vec3 Calibration::lidar_to_camera(const Vec3& p) const { return (lidar_to_cam_ * p.homogeneous()).head<3>(); }

Vec3 Calibration::camera_to_lidar(const Vec3& p) const { return (cam_to_lidar_ * p.homogeneous()).head<3>(); }

ImagePoint Calibration::project_to_image(const Vec3& camera_point) const {
  const Eigen::Vector3d h = p2_ * camera_point.homogeneous();
  if (!(h.z() > 0.0)) throw BehindCameraError("point projects behind the camera (depth " + std::to_string(h.z()) + ")");
  return {h.x() / h.z(), h.y() / h.z(), h.z()};
}

Vec3 Calibration::lift_from_image(double u, double v, double depth) const {
  const Eigen::Vector3d rhs = Eigen::Vector3d(u * depth, v * depth, depth) - p2_.col(3);
  return k_inv_ * rhs;
}

}  // namespace ptadet
