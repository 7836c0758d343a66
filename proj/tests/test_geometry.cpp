#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "ptadet/errors.hpp"
#include "ptadet/geometry.hpp"
#include "test_util.hpp"

using namespace ptadet;
using ptadet::testing::fps_oracle;
using ptadet::testing::lattice_points;
using ptadet::testing::random_calibration;
using ptadet::testing::random_points;

TEST(Fps, MatchesGreedyOracleOnRandomAndTiedInputs) {
  Rng rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const bool tied = trial % 2 == 1;
    const std::size_t n = 2 + rng.below(60);
    const auto pts = tied ? lattice_points(n, rng) : random_points(n, rng);
    const std::size_t m = 1 + rng.below(n);
    const std::size_t start = rng.below(n);
    EXPECT_EQ(farthest_point_sampling(pts, m, start), fps_oracle(pts, m, start)) << "trial " << trial;
  }
}

TEST(Fps, RejectsBadBudgets) {
  const std::vector<Vec3> pts{Vec3::Zero(), Vec3::Ones()};
  EXPECT_THROW(farthest_point_sampling(pts, 3), ArgumentError);
  EXPECT_THROW(farthest_point_sampling(pts, 0), ArgumentError);
  EXPECT_THROW(farthest_point_sampling(pts, 1, 2), ArgumentError);
  EXPECT_THROW(farthest_point_sampling(std::vector<Vec3>{}, 1), ArgumentError);
}

TEST(Knn, MatchesSortedBruteForce) {
  Rng rng(8);
  for (int trial = 0; trial < 40; ++trial) {
    const auto pts = trial % 2 ? lattice_points(30, rng) : random_points(30, rng);
    const auto queries = random_points(7, rng, 3.0);
    const std::size_t k = 1 + rng.below(30);
    const KnnResult r = knn_group(queries, pts, k);
    ASSERT_EQ(r.indices.size(), queries.size() * k);
    for (std::size_t q = 0; q < queries.size(); ++q) {
      std::vector<std::pair<double, std::size_t>> all;
      for (std::size_t i = 0; i < pts.size(); ++i) all.emplace_back((pts[i] - queries[q]).squaredNorm(), i);
      std::ranges::sort(all);
      for (std::size_t j = 0; j < k; ++j) {
        EXPECT_EQ(r.indices[q * k + j], all[j].second);
        EXPECT_DOUBLE_EQ(r.sq_dists[q * k + j], all[j].first);
      }
    }
  }
  EXPECT_THROW(knn_group(random_points(2, rng), random_points(2, rng), 3), ArgumentError);
}

TEST(Idw, WeightsFollowInverseSquareDistance) {
  Rng rng(9);
  const auto src = random_points(12, rng);
  const auto dst = random_points(5, rng);
  const IdwStencil st = idw_stencil(dst, src);
  ASSERT_EQ(st.k, 3u);
  for (std::size_t t = 0; t < dst.size(); ++t) {
    double norm = 0;
    for (std::size_t j = 0; j < 3; ++j) norm += 1.0 / (src[st.indices[t * 3 + j]] - dst[t]).squaredNorm();
    for (std::size_t j = 0; j < 3; ++j) {
      const double expected = (1.0 / (src[st.indices[t * 3 + j]] - dst[t]).squaredNorm()) / norm;
      EXPECT_NEAR(st.weights[t * 3 + j], expected, 1e-14);
    }
  }
}

TEST(Idw, CoincidentSourceTakesAllWeight) {
  const std::vector<Vec3> src{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  const PointSet nb{src, Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6})};
  const auto v = idw_interpolate(Vec3(1, 0, 0), nb);
  EXPECT_EQ(v, (std::vector<double>{3, 4}));
}

TEST(Interpolation, ReproducesAffineFieldsExactly) {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 2 + rng.below(6), w = 2 + rng.below(6), d = 2 + rng.below(5), c = 2;
    const double a0 = rng.uniform(-3, 3), au = rng.uniform(-3, 3), av = rng.uniform(-3, 3), ad = rng.uniform(-3, 3);
    std::vector<double> grid(h * w * c), vol(h * w * d * c);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col) {
        for (std::size_t ch = 0; ch < c; ++ch) grid[(r * w + col) * c + ch] = a0 + au * col + av * r + ch;
        for (std::size_t k = 0; k < d; ++k)
          for (std::size_t ch = 0; ch < c; ++ch)
            vol[((r * w + col) * d + k) * c + ch] = a0 + au * col + av * r + ad * k - ch;
      }
    const double u = rng.uniform(0, w - 1.0), v = rng.uniform(0, h - 1.0), z = rng.uniform(0, d - 1.0);
    const Sample s2 = bilinear_sample(grid, h, w, c, u, v);
    const Sample s3 = trilinear_sample(vol, h, w, d, c, u, v, z);
    EXPECT_FALSE(s2.clamped);
    for (std::size_t ch = 0; ch < c; ++ch) {
      EXPECT_NEAR(s2.values[ch], a0 + au * u + av * v + ch, 1e-12);
      EXPECT_NEAR(s3.values[ch], a0 + au * u + av * v + ad * z - ch, 1e-12);
    }
  }
}

TEST(Interpolation, StencilWeightsArePartitionOfUnityAndClampFlagged) {
  const Stencil<4> s = bilinear_stencil(4, 5, 7.5, -1.0);
  double total = 0;
  for (double w : s.weight) total += w;
  EXPECT_NEAR(total, 1.0, 1e-15);
  EXPECT_TRUE(s.clamped);
  const Stencil<8> t = trilinear_stencil(3, 3, 4, 1.2, 0.4, 2.9);
  total = 0;
  for (double w : t.weight) total += w;
  EXPECT_NEAR(total, 1.0, 1e-15);
  EXPECT_FALSE(t.clamped);
}

TEST(Lid, EdgesFollowLinearIncreasingFormula) {
  const LidBinning b(2.0, 46.8, 80);
  for (std::size_t i = 0; i <= 80; ++i)
    EXPECT_NEAR(b.edge(i), 2.0 + 44.8 * static_cast<double>(i * (i + 1)) / (80.0 * 81.0), 1e-12);
  for (std::size_t i = 1; i < 80; ++i) EXPECT_GT(b.width(i), b.width(i - 1));
}

TEST(Lid, EncodeDecodeRoundTrip) {
  Rng rng(11);
  const LidBinning b;
  for (int i = 0; i < 1000; ++i) {
    const double d = rng.uniform(0.0, 70.4);
    const LidEncoding e = b.encode(d);
    EXPECT_FALSE(e.clamped);
    EXPECT_GE(e.residual, 0.0);
    EXPECT_LT(e.residual, 1.0);
    EXPECT_LE(b.edge(e.bin), d);
    EXPECT_NEAR(b.decode(e.bin, e.residual), d, 1e-9);
  }
  for (std::size_t i = 0; i < 80; ++i) EXPECT_EQ(b.encode(b.edge(i)).bin, i);
}

TEST(Lid, OutOfRangeDepthsClamp) {
  const LidBinning b;
  EXPECT_TRUE(b.encode(-1.0).clamped);
  EXPECT_EQ(b.encode(-1.0).bin, 0u);
  EXPECT_TRUE(b.encode(100.0).clamped);
  EXPECT_EQ(b.encode(100.0).bin, 79u);
  EXPECT_THROW(LidBinning(5.0, 5.0, 4), ArgumentError);
  EXPECT_THROW(b.decode(80, 0.0), ArgumentError);
}

TEST(Calibration, RoundTripsAcrossRandomCalibrations) {
  Rng rng(12);
  for (int c = 0; c < 10; ++c) {
    const Calibration calib = random_calibration(rng);
    for (int i = 0; i < 100; ++i) {
      const Vec3 p(rng.uniform(2, 60), rng.uniform(-20, 20), rng.uniform(-3, 2));
      EXPECT_LT((calib.camera_to_lidar(calib.lidar_to_camera(p)) - p).norm(), 1e-9);
      const ImagePoint ip = calib.project_lidar(p);
      EXPECT_LT((calib.camera_to_lidar(calib.lift_from_image(ip.u, ip.v, ip.depth)) - p).norm(), 1e-9);
    }
  }
}

TEST(Calibration, ProjectionMatchesPinholeModel) {
  Calibration::Mat34 p2;
  p2 << 700, 0, 600, 0, 0, 700, 180, 0, 0, 0, 1, 0;
  Calibration::Mat34 tr;
  tr << 0, -1, 0, 0, 0, 0, -1, 0, 1, 0, 0, 0;
  const Calibration c(p2, Eigen::Matrix3d::Identity(), tr);
  const ImagePoint ip = c.project_lidar(Vec3(10, 1, 0.5));  // camera (-1, -0.5, 10)
  EXPECT_NEAR(ip.u, 600 - 70, 1e-12);
  EXPECT_NEAR(ip.v, 180 - 35, 1e-12);
  EXPECT_NEAR(ip.depth, 10, 1e-12);
  EXPECT_THROW(c.project_lidar(Vec3(-5, 0, 0)), BehindCameraError);
  EXPECT_THROW(Calibration(Calibration::Mat34::Zero(), Eigen::Matrix3d::Identity(), tr), NumericError);
}
