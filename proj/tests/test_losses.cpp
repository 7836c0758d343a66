#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ptadet/errors.hpp"
#include "ptadet/kitti.hpp"
#include "ptadet/losses.hpp"
#include "ptadet/rpn.hpp"
#include "test_util.hpp"

using namespace ptadet;

TEST(Focal, MatchesFormulaAndReducesToCrossEntropy) {
  EXPECT_NEAR(focal_loss(0.7, true, 0.25, 2.0).loss, -0.25 * 0.09 * std::log(0.7), 1e-15);
  EXPECT_NEAR(focal_loss(0.7, false, 0.25, 2.0).loss, -0.75 * 0.49 * std::log(0.3), 1e-15);
  EXPECT_NEAR(focal_loss(0.7, true, 1.0, 0.0).loss, -std::log(0.7), 1e-15);
  const FocalValue z = focal_loss(0.0, true, 0.25, 2.0);
  EXPECT_TRUE(z.clamped);
  EXPECT_TRUE(std::isfinite(z.loss));
  EXPECT_FALSE(focal_loss(0.5, true, 0.25, 2.0).clamped);
}

TEST(Focal, EasyExamplesAreDownWeighted) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double p = rng.uniform(0.01, 0.99);
    const double ce = -std::log(p);
    EXPECT_LE(focal_loss(p, true, 1.0, 2.0).loss, ce + 1e-15);
    EXPECT_LE(focal_loss(std::min(0.99, p + 0.005), true, 1.0, 2.0).loss, focal_loss(p, true, 1.0, 2.0).loss);
  }
}

TEST(SmoothL1, PiecewiseDefinition) {
  EXPECT_DOUBLE_EQ(smooth_l1(0.0), 0.0);
  EXPECT_DOUBLE_EQ(smooth_l1(0.5), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(-1.0), 0.5);
  EXPECT_DOUBLE_EQ(smooth_l1(-3.0), 2.5);
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const double x = rng.uniform(-5, 5);
    EXPECT_DOUBLE_EQ(smooth_l1(x), smooth_l1(-x));
  }
}

TEST(LossWeights, RcnnMustBeZero) {
  LossWeights w;
  EXPECT_NO_THROW(w.validate());
  w.rcnn = 0.5;
  EXPECT_THROW(w.validate(), ConfigError);
  w.rcnn = 0.0;
  w.lambda1 = -1;
  EXPECT_THROW(w.validate(), ConfigError);
}

TEST(DepthTargets, ProjectVisiblePointsAndEncodeDepth) {
  const Calibration calib = synthetic_calibration(SyntheticSceneSpec{});
  const LidBinning b;
  const std::vector<Vec3> pts{Vec3(10, 0, 0), Vec3(-10, 0, 0), Vec3(10, 40, 0), Vec3(25, 2, -1)};
  const DepthTargets t = make_depth_targets(pts, calib, b, 64, 192);
  ASSERT_EQ(t.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    const Vec3& p = pts[i == 0 ? 0 : 3];
    const ImagePoint ip = calib.project_lidar(p);
    EXPECT_DOUBLE_EQ(t.pixels[i][0], ip.u);
    EXPECT_EQ(t.gt_bin[i], b.encode(ip.depth).bin);
    EXPECT_DOUBLE_EQ(t.gt_res[i], b.encode(ip.depth).residual);
  }
}

TEST(DepthLoss, MatchesHandComputedOracle) {
  // 2x2 feature grid at stride 2, 3 bins
  const std::vector<double> logits{0.1, 0.5, -0.2, 1.0, 0.0, 0.3, -0.4, 0.2, 0.9, 0.0, 0.0, 0.0};
  const std::vector<double> res{0.2, 0.4, 0.6, 0.1, 0.3, 0.5, 0.7, 0.9, 0.8, 0.5, 0.5, 0.5};
  const DepthPrediction dp{Tensor::from({4, 3}, logits), Tensor::from({4, 3}, res), 2, 2};
  DepthTargets t;
  t.pixels = {{0.2, 0.4}, {3.0, 1.0}, {1.7, 2.6}};  // cells 0, 1, 3 (nearest after the half-pixel shift)
  t.gt_bin = {1, 0, 2};
  t.gt_res = {0.5, 0.35, 0.9};
  LossWeights w;
  w.lambda1 = 10.0;
  w.foreground_depth = 2.0;
  const DepthLoss l = depth_loss(dp, t, 2, w);

  const std::size_t cells[3] = {0, 1, 3};
  double bin = 0, r = 0;
  for (int i = 0; i < 3; ++i) {
    const double* row = &logits[cells[i] * 3];
    double z = 0;
    for (int k = 0; k < 3; ++k) z += std::exp(row[k]);
    const double p = std::exp(row[t.gt_bin[i]]) / z;
    bin += -0.25 * std::pow(1 - p, 2.0) * std::log(p) / 3.0;
    r += smooth_l1(res[cells[i] * 3 + t.gt_bin[i]] - t.gt_res[i]) / 3.0;
  }
  EXPECT_NEAR(l.bin.item(), bin, 1e-14);
  EXPECT_NEAR(l.res.item(), r, 1e-14);
  EXPECT_NEAR(l.total.item(), 2.0 * (bin + 10.0 * r), 1e-13);
  DepthTargets bad = t;
  bad.gt_bin[0] = 3;
  EXPECT_THROW(depth_loss(dp, bad, 2, w), ArgumentError);
}

TEST(BoxCoding, EncodeDecodeRoundTrip) {
  Rng rng(3);
  const AnchorSizes anchors;
  for (int i = 0; i < 200; ++i) {
    Box3D b = ptadet::testing::random_box(rng, 20.0);
    b.yaw = normalize_yaw(b.yaw);
    const Vec3 vote(rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-2, 2));
    const auto cls = static_cast<ObjectClass>(rng.below(3));
    const auto r = encode_box(vote, b, anchors.of(cls));
    const Box3D d = decode_box(vote, r, anchors.of(cls));
    EXPECT_NEAR(d.x, b.x, 1e-12);
    EXPECT_NEAR(d.y, b.y, 1e-12);
    EXPECT_NEAR(d.z, b.z, 1e-12);
    EXPECT_NEAR(d.l, b.l, 1e-12);
    EXPECT_NEAR(d.w, b.w, 1e-12);
    EXPECT_NEAR(d.h, b.h, 1e-12);
    EXPECT_NEAR(std::remainder(d.yaw - b.yaw, 2 * std::numbers::pi), 0.0, 1e-12);
  }
}

TEST(BoxCoding, DecodeClampsSizeExponent) {
  const std::array<double, 8> r{0, 0, 0, 50, -50, 0, 0, 1};
  const Box3D b = decode_box(Vec3::Zero(), r, {2.0, 1.0, 1.0});
  EXPECT_NEAR(b.l, 2.0 * std::exp(10.0), 1e-6);
  EXPECT_NEAR(b.w, std::exp(-10.0), 1e-18);
  EXPECT_DOUBLE_EQ(b.yaw, 0.0);
}

namespace {

RpnOutput fake_output(std::vector<Vec3> coords, std::vector<double> offsets, std::vector<double> scores,
                      std::vector<double> residuals) {
  RpnOutput o;
  const std::size_t n = coords.size();
  o.vote_offsets = Tensor::from({n, 3}, std::move(offsets), true);
  o.scores = Tensor::from({n, kNumClasses}, std::move(scores), true);
  o.residuals = Tensor::from({n, kResidualChannels}, std::move(residuals), true);
  auto off = o.vote_offsets.data();
  for (std::size_t i = 0; i < n; ++i) o.votes.push_back(coords[i] + Vec3(off[i * 3], off[i * 3 + 1], off[i * 3 + 2]));
  o.coords = std::move(coords);
  return o;
}

}  // namespace

TEST(RpnTargets, PointInBoxFirstBoxWins) {
  const std::vector<Box3D> boxes{{0, 0, 0, 4, 2, 2, 0}, {1, 0, 0, 4, 2, 2, 0}};
  const std::vector<ObjectClass> cls{ObjectClass::kCar, ObjectClass::kCyclist};
  const std::vector<Vec3> pts{Vec3(0.5, 0, 0), Vec3(2.8, 0, 0), Vec3(10, 0, 0)};
  const RpnOutput o = fake_output(pts, std::vector<double>(9, 0.1), std::vector<double>(9, 0.5),
                                  std::vector<double>(24, 0.0));
  const AnchorSizes anchors;
  const RpnTargets t = build_rpn_targets(o, boxes, cls, anchors);
  EXPECT_EQ(t.point_gt, (std::vector<std::ptrdiff_t>{0, 1, -1}));
  EXPECT_EQ(t.fg_points, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(t.cls_fg, (std::vector<unsigned char>{1, 0, 0, 0, 0, 1, 0, 0, 0}));
  EXPECT_NEAR(t.vote_targets[0], -0.5, 1e-15);
  EXPECT_NEAR(t.vote_targets[3], 1.0 - 2.8, 1e-15);
  const auto r1 = encode_box(o.votes[1], boxes[1], anchors.of(ObjectClass::kCyclist));
  for (std::size_t k = 0; k < 8; ++k) EXPECT_DOUBLE_EQ(t.reg_targets[8 + k], r1[k]);
}

TEST(RpnLoss, MatchesHandComputedOracle) {
  const std::vector<Box3D> boxes{{0, 0, 0, 4, 2, 2, 0.3}};
  const std::vector<ObjectClass> cls{ObjectClass::kCar};
  const std::vector<Vec3> pts{Vec3(0.5, 0.2, 0), Vec3(8, 0, 0)};
  const std::vector<double> scores{0.6, 0.2, 0.1, 0.3, 0.05, 0.4};
  std::vector<double> residuals(16);
  for (std::size_t i = 0; i < 16; ++i) residuals[i] = 0.1 * static_cast<double>(i) - 0.4;
  const RpnOutput o = fake_output(pts, {0.2, -0.1, 0.0, 1, 1, 1}, scores, residuals);
  const AnchorSizes anchors;
  const RpnTargets t = build_rpn_targets(o, boxes, cls, anchors);
  LossWeights w;
  w.lambda2 = 2.0;
  w.vote = 0.5;
  const RpnLoss l = rpn_loss(o, t, w);

  double c = 0;
  for (std::size_t i = 0; i < 6; ++i) c += focal_loss(scores[i], i == 0, 0.25, 2.0).loss / 2.0;
  const auto enc = encode_box(o.votes[0], boxes[0], anchors.of(ObjectClass::kCar));
  double reg = 0;
  for (std::size_t k = 0; k < 8; ++k) reg += smooth_l1(residuals[k] - enc[k]);
  const double vote = smooth_l1(0.2 - (-0.5)) + smooth_l1(-0.1 - (-0.2)) + smooth_l1(0.0);
  EXPECT_NEAR(l.cls.item(), c, 1e-14);
  EXPECT_NEAR(l.reg.item(), reg, 1e-14);
  EXPECT_NEAR(l.vote.item(), vote, 1e-14);
  EXPECT_NEAR(l.total.item(), c + 2.0 * reg + 0.5 * vote, 1e-13);
  EXPECT_FALSE(l.no_foreground);
}

TEST(RpnLoss, NoForegroundLeavesOnlyClassification) {
  const RpnOutput o = fake_output({Vec3(50, 0, 0)}, {0, 0, 0}, {0.2, 0.1, 0.3}, std::vector<double>(8, 0.0));
  const RpnTargets t = build_rpn_targets(o, std::vector<Box3D>{{0, 0, 0, 1, 1, 1, 0}},
                                         std::vector<ObjectClass>{ObjectClass::kCar}, AnchorSizes{});
  const RpnLoss l = rpn_loss(o, t, LossWeights{});
  EXPECT_TRUE(l.no_foreground);
  EXPECT_DOUBLE_EQ(l.reg.item(), 0.0);
  EXPECT_DOUBLE_EQ(l.total.item(), l.cls.item());
}

TEST(Rpn, HeadShapesVotesAndPrior) {
  Rng rng(4);
  const RpnHead head = RpnHead::init(6, 8, kNumClasses, rng);
  for (double b : head.cls_out.bias.data()) EXPECT_NEAR(1.0 / (1.0 + std::exp(-b)), 0.01, 1e-15);
  const auto coords = ptadet::testing::random_points(10, rng);
  const RpnOutput o = rpn_forward(Tensor::uniform({10, 6}, 1.0, rng), coords, head);
  EXPECT_EQ(o.scores.shape(), (Shape{10, 3}));
  EXPECT_EQ(o.residuals.shape(), (Shape{10, 8}));
  for (std::size_t i = 0; i < 10; ++i)
    for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(o.votes[i][k], coords[i][k] + o.vote_offsets[i * 3 + k]);
  EXPECT_THROW(rpn_forward(Tensor::uniform({9, 6}, 1.0, rng), coords, head), DimensionError);
}

TEST(Rpn, DecodeProposalsThresholdsBestClass) {
  const RpnOutput o = fake_output({Vec3(0, 0, 0), Vec3(5, 0, 0)}, std::vector<double>(6, 0.0),
                                  {0.2, 0.9, 0.1, 0.3, 0.25, 0.1}, std::vector<double>(16, 0.0));
  const ProposalSet ps = decode_proposals(o, AnchorSizes{}, 0.5);
  ASSERT_EQ(ps.proposals.size(), 1u);
  EXPECT_EQ(ps.point_index[0], 0u);
  EXPECT_EQ(ps.proposals[0].cls, ObjectClass::kPedestrian);
  EXPECT_DOUBLE_EQ(ps.proposals[0].box.l, 0.8);
  EXPECT_DOUBLE_EQ(ps.proposals[0].score, 0.9);
}

TEST(TotalLoss, WeightedSum) {
  LossWeights w;
  w.depth = 0.5;
  w.rpn = 2.0;
  EXPECT_DOUBLE_EQ(total_loss(Tensor::scalar(4.0), Tensor::scalar(1.5), w).item(), 5.0);
  w.rcnn = 1.0;
  EXPECT_THROW(total_loss(Tensor::scalar(4.0), Tensor::scalar(1.5), w), ConfigError);
}
