#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ptadet/boxes.hpp"
#include "ptadet/errors.hpp"
#include "test_util.hpp"

using namespace ptadet;
using ptadet::testing::monte_carlo_iou;
using ptadet::testing::nms_oracle;
using ptadet::testing::overlapping_pair;
using ptadet::testing::random_box;

namespace {

std::string fixture(const std::string& name) { return std::string(PTADET_FIXTURES) + "/" + name; }

template <typename T, typename F>
std::vector<T> read_fixture(const std::string& name, F reader) {
  std::ifstream in(fixture(name));
  EXPECT_TRUE(in) << name;
  return reader(in);
}

}  // namespace

TEST(Yaw, NormalizesIntoHalfOpenInterval) {
  EXPECT_DOUBLE_EQ(normalize_yaw(-std::numbers::pi), std::numbers::pi);
  EXPECT_NEAR(normalize_yaw(3 * std::numbers::pi / 2), -std::numbers::pi / 2, 1e-15);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double y = rng.uniform(-40, 40), n = normalize_yaw(y);
    EXPECT_GT(n, -std::numbers::pi);
    EXPECT_LE(n, std::numbers::pi);
    EXPECT_NEAR(std::sin(n), std::sin(y), 1e-12);
    EXPECT_NEAR(std::cos(n), std::cos(y), 1e-12);
  }
}

TEST(Box, ValidateAndContains) {
  EXPECT_THROW((Box3D{0, 0, 0, 0, 1, 1, 0}.validate()), ArgumentError);
  EXPECT_THROW((Box3D{0, 0, 0, 1, 1, NAN, 0}.validate()), ArgumentError);
  const Box3D b{1, 2, 0, 4, 2, 2, std::numbers::pi / 2};
  EXPECT_TRUE(b.contains(Vec3(1, 3.9, 0)));
  EXPECT_FALSE(b.contains(Vec3(2.1, 2, 0)));
  EXPECT_TRUE(b.contains(Vec3(2.1, 2, 0), 0.2));
  for (const Vec3& c : b.corners()) EXPECT_TRUE(b.contains(c, 1e-12));
}

TEST(Iou, Identities) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const Box3D a = random_box(rng);
    EXPECT_NEAR(iou_3d(a, a), 1.0, 1e-12);
    EXPECT_NEAR(iou_bev(a, a), 1.0, 1e-12);
    Box3D far = a;
    far.x += 20;
    EXPECT_EQ(iou_3d(a, far), 0.0);
    Box3D flipped = a;
    flipped.yaw += std::numbers::pi;
    EXPECT_NEAR(iou_3d(a, flipped), 1.0, 1e-9);
    const auto [p, q] = overlapping_pair(rng);
    EXPECT_NEAR(iou_3d(p, q), iou_3d(q, p), 1e-12);
  }
}

TEST(Iou, AxisAlignedClosedForm) {
  const Box3D a{0, 0, 0, 2, 2, 2, 0}, b{1, 0, 0, 2, 2, 2, 0};
  EXPECT_NEAR(iou_bev(a, b), 2.0 / 6.0, 1e-12);
  EXPECT_NEAR(iou_3d(a, b), 4.0 / 12.0, 1e-12);
  const Box3D c{1, 0, 1, 2, 2, 2, 0};
  EXPECT_NEAR(iou_3d(a, c), 2.0 / 14.0, 1e-12);
  // 45 degree square inside a square: octagon overlap
  const Box3D r{0, 0, 0, 2, 2, 2, std::numbers::pi / 4};
  const double oct = 8.0 * (std::sqrt(2.0) - 1.0);
  EXPECT_NEAR(iou_bev(a, r), oct / (8.0 - oct), 1e-12);
}

TEST(Iou, AgreesWithMonteCarlo) {
  Rng rng(3), mc(4);
  for (int i = 0; i < 8; ++i) {
    const auto [a, b] = overlapping_pair(rng);
    EXPECT_NEAR(iou_3d(a, b), monte_carlo_iou(a, b, 200000, mc), 0.01) << i;
    EXPECT_NEAR(iou_bev(a, b), monte_carlo_iou(a, b, 200000, mc, true), 0.01) << i;
  }
}

TEST(Nms, MatchesQuadraticOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<DetectionResult> dets(1 + rng.below(30));
    for (auto& d : dets) {
      d.box = random_box(rng, 3.0);
      d.score = static_cast<double>(rng.below(5)) / 5.0;  // many ties
    }
    const double thr = rng.uniform(0.05, 0.7);
    EXPECT_EQ(nms_indices(dets, thr), nms_oracle(dets, thr)) << trial;
    EXPECT_EQ(nms(dets, thr).size(), nms_oracle(dets, thr).size());
  }
}

TEST(Nms, ThresholdIsStrict) {
  const std::vector<DetectionResult> dets{{{0, 0, 0, 2, 2, 2, 0}, 0.9}, {{1, 0, 0, 2, 2, 2, 0}, 0.8}};
  const double iou = iou_bev(dets[0].box, dets[1].box);
  EXPECT_EQ(nms_indices(dets, iou).size(), 2u);
  EXPECT_EQ(nms_indices(dets, iou - 1e-9).size(), 1u);
}

TEST(Assignment, IouThresholds) {
  EXPECT_EQ(assign_by_iou(0.61).cls, ClsLabel::kPositive);
  EXPECT_EQ(assign_by_iou(0.6).cls, ClsLabel::kIgnore);
  EXPECT_EQ(assign_by_iou(0.45).cls, ClsLabel::kIgnore);
  EXPECT_EQ(assign_by_iou(0.44).cls, ClsLabel::kNegative);
  EXPECT_TRUE(assign_by_iou(0.56).reg_active);
  EXPECT_FALSE(assign_by_iou(0.55).reg_active);
  const std::vector<Box3D> gts{{0, 0, 0, 2, 2, 2, 0}, {10, 0, 0, 2, 2, 2, 0}};
  const std::vector<Box3D> props{{10, 0, 0, 2, 2, 2, 0}, {50, 0, 0, 1, 1, 1, 0}};
  const auto a = assign_proposals(props, gts);
  EXPECT_EQ(a[0].gt_index, 1);
  EXPECT_EQ(a[0].cls, ClsLabel::kPositive);
  EXPECT_EQ(a[1].cls, ClsLabel::kNegative);
}

TEST(Difficulty, KittiRules) {
  GroundTruth g;
  g.bbox_height_px = 40;
  EXPECT_TRUE(meets_difficulty(g, Difficulty::kEasy));
  g.bbox_height_px = 39.9;
  EXPECT_FALSE(meets_difficulty(g, Difficulty::kEasy));
  EXPECT_TRUE(meets_difficulty(g, Difficulty::kModerate));
  g.occlusion = 2;
  EXPECT_FALSE(meets_difficulty(g, Difficulty::kModerate));
  EXPECT_TRUE(meets_difficulty(g, Difficulty::kHard));
  g.truncation = 0.51;
  EXPECT_FALSE(meets_difficulty(g, Difficulty::kHard));
  EXPECT_EQ(default_iou_threshold(ObjectClass::kCar), 0.7);
  EXPECT_EQ(default_iou_threshold(ObjectClass::kCyclist), 0.5);
}

TEST(Ap40, FromMatchesWorkedExamples) {
  const std::vector<unsigned char> hmh{1, 0, 1};
  EXPECT_NEAR(ap40_from_matches(hmh, 2), 5.0 / 6.0, 1e-12);
  const std::vector<unsigned char> all{1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(ap40_from_matches(all, 4), 1.0);
  // half recall with perfect precision: positions 1..20 of 40
  EXPECT_DOUBLE_EQ(ap40_from_matches(all, 8), 0.5);
  EXPECT_DOUBLE_EQ(ap40_from_matches(std::vector<unsigned char>{}, 3), 0.0);
  EXPECT_TRUE(std::isnan(ap40_from_matches(all, 0)));
}

TEST(Ap40, GoldenFixtureMatchesCommittedOracle) {
  FrameEval f;
  f.dets = read_fixture<DetectionResult>("golden_dets.txt", [](std::istream& s) { return read_detections(s); });
  f.gts = read_fixture<GroundTruth>("golden_gt.txt", [](std::istream& s) { return read_ground_truth(s); });
  std::ifstream in(fixture("golden_expected.txt"));
  std::string cls;
  double expected = 0;
  ASSERT_TRUE(in >> cls >> expected);
  const std::vector<FrameEval> frames{f};
  const ApResult r = average_precision_40(frames, ObjectClass::kCar, 0.7);
  EXPECT_NEAR(r.ap, expected, 1e-9);
  EXPECT_EQ(r.num_tp, 2u);
  EXPECT_EQ(r.num_fp, 1u);
  for (Difficulty d : {Difficulty::kEasy, Difficulty::kModerate, Difficulty::kHard})
    EXPECT_NEAR(average_precision_40(frames, ObjectClass::kCar, 0.7, d).ap, expected, 1e-9);
}

TEST(Ap40, PerfectEmptyAndUndefined) {
  FrameEval f;
  f.gts = {{{10, 0, 0, 4, 2, 1.5, 0.3}, ObjectClass::kCar}, {{5, 5, 0, 1, 1, 1.7, 0}, ObjectClass::kPedestrian}};
  for (const auto& g : f.gts) f.dets.push_back({g.box, 0.9, g.cls});
  std::vector<FrameEval> frames{f};
  EXPECT_DOUBLE_EQ(average_precision_40(frames, ObjectClass::kCar, 0.7).ap, 1.0);
  EXPECT_DOUBLE_EQ(average_precision_40(frames, ObjectClass::kPedestrian, 0.5, std::nullopt, IouKind::kBev).ap, 1.0);
  const ApResult cyc = average_precision_40(frames, ObjectClass::kCyclist, 0.5);
  EXPECT_FALSE(cyc.defined);
  frames[0].dets.clear();
  const ApResult empty = average_precision_40(frames, ObjectClass::kCar, 0.7);
  EXPECT_TRUE(empty.defined);
  EXPECT_EQ(empty.ap, 0.0);
}

TEST(Ap40, IgnoredGroundTruthNeitherHelpsNorHurts) {
  FrameEval f;
  GroundTruth hard{{10, 0, 0, 4, 2, 1.5, 0}, ObjectClass::kCar, 20.0};
  GroundTruth easy{{20, 0, 0, 4, 2, 1.5, 0}, ObjectClass::kCar, 80.0};
  f.gts = {hard, easy};
  f.dets = {{hard.box, 0.95, ObjectClass::kCar}, {easy.box, 0.9, ObjectClass::kCar}};
  const std::vector<FrameEval> frames{f};
  const ApResult r = average_precision_40(frames, ObjectClass::kCar, 0.7, Difficulty::kEasy);
  EXPECT_EQ(r.num_gt, 1u);
  EXPECT_EQ(r.num_fp, 0u);
  EXPECT_DOUBLE_EQ(r.ap, 1.0);
}

TEST(DetectionFiles, RoundTripAndErrors) {
  Rng rng(6);
  std::vector<DetectionResult> dets;
  std::vector<GroundTruth> gts;
  for (int i = 0; i < 20; ++i) {
    dets.push_back({random_box(rng), rng.uniform(), static_cast<ObjectClass>(rng.below(3))});
    gts.push_back({random_box(rng), static_cast<ObjectClass>(rng.below(3)), rng.uniform(10, 100),
                   static_cast<int>(rng.below(4)), rng.uniform()});
  }
  std::stringstream ds, gs;
  write_detections(ds, dets);
  write_ground_truth(gs, gts);
  const auto dets2 = read_detections(ds);
  const auto gts2 = read_ground_truth(gs);
  ASSERT_EQ(dets2.size(), dets.size());
  ASSERT_EQ(gts2.size(), gts.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    EXPECT_EQ(dets2[i].score, dets[i].score);
    EXPECT_EQ(dets2[i].box.yaw, dets[i].box.yaw);
    EXPECT_EQ(dets2[i].cls, dets[i].cls);
    EXPECT_EQ(gts2[i].box.x, gts[i].box.x);
    EXPECT_EQ(gts2[i].truncation, gts[i].truncation);
    EXPECT_EQ(gts2[i].occlusion, gts[i].occlusion);
  }
  std::istringstream bad_class("Truck 0.5 0 0 0 1 1 1 0\n");
  EXPECT_THROW(read_detections(bad_class), ParseError);
  std::istringstream short_row("# header\nCar 0.5 0 0 0 1 1 1\n");
  EXPECT_THROW(read_detections(short_row), ParseError);
  std::istringstream extra("Car 0.5 0 0 0 1 1 1 0 7\n");
  EXPECT_THROW(read_detections(extra), ParseError);
}
