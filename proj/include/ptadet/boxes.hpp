#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ptadet/geometry.hpp"

namespace ptadet {

enum class ObjectClass { kCar = 0, kPedestrian = 1, kCyclist = 2 };
inline constexpr std::size_t kNumClasses = 3;

std::string_view class_name(ObjectClass cls);
std::optional<ObjectClass> parse_class(std::string_view name);

/// Maps any angle to (-π, π].
double normalize_yaw(double yaw);

/// 7-DoF box in the LiDAR frame. (x, y, z) is the geometric center, l runs
/// along the heading, yaw is measured about +Z from +X.
struct Box3D {
  double x = 0, y = 0, z = 0;
  double l = 1, w = 1, h = 1;
  double yaw = 0;

  Vec3 center() const { return {x, y, z}; }
  /// Throws ArgumentError on non-positive or non-finite extents.
  void validate() const;
  /// Counter-clockwise BEV corners.
  std::array<Eigen::Vector2d, 4> bev_corners() const;
  std::array<Vec3, 8> corners() const;
  bool contains(const Vec3& p, double margin = 0.0) const;
  double volume() const { return l * w * h; }
};

struct DetectionResult {
  Box3D box;
  double score = 0.0;
  ObjectClass cls = ObjectClass::kCar;
};

/// Area of the intersection of two convex polygons (CCW vertex order).
double convex_intersection_area(std::span<const Eigen::Vector2d> a, std::span<const Eigen::Vector2d> b);

double iou_bev(const Box3D& a, const Box3D& b);
double iou_3d(const Box3D& a, const Box3D& b);

/// Greedy NMS in BEV: descending score, earlier index on ties; a box is
/// dropped when its IoU with a kept box exceeds the threshold. Returns kept indices.
std::vector<std::size_t> nms_indices(std::span<const DetectionResult> dets, double iou_threshold);
std::vector<DetectionResult> nms(std::span<const DetectionResult> dets, double iou_threshold);

// ---- training-time proposal labels -----------------------------------------

enum class ClsLabel { kPositive, kNegative, kIgnore };

struct Assignment {
  ClsLabel cls = ClsLabel::kNegative;
  bool reg_active = false;
  double best_iou = 0.0;
  std::ptrdiff_t gt_index = -1;
};

inline constexpr double kClsPositiveIou = 0.6;
inline constexpr double kClsNegativeIou = 0.45;
inline constexpr double kRegActiveIou = 0.55;

Assignment assign_by_iou(double iou);
/// Labels each proposal by its best 3D IoU over the ground-truth boxes.
std::vector<Assignment> assign_proposals(std::span<const Box3D> proposals, std::span<const Box3D> gts);

// ---- evaluation -------------------------------------------------------------

enum class Difficulty { kEasy = 0, kModerate = 1, kHard = 2 };
std::string_view difficulty_name(Difficulty d);

struct GroundTruth {
  Box3D box;
  ObjectClass cls = ObjectClass::kCar;
  double bbox_height_px = 100.0;  // 2D box height in the image
  int occlusion = 0;              // 0 visible .. 3 unknown
  double truncation = 0.0;
};

/// KITTI difficulty rules: min 2D height 40/25/25 px, max occlusion 0/1/2, max truncation 0.15/0.3/0.5.
bool meets_difficulty(const GroundTruth& gt, Difficulty d);

enum class IouKind { kBev, k3d };

struct FrameEval {
  std::vector<DetectionResult> dets;
  std::vector<GroundTruth> gts;
};

struct ApResult {
  double ap = 0.0;
  bool defined = true;  // false when there is no ground truth to recall
  std::size_t num_gt = 0;
  std::size_t num_tp = 0;
  std::size_t num_fp = 0;
};

inline constexpr std::size_t kRecallPositions = 40;

/// Class IoU thresholds: 0.7 for cars, 0.5 for pedestrians and cyclists.
double default_iou_threshold(ObjectClass cls);

/// AP sampled at recall 1/40 .. 40/40 with max-to-the-right interpolated precision.
/// Ground truths of `cls` that fail `difficulty` are ignored (as are detections matched to them).
ApResult average_precision_40(std::span<const FrameEval> frames, ObjectClass cls, double iou_threshold,
                              std::optional<Difficulty> difficulty = std::nullopt, IouKind kind = IouKind::k3d);

/// AP-40 from an already matched, score-sorted list of TP flags.
double ap40_from_matches(std::span<const unsigned char> is_tp, std::size_t num_gt);

// ---- detection dump ---------------------------------------------------------

/// One detection per line: `class score x y z l w h yaw` (LiDAR frame, meters/radians).
void write_detections(std::ostream& os, std::span<const DetectionResult> dets);
std::vector<DetectionResult> read_detections(std::istream& is);

/// Ground-truth dump: `class x y z l w h yaw bbox_height_px occlusion truncation`.
void write_ground_truth(std::ostream& os, std::span<const GroundTruth> gts);
std::vector<GroundTruth> read_ground_truth(std::istream& is);

}  // namespace ptadet
