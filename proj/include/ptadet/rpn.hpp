#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "ptadet/boxes.hpp"
#include "ptadet/geometry.hpp"
#include "ptadet/nn.hpp"

namespace ptadet {

/// Class-mean anchor sizes (l, w, h) in meters.
struct AnchorSizes {
  std::array<std::array<double, 3>, kNumClasses> lwh{{{3.9, 1.6, 1.56}, {0.8, 0.6, 1.73}, {1.76, 0.6, 1.73}}};

  const std::array<double, 3>& of(ObjectClass c) const { return lwh[static_cast<std::size_t>(c)]; }
  double diagonal(ObjectClass c) const;
};

inline constexpr std::size_t kResidualChannels = 8;  // x y z l w h sinθ cosθ

struct RpnHead {
  std::size_t num_classes = kNumClasses;
  LbrLayer vote_hidden;
  Linear vote_out;  // -> 3
  LbrLayer cls_hidden;
  Linear cls_out;  // -> K, bias starts at the 0.01 prior
  LbrLayer reg_hidden;
  Linear reg_out;  // -> 8

  static RpnHead init(std::size_t c_in, std::size_t hidden, std::size_t num_classes, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct RpnOutput {
  Tensor vote_offsets;  // [N × 3]
  Tensor scores;        // [N × K] sigmoid
  Tensor residuals;     // [N × 8]
  std::vector<Vec3> coords;
  std::vector<Vec3> votes;  // coords + offsets, off the tape
};

RpnOutput rpn_forward(const Tensor& features, std::span<const Vec3> coords, const RpnHead& head);

struct ProposalSet {
  std::vector<DetectionResult> proposals;  // one per point whose best class score exceeds the threshold
  std::vector<std::size_t> point_index;
  std::vector<Vec3> votes;  // all N vote positions
};

/// Residuals are relative to the vote position and the anchor of the point's best class.
Box3D decode_box(const Vec3& vote, std::span<const double> residual, const std::array<double, 3>& anchor_lwh);
std::array<double, kResidualChannels> encode_box(const Vec3& vote, const Box3D& box,
                                                 const std::array<double, 3>& anchor_lwh);

ProposalSet decode_proposals(const RpnOutput& out, const AnchorSizes& anchors, double score_threshold);

/// Per-point supervision from ground-truth boxes: a point belongs to the first box containing it.
struct RpnTargets {
  std::size_t num_points = 0;
  std::size_t num_classes = kNumClasses;
  std::vector<unsigned char> cls_fg;  // [N × K] one-hot of the owning box class
  std::vector<std::ptrdiff_t> point_gt;
  std::vector<std::size_t> fg_points;
  Tensor reg_targets;   // [n_fg × 8]
  Tensor vote_targets;  // [n_fg × 3], gt center − point
};

RpnTargets build_rpn_targets(const RpnOutput& out, std::span<const Box3D> gt_boxes,
                             std::span<const ObjectClass> gt_classes, const AnchorSizes& anchors,
                             double margin = 0.0);

}  // namespace ptadet
