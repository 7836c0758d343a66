#include "ptadet/rpn.hpp"

#include <algorithm>
#include <cmath>

#include "ptadet/errors.hpp"

namespace ptadet {

double AnchorSizes::diagonal(ObjectClass c) const {
  const auto& a = of(c);
  return std::hypot(a[0], a[1]);
}

RpnHead RpnHead::init(std::size_t c_in, std::size_t hidden, std::size_t num_classes, Rng& rng) {
  RpnHead h;
  h.num_classes = num_classes;
  h.vote_hidden = LbrLayer::init(c_in, hidden, rng);
  h.vote_out = Linear::init(hidden, 3, rng);
  h.cls_hidden = LbrLayer::init(c_in + 3, hidden, rng);
  h.cls_out = Linear::init(hidden, num_classes, rng);
  std::ranges::fill(h.cls_out.bias.mutable_data(), -std::log(99.0));
  h.reg_hidden = LbrLayer::init(c_in + 3, hidden, rng);
  h.reg_out = Linear::init(hidden, kResidualChannels, rng);
  return h;
}

void RpnHead::collect(const std::string& prefix, ParamList& out) const {
  vote_hidden.collect(prefix + ".vote_hidden", out);
  vote_out.collect(prefix + ".vote_out", out);
  cls_hidden.collect(prefix + ".cls_hidden", out);
  cls_out.collect(prefix + ".cls_out", out);
  reg_hidden.collect(prefix + ".reg_hidden", out);
  reg_out.collect(prefix + ".reg_out", out);
}

RpnOutput rpn_forward(const Tensor& features, std::span<const Vec3> coords, const RpnHead& head) {
  if (features.rank() != 2 || features.dim(0) != coords.size())
    throw DimensionError("rpn: features must be [N × C] with N = " + std::to_string(coords.size()));
  RpnOutput out;
  out.vote_offsets = linear(lbr(features, head.vote_hidden), head.vote_out);
  const Tensor x = concat_cols({features, out.vote_offsets});
  out.scores = sigmoid(linear(lbr(x, head.cls_hidden), head.cls_out));
  out.residuals = linear(lbr(x, head.reg_hidden), head.reg_out);
  out.coords.assign(coords.begin(), coords.end());
  auto off = out.vote_offsets.data();
  out.votes.reserve(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i)
    out.votes.push_back(coords[i] + Vec3(off[i * 3], off[i * 3 + 1], off[i * 3 + 2]));
  return out;
}

Box3D decode_box(const Vec3& vote, std::span<const double> r, const std::array<double, 3>& a) {
  if (r.size() != kResidualChannels) throw DimensionError("decode_box: expected 8 residuals");
  const double diag = std::hypot(a[0], a[1]);
  constexpr double kMaxLogRatio = 10.0;
  auto size = [&](double base, double log_ratio) { return base * std::exp(std::clamp(log_ratio, -kMaxLogRatio, kMaxLogRatio)); };
  Box3D b;
  b.x = vote.x() + r[0] * diag;
  b.y = vote.y() + r[1] * diag;
  b.z = vote.z() + r[2] * diag;
  b.l = size(a[0], r[3]);
  b.w = size(a[1], r[4]);
  b.h = size(a[2], r[5]);
  b.yaw = normalize_yaw(std::atan2(r[6], r[7]));
  return b;
}

std::array<double, kResidualChannels> encode_box(const Vec3& vote, const Box3D& b, const std::array<double, 3>& a) {
  b.validate();
  const double diag = std::hypot(a[0], a[1]);
  return {(b.x - vote.x()) / diag, (b.y - vote.y()) / diag, (b.z - vote.z()) / diag,
          std::log(b.l / a[0]),    std::log(b.w / a[1]),    std::log(b.h / a[2]),
          std::sin(b.yaw),         std::cos(b.yaw)};
}

ProposalSet decode_proposals(const RpnOutput& out, const AnchorSizes& anchors, double score_threshold) {
  const std::size_t n = out.coords.size(), k = out.scores.dim(1);
  auto scores = out.scores.data();
  auto res = out.residuals.data();
  ProposalSet ps;
  ps.votes = out.votes;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &scores[i * k];
    const auto best = static_cast<std::size_t>(std::max_element(row, row + k) - row);
    if (!(row[best] > score_threshold)) continue;
    const auto cls = static_cast<ObjectClass>(best);
    DetectionResult d;
    d.cls = cls;
    d.score = row[best];
    d.box = decode_box(out.votes[i], res.subspan(i * kResidualChannels, kResidualChannels), anchors.of(cls));
    ps.proposals.push_back(d);
    ps.point_index.push_back(i);
  }
  return ps;
}

RpnTargets build_rpn_targets(const RpnOutput& out, std::span<const Box3D> gt_boxes,
                             std::span<const ObjectClass> gt_classes, const AnchorSizes& anchors, double margin) {
  if (gt_boxes.size() != gt_classes.size()) throw ArgumentError("rpn targets: boxes and classes differ in length");
  const std::size_t n = out.coords.size(), k = out.scores.defined() ? out.scores.dim(1) : kNumClasses;
  RpnTargets t;
  t.num_points = n;
  t.num_classes = k;
  t.cls_fg.assign(n * k, 0);
  t.point_gt.assign(n, -1);
  std::vector<double> reg, vote;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      if (!gt_boxes[g].contains(out.coords[i], margin)) continue;
      const auto c = static_cast<std::size_t>(gt_classes[g]);
      if (c >= k) throw ArgumentError("rpn targets: class index exceeds head width");
      t.point_gt[i] = static_cast<std::ptrdiff_t>(g);
      t.cls_fg[i * k + c] = 1;
      t.fg_points.push_back(i);
      const auto r = encode_box(out.votes[i], gt_boxes[g], anchors.of(gt_classes[g]));
      reg.insert(reg.end(), r.begin(), r.end());
      const Vec3 d = gt_boxes[g].center() - out.coords[i];
      vote.insert(vote.end(), {d.x(), d.y(), d.z()});
      break;
    }
  }
  const std::size_t nf = t.fg_points.size();
  if (nf > 0) {
    t.reg_targets = Tensor::from({nf, kResidualChannels}, std::move(reg));
    t.vote_targets = Tensor::from({nf, 3}, std::move(vote));
  }
  return t;
}

}  // namespace ptadet
