#include "ptadet/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ptadet/errors.hpp"

namespace ptadet {

std::string_view class_name(ObjectClass cls) {
  switch (cls) {
    case ObjectClass::kCar: return "Car";
    case ObjectClass::kPedestrian: return "Pedestrian";
    case ObjectClass::kCyclist: return "Cyclist";
  }
  return "?";
}

std::optional<ObjectClass> parse_class(std::string_view name) {
  if (name == "Car") return ObjectClass::kCar;
  if (name == "Pedestrian") return ObjectClass::kPedestrian;
  if (name == "Cyclist") return ObjectClass::kCyclist;
  return std::nullopt;
}

double normalize_yaw(double yaw) {
  constexpr double pi = std::numbers::pi;
  double r = std::remainder(yaw, 2.0 * pi);  // [-π, π]
  if (r <= -pi) r += 2.0 * pi;
  return r;
}

void Box3D::validate() const {
  for (double v : {x, y, z, l, w, h, yaw})
    if (!std::isfinite(v)) throw ArgumentError("box has non-finite fields");
  if (!(l > 0.0) || !(w > 0.0) || !(h > 0.0))
    throw ArgumentError("degenerate box: l=" + std::to_string(l) + " w=" + std::to_string(w) +
                        " h=" + std::to_string(h));
}

std::array<Eigen::Vector2d, 4> Box3D::bev_corners() const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const Eigen::Vector2d ax(c * l / 2, s * l / 2), ay(-s * w / 2, c * w / 2), ctr(x, y);
  return {ctr + ax + ay, ctr - ax + ay, ctr - ax - ay, ctr + ax - ay};
}

std::array<Vec3, 8> Box3D::corners() const {
  const auto bev = bev_corners();
  std::array<Vec3, 8> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = Vec3(bev[i].x(), bev[i].y(), z - h / 2);
    out[i + 4] = Vec3(bev[i].x(), bev[i].y(), z + h / 2);
  }
  return out;
}

bool Box3D::contains(const Vec3& p, double margin) const {
  const double dx = p.x() - x, dy = p.y() - y;
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
  return std::abs(lx) <= l / 2 + margin && std::abs(ly) <= w / 2 + margin && std::abs(p.z() - z) <= h / 2 + margin;
}

namespace {

double polygon_area(const std::vector<Eigen::Vector2d>& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * std::abs(a);
}

double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

}  // namespace

double convex_intersection_area(std::span<const Eigen::Vector2d> a, std::span<const Eigen::Vector2d> b) {
  std::vector<Eigen::Vector2d> out(a.begin(), a.end());
  for (std::size_t e = 0; e < b.size() && !out.empty(); ++e) {
    const Eigen::Vector2d& c0 = b[e];
    const Eigen::Vector2d& c1 = b[(e + 1) % b.size()];
    std::vector<Eigen::Vector2d> in;
    in.swap(out);
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Eigen::Vector2d& cur = in[i];
      const Eigen::Vector2d& prev = in[(i + in.size() - 1) % in.size()];
      const double dc = cross(c0, c1, cur), dp = cross(c0, c1, prev);
      if (dc >= 0) {
        if (dp < 0) out.push_back(prev + (cur - prev) * (dp / (dp - dc)));
        out.push_back(cur);
      } else if (dp >= 0) {
        out.push_back(prev + (cur - prev) * (dp / (dp - dc)));
      }
    }
  }
  return out.size() < 3 ? 0.0 : polygon_area(out);
}

namespace {

double bev_intersection(const Box3D& a, const Box3D& b) {
  a.validate();
  b.validate();
  const double ra = std::hypot(a.l, a.w) / 2, rb = std::hypot(b.l, b.w) / 2;
  if (std::hypot(a.x - b.x, a.y - b.y) > ra + rb) return 0.0;
  const auto ca = a.bev_corners(), cb = b.bev_corners();
  return convex_intersection_area(ca, cb);
}

}  // namespace

double iou_bev(const Box3D& a, const Box3D& b) {
  const double inter = bev_intersection(a, b);
  const double uni = a.l * a.w + b.l * b.w - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const double inter_bev = bev_intersection(a, b);
  const double top = std::min(a.z + a.h / 2, b.z + b.h / 2), bottom = std::max(a.z - a.h / 2, b.z - b.h / 2);
  const double inter = inter_bev * std::max(0.0, top - bottom);
  return std::clamp(inter / (a.volume() + b.volume() - inter), 0.0, 1.0);
}

std::vector<std::size_t> nms_indices(std::span<const DetectionResult> dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return dets[i].score > dets[j].score; });
  std::vector<unsigned char> suppressed(dets.size(), 0);
  std::vector<std::size_t> kept;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!suppressed[j] && iou_bev(dets[i].box, dets[j].box) > iou_threshold) suppressed[j] = 1;
    }
  }
  return kept;
}

std::vector<DetectionResult> nms(std::span<const DetectionResult> dets, double iou_threshold) {
  std::vector<DetectionResult> out;
  for (std::size_t i : nms_indices(dets, iou_threshold)) out.push_back(dets[i]);
  return out;
}

Assignment assign_by_iou(double iou) {
  Assignment a;
  a.best_iou = iou;
  if (iou > kClsPositiveIou)
    a.cls = ClsLabel::kPositive;
  else if (iou < kClsNegativeIou)
    a.cls = ClsLabel::kNegative;
  else
    a.cls = ClsLabel::kIgnore;
  a.reg_active = iou > kRegActiveIou;
  return a;
}

std::vector<Assignment> assign_proposals(std::span<const Box3D> proposals, std::span<const Box3D> gts) {
  std::vector<Assignment> out;
  out.reserve(proposals.size());
  for (const Box3D& p : proposals) {
    double best = 0.0;
    std::ptrdiff_t best_idx = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double iou = iou_3d(p, gts[g]);
      if (iou > best) {
        best = iou;
        best_idx = static_cast<std::ptrdiff_t>(g);
      }
    }
    Assignment a = assign_by_iou(best);
    a.gt_index = best_idx;
    out.push_back(a);
  }
  return out;
}

std::string_view difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::kEasy: return "Easy";
    case Difficulty::kModerate: return "Moderate";
    case Difficulty::kHard: return "Hard";
  }
  return "?";
}

bool meets_difficulty(const GroundTruth& gt, Difficulty d) {
  static constexpr double kMinHeight[] = {40.0, 25.0, 25.0};
  static constexpr int kMaxOcclusion[] = {0, 1, 2};
  static constexpr double kMaxTruncation[] = {0.15, 0.3, 0.5};
  const auto i = static_cast<std::size_t>(d);
  return gt.bbox_height_px >= kMinHeight[i] && gt.occlusion <= kMaxOcclusion[i] &&
         gt.truncation <= kMaxTruncation[i];
}

double default_iou_threshold(ObjectClass cls) { return cls == ObjectClass::kCar ? 0.7 : 0.5; }

double ap40_from_matches(std::span<const unsigned char> is_tp, std::size_t num_gt) {
  if (num_gt == 0) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> precision(is_tp.size()), recall(is_tp.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < is_tp.size(); ++i) {
    tp += is_tp[i] ? 1 : 0;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  // max precision at or to the right of each position
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double total = 0.0;
  std::size_t pos = 0;
  for (std::size_t k = 1; k <= kRecallPositions; ++k) {
    const double r = static_cast<double>(k) / static_cast<double>(kRecallPositions);
    while (pos < recall.size() && recall[pos] < r - 1e-12) ++pos;
    if (pos < recall.size()) total += precision[pos];
  }
  return total / static_cast<double>(kRecallPositions);
}

ApResult average_precision_40(std::span<const FrameEval> frames, ObjectClass cls, double iou_threshold,
                              std::optional<Difficulty> difficulty, IouKind kind) {
  struct Scored {
    double score;
    std::size_t order;
    bool tp;
  };
  std::vector<Scored> kept;
  ApResult res;
  std::size_t order = 0;
  for (const FrameEval& f : frames) {
    std::vector<const GroundTruth*> gts;
    std::vector<unsigned char> ignored;
    for (const GroundTruth& g : f.gts) {
      if (g.cls != cls) continue;
      gts.push_back(&g);
      const bool ign = difficulty && !meets_difficulty(g, *difficulty);
      ignored.push_back(ign ? 1 : 0);
      if (!ign) ++res.num_gt;
    }
    std::vector<std::size_t> det_idx;
    for (std::size_t i = 0; i < f.dets.size(); ++i)
      if (f.dets[i].cls == cls) det_idx.push_back(i);
    std::stable_sort(det_idx.begin(), det_idx.end(),
                     [&](std::size_t a, std::size_t b) { return f.dets[a].score > f.dets[b].score; });
    std::vector<unsigned char> taken(gts.size(), 0);
    for (std::size_t di : det_idx) {
      const Box3D& db = f.dets[di].box;
      std::ptrdiff_t best = -1;
      double best_iou = -1.0;
      bool best_ignored = true;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (taken[g]) continue;
        const double iou = kind == IouKind::kBev ? iou_bev(db, gts[g]->box) : iou_3d(db, gts[g]->box);
        if (iou < iou_threshold) continue;
        const bool ign = ignored[g] != 0;
        // an unignored candidate always beats an ignored one
        if (best < 0 || (best_ignored && !ign) || (best_ignored == ign && iou > best_iou)) {
          best = static_cast<std::ptrdiff_t>(g);
          best_iou = iou;
          best_ignored = ign;
        }
      }
      if (best >= 0) {
        taken[static_cast<std::size_t>(best)] = 1;
        if (best_ignored) continue;
        kept.push_back({f.dets[di].score, order++, true});
        ++res.num_tp;
      } else {
        kept.push_back({f.dets[di].score, order++, false});
        ++res.num_fp;
      }
    }
  }
  if (res.num_gt == 0) {
    res.defined = false;
    res.ap = std::numeric_limits<double>::quiet_NaN();
    return res;
  }
  std::stable_sort(kept.begin(), kept.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  std::vector<unsigned char> flags;
  flags.reserve(kept.size());
  for (const Scored& s : kept) flags.push_back(s.tp ? 1 : 0);
  res.ap = ap40_from_matches(flags, res.num_gt);
  return res;
}

// ---- text formats -----------------------------------------------------------

namespace {

ObjectClass class_or_throw(const std::string& name, std::size_t line) {
  auto c = parse_class(name);
  if (!c) throw ParseError("unknown class '" + name + "'", line);
  return *c;
}

}  // namespace

void write_detections(std::ostream& os, std::span<const DetectionResult> dets) {
  os << std::setprecision(17);
  for (const auto& d : dets) {
    const Box3D& b = d.box;
    os << class_name(d.cls) << ' ' << d.score << ' ' << b.x << ' ' << b.y << ' ' << b.z << ' ' << b.l << ' ' << b.w
       << ' ' << b.h << ' ' << b.yaw << '\n';
  }
}

std::vector<DetectionResult> read_detections(std::istream& is) {
  std::vector<DetectionResult> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
    std::istringstream ss(line);
    std::string name;
    DetectionResult d;
    Box3D& b = d.box;
    if (!(ss >> name >> d.score >> b.x >> b.y >> b.z >> b.l >> b.w >> b.h >> b.yaw))
      throw ParseError("detection row needs 9 fields", lineno);
    std::string extra;
    if (ss >> extra) throw ParseError("detection row has trailing fields", lineno);
    d.cls = class_or_throw(name, lineno);
    out.push_back(d);
  }
  return out;
}

void write_ground_truth(std::ostream& os, std::span<const GroundTruth> gts) {
  os << std::setprecision(17);
  for (const auto& g : gts) {
    const Box3D& b = g.box;
    os << class_name(g.cls) << ' ' << b.x << ' ' << b.y << ' ' << b.z << ' ' << b.l << ' ' << b.w << ' ' << b.h
       << ' ' << b.yaw << ' ' << g.bbox_height_px << ' ' << g.occlusion << ' ' << g.truncation << '\n';
  }
}

std::vector<GroundTruth> read_ground_truth(std::istream& is) {
  std::vector<GroundTruth> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
    std::istringstream ss(line);
    std::string name;
    GroundTruth g;
    Box3D& b = g.box;
    if (!(ss >> name >> b.x >> b.y >> b.z >> b.l >> b.w >> b.h >> b.yaw >> g.bbox_height_px >> g.occlusion >>
          g.truncation))
      throw ParseError("ground-truth row needs 11 fields", lineno);
    g.cls = class_or_throw(name, lineno);
    out.push_back(g);
  }
  return out;
}

}  // namespace ptadet
