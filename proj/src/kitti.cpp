#include "ptadet/kitti.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include "ptadet/errors.hpp"
#include "ptadet/rng.hpp"

namespace ptadet {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    const std::size_t b = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
    if (i > b) out.push_back(s.substr(b, i - b));
  }
  return out;
}

double parse_double(std::string_view tok, int line) {
  double v = 0.0;
  const auto* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw ParseError("invalid number '" + std::string(tok) + "'", line);
  return v;
}

int parse_int(std::string_view tok, int line) {
  const double v = parse_double(tok, line);
  if (v != std::floor(v)) throw ParseError("expected an integer, got '" + std::string(tok) + "'", line);
  return static_cast<int>(v);
}

std::vector<std::pair<std::string_view, int>> lines_of(std::string_view text) {
  std::vector<std::pair<std::string_view, int>> out;
  int n = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    ++n;
    out.emplace_back(line, n);
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

float read_f32_le(const std::uint8_t* p) {
  const std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                          (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(u);
}

void write_f32_le(std::vector<std::uint8_t>& out, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((u >> s) & 0xFFu));
}

Eigen::Vector3d rotate(const std::function<Vec3(const Vec3&)>& f, const Vec3& dir) { return f(dir) - f(Vec3::Zero()); }

}  // namespace

// ---- calibration ------------------------------------------------------------

Calibration parse_calib(std::string_view text) {
  struct Want {
    const char* key;
    std::size_t count;
  };
  static constexpr Want kWanted[] = {{"P2", 12}, {"R0_rect", 9}, {"Tr_velo_to_cam", 12}};
  std::map<std::string, std::vector<double>, std::less<>> found;
  int last = 0;
  for (auto [line, n] : lines_of(text)) {
    last = n;
    const std::string_view t = trim(line);
    if (t.empty()) continue;
    const auto colon = t.find(':');
    if (colon == std::string_view::npos) throw ParseError("calib row without ':'", n);
    const std::string_view key = trim(t.substr(0, colon));
    const Want* want = nullptr;
    for (const Want& w : kWanted)
      if (key == w.key) want = &w;
    if (!want) continue;
    const auto toks = split_ws(t.substr(colon + 1));
    if (toks.size() != want->count)
      throw ParseError(std::string(key) + " needs " + std::to_string(want->count) + " values, got " +
                           std::to_string(toks.size()),
                       n);
    std::vector<double> vals;
    for (auto tok : toks) vals.push_back(parse_double(tok, n));
    found[std::string(key)] = std::move(vals);
  }
  for (const Want& w : kWanted)
    if (!found.contains(w.key)) throw ParseError(std::string("calib is missing key ") + w.key, last + 1);
  Calibration::Mat34 p2, tr;
  Eigen::Matrix3d r0;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      p2(r, c) = found["P2"][static_cast<std::size_t>(r * 4 + c)];
      tr(r, c) = found["Tr_velo_to_cam"][static_cast<std::size_t>(r * 4 + c)];
    }
    for (int c = 0; c < 3; ++c) r0(r, c) = found["R0_rect"][static_cast<std::size_t>(r * 3 + c)];
  }
  return Calibration(p2, r0, tr);
}

std::string serialize_calib(const Calibration& calib) {
  std::ostringstream os;
  auto row = [&](const char* key, const auto& m) {
    os << key << ':';
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) os << ' ' << fmt(m(r, c));
    os << '\n';
  };
  row("P0", calib.p2());
  row("P1", calib.p2());
  row("P2", calib.p2());
  row("P3", calib.p2());
  row("R0_rect", calib.r0_rect());
  row("Tr_velo_to_cam", calib.tr_velo_to_cam());
  Calibration::Mat34 eye = Calibration::Mat34::Zero();
  eye.leftCols<3>() = Eigen::Matrix3d::Identity();
  row("Tr_imu_to_velo", eye);
  return os.str();
}

// ---- velodyne ---------------------------------------------------------------

PointSet read_velodyne(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 16 != 0)
    throw FormatError("velodyne buffer length " + std::to_string(bytes.size()) + " is not a multiple of 16");
  const std::size_t n = bytes.size() / 16;
  PointSet ps;
  ps.coords.reserve(n);
  std::vector<double> intensity(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = bytes.data() + i * 16;
    ps.coords.emplace_back(read_f32_le(p), read_f32_le(p + 4), read_f32_le(p + 8));
    intensity[i] = read_f32_le(p + 12);
    if (!ps.coords.back().allFinite() || !std::isfinite(intensity[i]))
      throw FormatError("velodyne record " + std::to_string(i) + " is not finite");
  }
  if (n > 0) ps.feats = Tensor::from({n, 1}, std::move(intensity));
  return ps;
}

std::vector<std::uint8_t> write_velodyne(const PointSet& points) {
  points.validate();
  if (!points.has_feats() || points.feats.dim(1) < 1) throw ContractError("write_velodyne: needs an intensity column");
  const std::size_t c = points.feats.dim(1);
  auto f = points.feats.data();
  std::vector<std::uint8_t> out;
  out.reserve(points.size() * 16);
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int a = 0; a < 3; ++a) write_f32_le(out, static_cast<float>(points.coords[i][a]));
    write_f32_le(out, static_cast<float>(f[i * c]));
  }
  return out;
}

// ---- labels -----------------------------------------------------------------

std::vector<LabelObject> parse_label_rows(std::string_view text) {
  std::vector<LabelObject> out;
  for (auto [line, n] : lines_of(text)) {
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != 15 && toks.size() != 16)
      throw ParseError("label row needs 15 or 16 fields, got " + std::to_string(toks.size()), n);
    if (toks[0] == "DontCare") continue;
    LabelObject o;
    o.type = std::string(toks[0]);
    o.truncation = parse_double(toks[1], n);
    o.occlusion = parse_int(toks[2], n);
    o.alpha = parse_double(toks[3], n);
    for (std::size_t i = 0; i < 4; ++i) o.bbox[i] = parse_double(toks[4 + i], n);
    o.h = parse_double(toks[8], n);
    o.w = parse_double(toks[9], n);
    o.l = parse_double(toks[10], n);
    o.x = parse_double(toks[11], n);
    o.y = parse_double(toks[12], n);
    o.z = parse_double(toks[13], n);
    o.ry = parse_double(toks[14], n);
    if (toks.size() == 16) o.score = parse_double(toks[15], n);
    out.push_back(std::move(o));
  }
  return out;
}

std::string serialize_labels(std::span<const LabelObject> rows) {
  std::ostringstream os;
  for (const auto& o : rows) {
    os << o.type << ' ' << fmt(o.truncation) << ' ' << o.occlusion << ' ' << fmt(o.alpha);
    for (double b : o.bbox) os << ' ' << fmt(b);
    for (double v : {o.h, o.w, o.l, o.x, o.y, o.z, o.ry}) os << ' ' << fmt(v);
    if (o.score) os << ' ' << fmt(*o.score);
    os << '\n';
  }
  return os.str();
}

GroundTruth label_to_ground_truth(const LabelObject& row, const Calibration& calib, ObjectClass cls) {
  GroundTruth g;
  g.cls = cls;
  const Vec3 center = calib.camera_to_lidar(Vec3(row.x, row.y - row.h / 2.0, row.z));
  const Vec3 heading = rotate([&](const Vec3& p) { return calib.camera_to_lidar(p); },
                              Vec3(std::cos(row.ry), 0.0, -std::sin(row.ry)));
  g.box = {center.x(), center.y(), center.z(), row.l, row.w, row.h, normalize_yaw(std::atan2(heading.y(), heading.x()))};
  g.box.validate();
  g.bbox_height_px = row.bbox[3] - row.bbox[1];
  g.occlusion = row.occlusion;
  g.truncation = row.truncation;
  return g;
}

LabelObject ground_truth_to_label(const GroundTruth& gt, const Calibration& calib) {
  const Box3D& b = gt.box;
  LabelObject o;
  o.type = std::string(class_name(gt.cls));
  o.truncation = gt.truncation;
  o.occlusion = gt.occlusion;
  const Vec3 c = calib.lidar_to_camera(b.center());
  o.h = b.h;
  o.w = b.w;
  o.l = b.l;
  o.x = c.x();
  o.y = c.y() + b.h / 2.0;
  o.z = c.z();
  const Vec3 heading = rotate([&](const Vec3& p) { return calib.lidar_to_camera(p); },
                              Vec3(std::cos(b.yaw), std::sin(b.yaw), 0.0));
  o.ry = normalize_yaw(std::atan2(-heading.z(), heading.x()));
  o.alpha = normalize_yaw(o.ry - std::atan2(c.x(), c.z()));
  double umin = 1e300, vmin = 1e300, umax = -1e300, vmax = -1e300;
  for (const Vec3& corner : b.corners()) {
    const Vec3 cam = calib.lidar_to_camera(corner);
    if (cam.z() <= 0.0) continue;
    const ImagePoint ip = calib.project_to_image(cam);
    umin = std::min(umin, ip.u);
    umax = std::max(umax, ip.u);
    vmin = std::min(vmin, ip.v);
    vmax = std::max(vmax, ip.v);
  }
  if (umin <= umax) o.bbox = {umin, vmin, umax, vmax};
  return o;
}

std::vector<GroundTruth> parse_labels(std::string_view text, const Calibration& calib) {
  std::vector<GroundTruth> out;
  for (const LabelObject& row : parse_label_rows(text))
    if (auto cls = parse_class(row.type)) out.push_back(label_to_ground_truth(row, calib, *cls));
  return out;
}

// ---- crop -------------------------------------------------------------------

bool CropBounds::contains(const Vec3& p) const {
  return p.x() >= x[0] && p.x() <= x[1] && p.y() >= y[0] && p.y() <= y[1] && p.z() >= z[0] && p.z() <= z[1];
}

CropResult crop_points(const PointSet& points, const CropBounds& bounds) {
  points.validate();
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (bounds.contains(points.coords[i])) keep.push_back(i);
  CropResult r;
  r.removed = points.size() - keep.size();
  for (std::size_t i : keep) r.points.coords.push_back(points.coords[i]);
  if (points.has_feats()) r.points.feats = gather_rows(points.feats.detach(), keep);
  return r;
}

// ---- rasterization ----------------------------------------------------------

namespace {

using Pt2 = Eigen::Vector2d;

double cross2(const Pt2& o, const Pt2& a, const Pt2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

/// Andrew's monotone chain, counter-clockwise.
std::vector<Pt2> convex_hull(std::vector<Pt2> pts) {
  std::sort(pts.begin(), pts.end(),
            [](const Pt2& a, const Pt2& b) { return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y()); });
  if (pts.size() < 3) return pts;
  std::vector<Pt2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const Pt2& p : pts) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

std::vector<Pt2> projected_hull(const Box3D& box, const Calibration& calib) {
  std::vector<Pt2> pts;
  for (const Vec3& c : box.corners()) {
    const Vec3 cam = calib.lidar_to_camera(c);
    const Eigen::Vector3d h = calib.p2() * cam.homogeneous();
    if (!(h.z() > 1e-6)) return {};
    pts.emplace_back(h.x() / h.z(), h.y() / h.z());
  }
  return convex_hull(std::move(pts));
}

template <typename Fn>
void for_each_covered_pixel(const std::vector<Pt2>& hull, std::size_t height, std::size_t width, Fn&& fn) {
  if (hull.size() < 3) return;
  double umin = hull[0].x(), umax = umin, vmin = hull[0].y(), vmax = vmin;
  for (const Pt2& p : hull) {
    umin = std::min(umin, p.x());
    umax = std::max(umax, p.x());
    vmin = std::min(vmin, p.y());
    vmax = std::max(vmax, p.y());
  }
  const long c0 = std::max(0L, static_cast<long>(std::ceil(umin)));
  const long c1 = std::min(static_cast<long>(width) - 1, static_cast<long>(std::floor(umax)));
  const long r0 = std::max(0L, static_cast<long>(std::ceil(vmin)));
  const long r1 = std::min(static_cast<long>(height) - 1, static_cast<long>(std::floor(vmax)));
  for (long r = r0; r <= r1; ++r)
    for (long c = c0; c <= c1; ++c) {
      const Pt2 p(static_cast<double>(c), static_cast<double>(r));
      bool inside = true;
      for (std::size_t i = 0; i < hull.size() && inside; ++i)
        inside = cross2(hull[i], hull[(i + 1) % hull.size()], p) >= 0.0;
      if (inside) fn(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
    }
}

}  // namespace

void rasterize_box(const Box3D& box, const Calibration& calib, Mask& mask) {
  for_each_covered_pixel(projected_hull(box, calib), mask.height, mask.width,
                         [&](std::size_t r, std::size_t c) { mask.set(r, c); });
}

Mask rasterize_boxes(std::span<const Box3D> boxes, const Calibration& calib, std::size_t height, std::size_t width) {
  Mask m(height, width);
  for (const Box3D& b : boxes) rasterize_box(b, calib, m);
  return m;
}

// ---- synthetic scenes -------------------------------------------------------

Calibration synthetic_calibration(const SyntheticSceneSpec& spec) {
  const double cx = static_cast<double>(spec.image_width) / 2.0, cy = static_cast<double>(spec.image_height) / 2.0;
  Calibration::Mat34 p2;
  p2 << spec.focal, 0.0, cx, 0.06 * spec.focal, 0.0, spec.focal, cy, 0.0, 0.0, 0.0, 1.0, 0.0;
  Calibration::Mat34 tr;
  tr << 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0, -0.08, 1.0, 0.0, 0.0, -0.27;
  return Calibration(p2, Eigen::Matrix3d::Identity(), tr);
}

namespace {

constexpr double kKittiFocal = 721.5377;

const std::array<std::array<double, 3>, kNumClasses> kClassColor{{{0.85, 0.2, 0.15}, {0.2, 0.75, 0.25}, {0.2, 0.3, 0.85}}};
const std::array<std::array<double, 3>, kNumClasses> kClassSize{{{3.9, 1.6, 1.56}, {0.8, 0.6, 1.73}, {1.76, 0.6, 1.73}}};

void sample_faces(const Box3D& b, double density, Rng& rng, std::vector<Vec3>& coords, std::vector<double>& intensity) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  auto to_world = [&](double lx, double ly, double lz) {
    return Vec3(b.x + c * lx - s * ly, b.y + s * lx + c * ly, b.z + lz);
  };
  const double hl = b.l / 2, hw = b.w / 2, hh = b.h / 2;
  // (fixed axis, fixed value, extent a, extent b)
  struct Face {
    int axis;
    double value;
  };
  const Face faces[] = {{0, hl}, {0, -hl}, {1, hw}, {1, -hw}, {2, hh}, {2, -hh}};
  const double ext[3] = {b.l, b.w, b.h};
  for (const Face& f : faces) {
    const int a1 = (f.axis + 1) % 3, a2 = (f.axis + 2) % 3;
    const double area = ext[a1] * ext[a2];
    const auto count = static_cast<std::size_t>(std::lround(area * density));
    for (std::size_t i = 0; i < count; ++i) {
      double local[3];
      local[f.axis] = f.value;
      local[a1] = rng.uniform(-ext[a1] / 2, ext[a1] / 2);
      local[a2] = rng.uniform(-ext[a2] / 2, ext[a2] / 2);
      coords.push_back(to_world(local[0], local[1], local[2]));
      intensity.push_back(0.5 + 0.3 * rng.uniform());
    }
  }
}

}  // namespace

SceneSample generate_scene(const SyntheticSceneSpec& spec) {
  if (spec.image_width == 0 || spec.image_height == 0 || !(spec.focal > 0.0))
    throw ConfigError("scene: image extents and focal length must be positive");
  if (!(spec.x_range_min > 0.0) || !(spec.x_range_max > spec.x_range_min) || spec.x_range_max > 70.4)
    throw ConfigError("scene: x range must satisfy 0 < min < max <= 70.4");
  if (spec.surface_density < 0.0) throw ConfigError("scene: surface density must be non-negative");

  Rng rng(spec.seed);
  SceneSample scene;
  scene.calib = synthetic_calibration(spec);
  const double half_fov = std::atan(static_cast<double>(spec.image_width) / 2.0 / spec.focal);

  std::vector<Box3D> boxes;
  for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
    for (std::size_t k = 0; k < spec.boxes[cls]; ++k) {
      bool placed = false;
      for (std::size_t attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
        Box3D b;
        b.l = kClassSize[cls][0] * rng.uniform(0.9, 1.1);
        b.w = kClassSize[cls][1] * rng.uniform(0.9, 1.1);
        b.h = kClassSize[cls][2] * rng.uniform(0.9, 1.1);
        b.yaw = normalize_yaw(rng.uniform(-std::numbers::pi, std::numbers::pi));
        b.x = rng.uniform(spec.x_range_min, spec.x_range_max);
        const double ymax = std::max(0.0, b.x * std::tan(half_fov) * 0.7 - std::hypot(b.l, b.w) / 2);
        b.y = rng.uniform(-ymax, ymax);
        b.z = spec.ground_z + b.h / 2;
        const double rb = std::hypot(b.l, b.w) / 2;
        bool ok = true;
        for (const Box3D& o : boxes)
          if (std::hypot(o.x - b.x, o.y - b.y) <= rb + std::hypot(o.l, o.w) / 2 + 0.3) ok = false;
        if (!ok) continue;
        boxes.push_back(b);
        GroundTruth g;
        g.box = b;
        g.cls = static_cast<ObjectClass>(cls);
        scene.gts.push_back(g);
        placed = true;
      }
      if (!placed)
        throw GenerationError("could not place " + std::string(class_name(static_cast<ObjectClass>(cls))) + " box " +
                              std::to_string(k) + " after " + std::to_string(spec.max_retries) + " attempts");
    }
  }

  std::vector<Vec3> coords;
  std::vector<double> intensity;
  for (const Box3D& b : boxes) sample_faces(b, spec.surface_density, rng, coords, intensity);
  const CropBounds bounds;
  for (std::size_t i = 0; i < spec.clutter_points; ++i) {
    Vec3 p;
    bool clear = false;
    for (int attempt = 0; attempt < 100 && !clear; ++attempt) {
      p = Vec3(rng.uniform(0.5, 70.0), rng.uniform(-39.5, 39.5), spec.ground_z + 0.02 * rng.normal());
      clear = true;
      for (const Box3D& b : boxes)
        if (b.contains(p, 0.3)) clear = false;
    }
    if (!clear) continue;
    coords.push_back(p);
    intensity.push_back(0.1 + 0.1 * rng.uniform());
  }
  const std::size_t n = coords.size();
  CropResult crop = crop_points({coords, Tensor::from({n, 1}, std::move(intensity))}, bounds);
  scene.points = std::move(crop.points);
  scene.cropped = crop.removed;

  // image: sky above the horizon, ground below, boxes painted far to near
  const std::size_t hgt = spec.image_height, wid = spec.image_width;
  scene.image = Image(hgt, wid);
  const double horizon = static_cast<double>(hgt) / 2.0;
  for (std::size_t r = 0; r < hgt; ++r)
    for (std::size_t c = 0; c < wid; ++c) {
      const double t = static_cast<double>(r) / static_cast<double>(hgt);
      const std::array<double, 3> col = static_cast<double>(r) < horizon
                                            ? std::array<double, 3>{0.55, 0.7, 0.9}
                                            : std::array<double, 3>{0.3 + 0.2 * t, 0.3 + 0.2 * t, 0.3 + 0.2 * t};
      for (std::size_t ch = 0; ch < 3; ++ch) scene.image.at(r, c, ch) = col[ch];
    }
  std::vector<std::size_t> order(boxes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return boxes[a].x > boxes[b].x; });
  for (std::size_t i : order) {
    const auto cls = static_cast<std::size_t>(scene.gts[i].cls);
    const double shade = 1.0 - 0.6 * std::min(1.0, boxes[i].x / 70.4);
    for_each_covered_pixel(projected_hull(boxes[i], scene.calib), hgt, wid, [&](std::size_t r, std::size_t c) {
      for (std::size_t ch = 0; ch < 3; ++ch) scene.image.at(r, c, ch) = kClassColor[cls][ch] * shade;
    });
  }
  scene.mask = rasterize_boxes(boxes, scene.calib, hgt, wid);

  for (GroundTruth& g : scene.gts) {
    const LabelObject lo = ground_truth_to_label(g, scene.calib);
    g.bbox_height_px = (lo.bbox[3] - lo.bbox[1]) * kKittiFocal / spec.focal;
    const double area = (lo.bbox[2] - lo.bbox[0]) * (lo.bbox[3] - lo.bbox[1]);
    const double cu0 = std::clamp(lo.bbox[0], 0.0, static_cast<double>(wid - 1));
    const double cu1 = std::clamp(lo.bbox[2], 0.0, static_cast<double>(wid - 1));
    const double cv0 = std::clamp(lo.bbox[1], 0.0, static_cast<double>(hgt - 1));
    const double cv1 = std::clamp(lo.bbox[3], 0.0, static_cast<double>(hgt - 1));
    g.truncation = area > 0.0 ? std::clamp(1.0 - (cu1 - cu0) * (cv1 - cv0) / area, 0.0, 1.0) : 1.0;
    g.occlusion = 0;
  }
  return scene;
}

// ---- PFM --------------------------------------------------------------------

std::vector<std::uint8_t> write_pfm(const Image& image) {
  const std::string header =
      "PF\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n-1.0\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + image.pixels.size() * 4);
  for (std::size_t r = image.height; r-- > 0;)
    for (std::size_t c = 0; c < image.width; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) write_f32_le(out, static_cast<float>(image.at(r, c, ch)));
  return out;
}

Image read_pfm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    const std::size_t b = pos;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) ++pos;
    if (b == pos) throw FormatError("pfm: truncated header");
    return std::string(bytes.begin() + static_cast<std::ptrdiff_t>(b), bytes.begin() + static_cast<std::ptrdiff_t>(pos));
  };
  if (token() != "PF") throw FormatError("pfm: only 3-channel 'PF' images are supported");
  std::size_t w = 0, h = 0;
  double scale = 0.0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    scale = std::stod(token());
  } catch (const std::logic_error&) {
    throw FormatError("pfm: malformed header");
  }
  if (scale >= 0.0) throw FormatError("pfm: big-endian data is not supported");
  ++pos;  // single whitespace byte after the scale
  if (bytes.size() - pos != w * h * 12)
    throw FormatError("pfm: expected " + std::to_string(w * h * 12) + " payload bytes, got " +
                      std::to_string(bytes.size() - pos));
  Image img(h, w);
  for (std::size_t r = h; r-- > 0;)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        img.at(r, c, ch) = read_f32_le(bytes.data() + pos);
        pos += 4;
      }
  return img;
}

// ---- files ------------------------------------------------------------------

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_scene(const std::filesystem::path& root, const std::string& id, const SceneSample& scene) {
  write_text_file(root / "calib" / (id + ".txt"), serialize_calib(scene.calib));
  write_file_bytes(root / "velodyne" / (id + ".bin"), write_velodyne(scene.points));
  write_file_bytes(root / "image_2" / (id + ".pfm"), write_pfm(scene.image));
  std::vector<LabelObject> rows;
  for (const GroundTruth& g : scene.gts) {
    LabelObject o = ground_truth_to_label(g, scene.calib);
    o.truncation = g.truncation;
    o.occlusion = g.occlusion;
    rows.push_back(o);
  }
  write_text_file(root / "label_2" / (id + ".txt"), serialize_labels(rows));
}

SceneSample read_scene(const std::filesystem::path& root, const std::string& id, const CropBounds& bounds) {
  SceneSample s;
  s.calib = parse_calib(read_text_file(root / "calib" / (id + ".txt")));
  const auto velo = read_file_bytes(root / "velodyne" / (id + ".bin"));
  CropResult crop = crop_points(read_velodyne(velo), bounds);
  s.points = std::move(crop.points);
  s.cropped = crop.removed;
  const auto img = read_file_bytes(root / "image_2" / (id + ".pfm"));
  s.image = read_pfm(img);
  s.gts = parse_labels(read_text_file(root / "label_2" / (id + ".txt")), s.calib);
  std::vector<Box3D> boxes;
  for (GroundTruth& g : s.gts) {
    g.bbox_height_px *= kKittiFocal / s.calib.p2()(0, 0);
    boxes.push_back(g.box);
  }
  s.mask = rasterize_boxes(boxes, s.calib, s.image.height, s.image.width);
  return s;
}

}  // namespace ptadet
