#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "ptadet/app.hpp"
#include "ptadet/boxes.hpp"
#include "ptadet/errors.hpp"
#include "ptadet/geometry.hpp"
#include "ptadet/kitti.hpp"
#include "ptadet/losses.hpp"

namespace py = pybind11;
using namespace ptadet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<Vec3> to_points(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw DimensionError("expected an [N x 3] array");
  std::vector<Vec3> out;
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < r.shape(0); ++i) out.emplace_back(r(i, 0), r(i, 1), r(i, 2));
  return out;
}

Array from_points(const std::vector<Vec3>& pts) {
  Array a({static_cast<py::ssize_t>(pts.size()), py::ssize_t{3}});
  auto w = a.mutable_unchecked<2>();
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int k = 0; k < 3; ++k) w(i, k) = pts[i][k];
  return a;
}

template <int R, int C>
Eigen::Matrix<double, R, C> to_matrix(const Array& a) {
  if (a.ndim() != 2 || a.shape(0) != R || a.shape(1) != C)
    throw DimensionError("expected a " + std::to_string(R) + "x" + std::to_string(C) + " array");
  Eigen::Matrix<double, R, C> m;
  auto r = a.unchecked<2>();
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) m(i, j) = r(i, j);
  return m;
}

template <typename M>
Array from_matrix(const M& m) {
  Array a({static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())});
  auto w = a.mutable_unchecked<2>();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) w(i, j) = m(i, j);
  return a;
}

Vec3 to_vec3(const Array& a) {
  if (a.size() != 3) throw DimensionError("expected 3 values");
  return {a.data()[0], a.data()[1], a.data()[2]};
}

ObjectClass to_class(const std::string& name) {
  const auto c = parse_class(name);
  if (!c) throw ArgumentError("unknown class '" + name + "'");
  return *c;
}

py::dict gt_dict(const GroundTruth& g) {
  py::dict d;
  d["box"] = g.box;
  d["cls"] = std::string(class_name(g.cls));
  d["bbox_height_px"] = g.bbox_height_px;
  d["occlusion"] = g.occlusion;
  d["truncation"] = g.truncation;
  return d;
}

}  // namespace

PYBIND11_MODULE(_ptadet, m) {
  m.doc() = "PTA-Det C++ core";
  m.attr("__version__") = kVersion;
  py::register_exception<Error>(m, "PtadetError");

  m.def(
      "farthest_point_sampling",
      [](const Array& pts, std::size_t count, std::size_t start) {
        return farthest_point_sampling(to_points(pts), count, start);
      },
      py::arg("points"), py::arg("count"), py::arg("start") = 0);
  m.def(
      "knn_group",
      [](const Array& q, const Array& p, std::size_t k) {
        const KnnResult r = knn_group(to_points(q), to_points(p), k);
        const auto rows = static_cast<py::ssize_t>(r.k ? r.indices.size() / r.k : 0);
        py::array_t<std::int64_t> idx({rows, static_cast<py::ssize_t>(r.k)});
        Array d({rows, static_cast<py::ssize_t>(r.k)});
        for (std::size_t i = 0; i < r.indices.size(); ++i) {
          idx.mutable_data()[i] = static_cast<std::int64_t>(r.indices[i]);
          d.mutable_data()[i] = r.sq_dists[i];
        }
        return py::make_tuple(idx, d);
      },
      py::arg("queries"), py::arg("points"), py::arg("k"));

  py::class_<Box3D>(m, "Box3D")
      .def(py::init([](double x, double y, double z, double l, double w, double h, double yaw) {
             Box3D b{x, y, z, l, w, h, yaw};
             b.validate();
             return b;
           }),
           py::arg("x"), py::arg("y"), py::arg("z"), py::arg("l"), py::arg("w"), py::arg("h"), py::arg("yaw") = 0.0)
      .def_readwrite("x", &Box3D::x)
      .def_readwrite("y", &Box3D::y)
      .def_readwrite("z", &Box3D::z)
      .def_readwrite("l", &Box3D::l)
      .def_readwrite("w", &Box3D::w)
      .def_readwrite("h", &Box3D::h)
      .def_readwrite("yaw", &Box3D::yaw)
      .def("volume", &Box3D::volume)
      .def("corners",
           [](const Box3D& b) {
             const auto c = b.corners();
             return from_points(std::vector<Vec3>(c.begin(), c.end()));
           })
      .def("contains", [](const Box3D& b, const Array& p, double margin) { return b.contains(to_vec3(p), margin); },
           py::arg("point"), py::arg("margin") = 0.0)
      .def("__repr__", [](const Box3D& b) {
        std::ostringstream s;
        s << "Box3D(" << b.x << ", " << b.y << ", " << b.z << ", " << b.l << ", " << b.w << ", " << b.h << ", " << b.yaw
          << ")";
        return s.str();
      });

  m.def("iou_bev", &iou_bev, py::arg("a"), py::arg("b"));
  m.def("iou_3d", &iou_3d, py::arg("a"), py::arg("b"));
  m.def(
      "nms",
      [](const std::vector<Box3D>& boxes, const std::vector<double>& scores, double threshold) {
        if (boxes.size() != scores.size()) throw DimensionError("nms: boxes and scores differ in length");
        std::vector<DetectionResult> dets;
        for (std::size_t i = 0; i < boxes.size(); ++i) dets.push_back({boxes[i], scores[i], ObjectClass::kCar});
        return nms_indices(dets, threshold);
      },
      py::arg("boxes"), py::arg("scores"), py::arg("threshold"));

  py::class_<LidBinning>(m, "LidBinning")
      .def(py::init<double, double, std::size_t>(), py::arg("d_min") = 0.0, py::arg("d_max") = 70.4,
           py::arg("bins") = 80)
      .def_property_readonly("bins", &LidBinning::bins)
      .def("edges", &LidBinning::edges)
      .def("encode",
           [](const LidBinning& b, double d) {
             const LidEncoding e = b.encode(d);
             return py::make_tuple(e.bin, e.residual, e.clamped);
           })
      .def("decode", &LidBinning::decode, py::arg("bin"), py::arg("residual"))
      .def("bin_coordinate", &LidBinning::bin_coordinate);

  py::class_<Calibration>(m, "Calibration")
      .def(py::init([](const Array& p2, const Array& r0, const Array& tr) {
             return Calibration(to_matrix<3, 4>(p2), to_matrix<3, 3>(r0), to_matrix<3, 4>(tr));
           }),
           py::arg("p2"), py::arg("r0_rect"), py::arg("tr_velo_to_cam"))
      .def_property_readonly("p2", [](const Calibration& c) { return from_matrix(c.p2()); })
      .def_property_readonly("r0_rect", [](const Calibration& c) { return from_matrix(c.r0_rect()); })
      .def_property_readonly("tr_velo_to_cam", [](const Calibration& c) { return from_matrix(c.tr_velo_to_cam()); })
      .def("lidar_to_camera", [](const Calibration& c, const Array& p) { return from_points({c.lidar_to_camera(to_vec3(p))}); })
      .def("camera_to_lidar", [](const Calibration& c, const Array& p) { return from_points({c.camera_to_lidar(to_vec3(p))}); })
      .def("project_lidar",
           [](const Calibration& c, const Array& p) {
             const ImagePoint ip = c.project_lidar(to_vec3(p));
             return py::make_tuple(ip.u, ip.v, ip.depth);
           })
      .def("lift_from_image",
           [](const Calibration& c, double u, double v, double depth) {
             return from_points({c.lift_from_image(u, v, depth)});
           });

  m.def("parse_calib", &parse_calib, py::arg("text"));
  m.def(
      "read_velodyne",
      [](py::bytes data) {
        const std::string s = data;
        const PointSet ps = read_velodyne(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
        Array inten(static_cast<py::ssize_t>(ps.size()));
        for (std::size_t i = 0; i < ps.size(); ++i) inten.mutable_data()[i] = ps.feats[i];
        return py::make_tuple(from_points(ps.coords), inten);
      },
      py::arg("data"));

  m.def(
      "generate_scene",
      [](std::uint64_t seed, std::size_t cars, std::size_t pedestrians, std::size_t cyclists) {
        SyntheticSceneSpec spec;
        spec.seed = seed;
        spec.boxes = {cars, pedestrians, cyclists};
        const SceneSample s = generate_scene(spec);
        py::dict d;
        d["points"] = from_points(s.points.coords);
        Array inten(static_cast<py::ssize_t>(s.points.size()));
        for (std::size_t i = 0; i < s.points.size(); ++i) inten.mutable_data()[i] = s.points.feats[i];
        d["intensity"] = inten;
        Array img({static_cast<py::ssize_t>(s.image.height), static_cast<py::ssize_t>(s.image.width), py::ssize_t{3}});
        std::copy(s.image.pixels.begin(), s.image.pixels.end(), img.mutable_data());
        d["image"] = img;
        d["calib"] = s.calib;
        py::list gts;
        for (const auto& g : s.gts) gts.append(gt_dict(g));
        d["gts"] = gts;
        return d;
      },
      py::arg("seed") = 0, py::arg("cars") = 2, py::arg("pedestrians") = 0, py::arg("cyclists") = 0);

  m.def("ap40_from_matches",
        [](const std::vector<bool>& tp, std::size_t num_gt) {
          const std::vector<unsigned char> flags(tp.begin(), tp.end());
          return ap40_from_matches(flags, num_gt);
        },
        py::arg("is_tp"), py::arg("num_gt"));
  m.def(
      "average_precision_40",
      [](const std::vector<std::pair<std::vector<std::pair<Box3D, double>>, std::vector<Box3D>>>& frames,
         const std::string& cls, std::optional<double> threshold, const std::string& kind) {
        const ObjectClass c = to_class(cls);
        std::vector<FrameEval> fe;
        for (const auto& [dets, gts] : frames) {
          FrameEval f;
          for (const auto& [b, s] : dets) f.dets.push_back({b, s, c});
          for (const auto& b : gts) f.gts.push_back({b, c});
          fe.push_back(std::move(f));
        }
        if (kind != "3d" && kind != "bev") throw ArgumentError("kind must be 3d or bev");
        const ApResult r = average_precision_40(fe, c, threshold.value_or(default_iou_threshold(c)), std::nullopt,
                                                kind == "3d" ? IouKind::k3d : IouKind::kBev);
        return r.ap;
      },
      py::arg("frames"), py::arg("cls") = "Car", py::arg("iou_threshold") = py::none(), py::arg("kind") = "3d",
      "frames: list of ([(Box3D, score), ...], [gt Box3D, ...]) pairs; returns AP-40 with no difficulty filter.");

  m.def(
      "focal_loss",
      [](double p, bool fg, double alpha, double gamma) { return focal_loss(p, fg, alpha, gamma).loss; },
      py::arg("p"), py::arg("foreground"), py::arg("alpha") = 0.25, py::arg("gamma") = 2.0);
  m.def("smooth_l1", py::overload_cast<double>(&smooth_l1), py::arg("x"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the ptadet command line; returns (exit_code, stdout, stderr).");
}
