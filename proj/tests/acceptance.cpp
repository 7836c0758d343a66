// Acceptance gate: one PASS/FAIL line per headline criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ptadet/app.hpp"
#include "ptadet/boxes.hpp"
#include "ptadet/frustum.hpp"
#include "ptadet/kitti.hpp"
#include "ptadet/suites.hpp"
#include "test_util.hpp"

using namespace ptadet;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!pass) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

int cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) std::cerr << "ptadet";
  if (code != 0)
    for (const auto& a : args) std::cerr << ' ' << a;
  if (code != 0) std::cerr << " -> exit " << code << "\n" << err.str();
  return code;
}

std::map<std::string, std::string> read_summary(const fs::path& p) {
  std::map<std::string, std::string> m;
  std::istringstream in(read_text_file(p));
  std::string line;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma != std::string::npos) m[line.substr(0, comma)] = line.substr(comma + 1);
  }
  return m;
}

std::vector<std::string> ablate_hashes(const fs::path& csv) {
  std::istringstream in(read_text_file(csv));
  std::string line;
  std::getline(in, line);
  std::vector<std::string> out;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::vector<std::string> f;
    for (std::string t; std::getline(ss, t, ',');) f.push_back(t);
    out.push_back(f.at(2));
  }
  return out;
}

// Every regular file under `a` must exist under `b` with identical bytes.
bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    ++n;
    if (!fs::exists(b / rel) || read_file_bytes(e.path()) != read_file_bytes(b / rel)) {
      why = rel.string() + " differs";
      return false;
    }
  }
  why = std::to_string(n) + " files identical";
  return n > 0;
}

void gradient_suite() {
  const auto t0 = Clock::now();
  std::size_t groups = 0, bad = 0;
  double worst = 0;
  std::string worst_name;
  const auto cases = gradcheck_cases("all");
  for (const auto& c : cases)
    for (const GradcheckRow& r : run_gradcheck_case(c)) {
      ++groups;
      bad += !r.pass;
      if (r.max_rel_err > worst) worst = r.max_rel_err, worst_name = r.case_name + "/" + r.group;
    }
  const double secs = seconds_since(t0);
  report("gradient_suite", bad == 0 && secs < 300.0,
         std::to_string(cases.size()) + " cases, " + std::to_string(groups - bad) + "/" + std::to_string(groups) +
             " groups below 1e-4" + fmt(", worst rel err %.3g", worst) + " (" + worst_name + ")" +
             fmt(", %.1f s (limit 300 s)", secs));
}

void oracle_equivalence() {
  Rng rng(2024);
  std::size_t fps_ok = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.below(200);
    const auto pts = t % 3 == 0 ? testing::lattice_points(n, rng) : testing::random_points(n, rng);
    const std::size_t m = 1 + rng.below(n), start = rng.below(n);
    fps_ok += farthest_point_sampling(pts, m, start) == testing::fps_oracle(pts, m, start);
  }
  std::size_t nms_ok = 0;
  for (int t = 0; t < 200; ++t) {
    std::vector<DetectionResult> dets(1 + rng.below(40));
    for (auto& d : dets) {
      d.box = testing::random_box(rng, 4.0);
      d.score = t % 2 ? rng.uniform() : static_cast<double>(rng.below(4)) / 4.0;
    }
    const double thr = rng.uniform(0.0, 0.8);
    nms_ok += nms_indices(dets, thr) == testing::nms_oracle(dets, thr);
  }
  double mc_worst = 0;
  Rng mc(7);
  for (int t = 0; t < 50; ++t) {
    const auto [a, b] = testing::overlapping_pair(rng);
    mc_worst = std::max(mc_worst, std::abs(iou_3d(a, b) - testing::monte_carlo_iou(a, b, 1000000, mc)));
  }
  double affine_worst = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t h = 2 + rng.below(6), w = 2 + rng.below(6), d = 2 + rng.below(5);
    const double a0 = rng.uniform(-3, 3), au = rng.uniform(-3, 3), av = rng.uniform(-3, 3), ad = rng.uniform(-3, 3);
    std::vector<double> grid(h * w), vol(h * w * d);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        grid[r * w + c] = a0 + au * c + av * r;
        for (std::size_t k = 0; k < d; ++k) vol[(r * w + c) * d + k] = a0 + au * c + av * r + ad * k;
      }
    const double u = rng.uniform(0, w - 1.0), v = rng.uniform(0, h - 1.0), z = rng.uniform(0, d - 1.0);
    affine_worst = std::max(affine_worst, std::abs(bilinear_sample(grid, h, w, 1, u, v).values[0] - (a0 + au * u + av * v)));
    affine_worst = std::max(affine_worst, std::abs(trilinear_sample(vol, h, w, d, 1, u, v, z).values[0] -
                                                   (a0 + au * u + av * v + ad * z)));
  }
  report("oracle_equivalence",
         fps_ok == 100 && nms_ok == 200 && mc_worst <= 0.003 && affine_worst <= 1e-12,
         "FPS " + std::to_string(fps_ok) + "/100 exact, NMS " + std::to_string(nms_ok) + "/200 exact" +
             fmt(", Monte-Carlo IoU max |d| %.4f (<= 0.003, 50 pairs x 1e6), affine max err %.2g (<= 1e-12)",
                 mc_worst, affine_worst));
}

void frustum_invariant() {
  Rng rng(99);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t h = 1 + rng.below(6), w = 1 + rng.below(6), d = 1 + rng.below(80), c = 1 + rng.below(16);
    const ImageFeatureGrid fi{Tensor::uniform({h * w, c}, 5.0, rng), h, w, 1};
    const DepthPrediction dp{Tensor::uniform({h * w, d}, 20.0, rng), Tensor::full({h * w, d}, 0.5), h, w};
    const FrustumGrid ft = build_frustum(fi, dp);
    for (std::size_t cell = 0; cell < h * w; ++cell)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) s += ft.feats[(cell * d + k) * c + ch];
        worst = std::max(worst, std::abs(s - fi.feats[cell * c + ch]));
      }
  }
  report("frustum_invariant", worst <= 1e-6, fmt("max |sum_d F_T - F_I| = %.2g over 100 inputs (<= 1e-6)", worst));
}

void round_trips() {
  Rng rng(31);
  const LidBinning bins;
  double lid = 0;
  for (int i = 0; i < 1000; ++i) {
    const double d = rng.uniform(0.0, 70.4);
    const LidEncoding e = bins.encode(d);
    lid = std::max(lid, std::abs(bins.decode(e.bin, e.residual) - d));
  }
  double cam = 0;
  for (int c = 0; c < 10; ++c) {
    const Calibration calib = testing::random_calibration(rng);
    for (int i = 0; i < 1000; ++i) {
      const Vec3 p(rng.uniform(2, 70), rng.uniform(-40, 40), rng.uniform(-3, 1));
      cam = std::max(cam, (calib.camera_to_lidar(calib.lidar_to_camera(p)) - p).norm());
    }
  }
  // pseudo-point identity: zero offsets, depth encoded exactly at feature-cell centers
  const Calibration calib = synthetic_calibration(SyntheticSceneSpec{});
  const std::size_t h = 16, w = 48, nb = 80;
  PointSet pts;
  std::vector<std::size_t> fg;
  std::vector<double> logits(h * w * nb, 0.0), res(h * w * nb, 0.5);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double depth = rng.uniform(2.0, 70.0);
      const LidEncoding e = bins.encode(depth);
      logits[(r * w + c) * nb + e.bin] = 5.0;
      res[(r * w + c) * nb + e.bin] = e.residual;
      fg.push_back(pts.size());
      pts.coords.push_back(calib.camera_to_lidar(calib.lift_from_image(c, r, depth)));
    }
  const DepthPrediction dp{Tensor::from({h * w, nb}, logits), Tensor::from({h * w, nb}, res), h, w};
  const OffsetGrid og{Tensor::zeros({h * w, 2}), h, w, 1};
  double pseudo = 0;
  const PseudoRouting rt =
      route_pseudo_points(pts, fg, calib, dp, og, bins, {fg.size(), SamplingMode::kKeypoint, h, w});
  for (std::size_t i = 0; i < rt.coords.size(); ++i)
    pseudo = std::max(pseudo, (rt.coords[i] - pts.coords[rt.source_indices[i]]).norm());
  report("round_trips", lid <= 1e-9 && cam <= 1e-9 && pseudo <= 1e-6 && rt.coords.size() == fg.size(),
         fmt("LID max err %.2g (1000 depths), camera<->LiDAR %.2g (10 x 1000 points), pseudo identity %.2g", lid, cam,
             pseudo));
}

void micro_overfit(const fs::path& root) {
  const fs::path out = root / "overfit";
  const auto t0 = Clock::now();
  const int code = cli({"--preset", "desk", "--out", out.string(), "overfit"});
  const double secs = seconds_since(t0);
  if (code != 0) return report("micro_overfit", false, "overfit exited with " + std::to_string(code));
  auto s = read_summary(out / "summary.csv");
  const double drop = std::stod(s["loss_drop_fraction"]), iou = std::stod(s["top_bev_iou"]);
  report("micro_overfit", drop >= 0.5 && iou >= 0.5 && secs < 600.0,
         s["steps"] + " steps, loss " + s["initial_total"] + " -> " + s["final_total"] +
             fmt(" (drop %.1f%%, need >= 50%%), top BEV IoU %.3f (need >= 0.5), %.1f s", 100 * drop, iou, secs));
}

void ap_golden() {
  const fs::path fx = PTADET_FIXTURES;
  std::istringstream ds(read_text_file(fx / "golden_dets.txt")), gs(read_text_file(fx / "golden_gt.txt"));
  const std::vector<FrameEval> frames{{read_detections(ds), read_ground_truth(gs)}};
  std::istringstream ex(read_text_file(fx / "golden_expected.txt"));
  std::string cls;
  double expected = -1;
  ex >> cls >> expected;
  const double ap = average_precision_40(frames, ObjectClass::kCar, default_iou_threshold(ObjectClass::kCar)).ap;
  report("ap_golden", std::abs(ap - expected) <= 1e-9,
         fmt("AP-40 %.12f vs oracle %.12f (|d| %.2g, <= 1e-9)", ap, expected, std::abs(ap - expected)));
}

void ablation_liveness(const fs::path& root) {
  std::string detail;
  bool pass = true;
  for (const auto& [axis, want] : std::vector<std::pair<std::string, std::size_t>>{{"combine", 3}, {"attn", 4}}) {
    const fs::path out = root / ("ablate_" + axis);
    if (cli({"--preset", "desk", "--out", out.string(), "ablate", "--axis", axis}) != 0) {
      pass = false;
      detail += axis + ": run failed; ";
      continue;
    }
    const auto hashes = ablate_hashes(out / "ablate.csv");
    const std::size_t distinct = std::set<std::string>(hashes.begin(), hashes.end()).size();
    pass = pass && hashes.size() == want && distinct == want;
    detail += axis + " " + std::to_string(distinct) + "/" + std::to_string(want) + " distinct hashes; ";
  }
  report("ablation_liveness", pass, detail.substr(0, detail.size() - 2));
}

void determinism(const fs::path& root) {
  struct Job {
    std::string name;
    std::vector<std::string> args;
  };
  const std::vector<Job> jobs{
      {"overfit", {"--preset", "desk", "--set", "train.steps=20", "overfit"}},
      {"ablate", {"--preset", "desk", "ablate", "--axis", "sampling", "--steps", "2"}},
      {"generate", {"--preset", "desk", "--seed", "3", "generate", "--count", "2"}},
      {"gradcheck", {"gradcheck", "--scope", "op"}},
  };
  bool pass = true;
  std::string detail;
  for (const Job& j : jobs) {
    const fs::path first = root / ("det_" + j.name), again = root / ("det_" + j.name + "_replay");
    std::vector<std::string> args{"--out", first.string()};
    args.insert(args.end(), j.args.begin(), j.args.end());
    std::string why = "run failed";
    const bool ok = cli(args) == 0 &&
                    cli({"--out", again.string(), "replay", "--manifest", (first / "manifest.jsonl").string()}) == 0 &&
                    same_tree(first, again, why) && same_tree(again, first, why);
    pass = pass && ok;
    detail += j.name + ": " + why + "; ";
  }
  report("determinism", pass, detail.substr(0, detail.size() - 2));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "ptadet_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::vector<std::pair<const char*, std::function<void()>>> criteria{
      {"gradient_suite", gradient_suite},
      {"oracle_equivalence", oracle_equivalence},
      {"frustum_invariant", frustum_invariant},
      {"round_trips", round_trips},
      {"micro_overfit", [&] { micro_overfit(root); }},
      {"ap_golden", ap_golden},
      {"ablation_liveness", [&] { ablation_liveness(root); }},
      {"determinism", [&] { determinism(root); }},
  };
  for (const auto& [name, fn] : criteria) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(name, false, std::string("threw: ") + e.what());
    }
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
