#include "ptadet/suites.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "ptadet/errors.hpp"

namespace ptadet {

namespace {

Tensor leaf(Shape shape, Rng& rng, double bound = 1.0) { return Tensor::uniform(std::move(shape), bound, rng, true); }

/// Leaf whose entries stay at least `gap` away from every value in `kinks`.
Tensor leaf_away_from(Shape shape, Rng& rng, std::vector<double> kinks, double gap, double bound) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> v(n);
  for (double& x : v) {
    do {
      x = rng.uniform(-bound, bound);
    } while (std::ranges::any_of(kinks, [&](double k) { return std::abs(x - k) < gap; }));
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

/// Scalar probe sum(out ⊙ R) with a fixed random R.
std::function<Tensor()> probe(std::function<Tensor()> f, Rng& rng) {
  const Tensor sample = f();
  const Tensor r = Tensor::uniform(sample.shape(), 1.0, rng);
  return [f = std::move(f), r] { return sum(mul(f(), r)); };
}

std::vector<Vec3> random_coords(std::size_t n, Rng& rng, double extent = 4.0) {
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(rng.uniform(0, extent), rng.uniform(0, extent), rng.uniform(0, extent));
  return out;
}

void add_case(std::vector<GradcheckCase>& out, std::string scope, std::string name, std::function<Tensor()> loss,
              ParamList params, std::size_t max_entries = 0) {
  GradcheckCase c;
  c.scope = std::move(scope);
  c.name = std::move(name);
  c.loss = std::move(loss);
  c.params = std::move(params);
  c.options.max_entries = max_entries;
  out.push_back(std::move(c));
}

void op_cases(std::vector<GradcheckCase>& out, Rng& rng) {
  const std::string s = "op";
  {
    Tensor a = leaf({4, 3}, rng), b = leaf({3, 5}, rng);
    add_case(out, s, "matmul", probe([=] { return matmul(a, b); }, rng), {{"a", a}, {"b", b}});
  }
  {
    Tensor a = leaf({3, 4}, rng);
    add_case(out, s, "transpose", probe([=] { return transpose(a); }, rng), {{"a", a}});
  }
  {
    Tensor a = leaf({3, 4}, rng), b = leaf({3, 4}, rng), c = leaf({3, 4}, rng);
    add_case(out, s, "add_sub_mul", probe([=] { return mul(add(a, b), sub(a, c)); }, rng),
             {{"a", a}, {"b", b}, {"c", c}});
  }
  {
    Tensor a = leaf({2, 5}, rng);
    add_case(out, s, "scale_add_scalar_square", probe([=] { return square(add_scalar(scale(a, 1.7), 0.3)); }, rng),
             {{"a", a}});
  }
  {
    Tensor x = leaf({5, 3}, rng), b = leaf({3}, rng), k = leaf({3}, rng);
    add_case(out, s, "add_bias_mul_cols", probe([=] { return mul_cols(add_bias(x, b), k); }, rng),
             {{"x", x}, {"b", b}, {"k", k}});
  }
  {
    Tensor m = leaf({3, 4}, rng), r = leaf({3}, rng), c = leaf({4}, rng);
    add_case(out, s, "add_outer", probe([=] { return add_outer(m, r, c); }, rng), {{"s", m}, {"r", r}, {"c", c}});
  }
  {
    Tensor x = leaf_away_from({4, 4}, rng, {0.0}, 0.05, 1.0);
    add_case(out, s, "relu", probe([=] { return relu(x); }, rng), {{"x", x}});
  }
  {
    Tensor x = leaf({4, 3}, rng, 3.0);
    add_case(out, s, "sigmoid", probe([=] { return sigmoid(x); }, rng), {{"x", x}});
  }
  {
    Tensor x = Tensor::from({6}, {0.5, 0.9, 1.3, 1.7, 2.2, 3.1}, true);
    add_case(out, s, "log", probe([=] { return log(x); }, rng), {{"x", x}});
  }
  {
    Tensor x = leaf({3, 4}, rng, 2.0);
    add_case(out, s, "softmax_axis0", probe([=] { return softmax(x, 0); }, rng), {{"x", x}});
    Tensor y = leaf({3, 4}, rng, 2.0);
    add_case(out, s, "softmax_axis1", probe([=] { return softmax(y, 1); }, rng), {{"x", y}});
    Tensor z = leaf({2, 3, 4}, rng, 2.0);
    add_case(out, s, "softmax_axis1_rank3", probe([=] { return softmax(z, 1); }, rng), {{"x", z}});
  }
  {
    Tensor x = leaf({2, 3, 4}, rng);
    add_case(out, s, "sum_mean", [=] { return add(sum(square(x)), scale(mean(x), 3.0)); }, {{"x", x}});
    Tensor y = leaf({2, 3, 4}, rng);
    add_case(out, s, "sum_axis", probe([=] { return concat_cols({sum_axis(y, 1), sum_axis(y, 2)}); }, rng),
             {{"x", y}});
  }
  {
    Tensor x = leaf({3, 5, 4}, rng);
    add_case(out, s, "maxpool_group", probe([=] { return maxpool_group(x); }, rng), {{"x", x}});
  }
  {
    Tensor x = leaf({5, 3}, rng);
    const std::vector<std::size_t> rows{4, 0, 0, 2, 4, 1};
    add_case(out, s, "reshape_gather_rows", probe([=] { return reshape(gather_rows(x, rows), {3, 6}); }, rng),
             {{"x", x}});
    Tensor y = leaf({5, 3}, rng);
    const std::vector<std::size_t> idx{0, 1, 2, 4, 4, 3};
    const std::vector<double> w{0.2, 0.3, 0.5, 0.7, 0.1, 0.2};
    add_case(out, s, "weighted_gather", probe([=] { return weighted_gather(y, idx, w, 3); }, rng), {{"x", y}});
  }
  {
    Tensor a = leaf({3, 2}, rng), b = leaf({3, 4}, rng);
    add_case(out, s, "concat_slice", probe([=] { return slice_cols(concat_cols({a, b}), 1, 5); }, rng),
             {{"a", a}, {"b", b}});
  }
  {
    Tensor x = leaf({6, 3}, rng);
    add_case(out, s, "standardize_cols", probe([=] { return standardize_cols(x, kNormEps); }, rng), {{"x", x}});
  }
  {
    Tensor a = leaf({3, 4}, rng), b = leaf({3, 2}, rng);
    add_case(out, s, "outer_rows", probe([=] { return outer_rows(a, b); }, rng), {{"a", a}, {"b", b}});
  }
  {
    Tensor x = leaf_away_from({3, 4}, rng, {-1.0, 1.0}, 0.05, 2.0);
    add_case(out, s, "smooth_l1", probe([=] { return smooth_l1(x); }, rng), {{"x", x}});
  }
  {
    std::vector<double> p(8);
    for (double& v : p) v = rng.uniform(0.05, 0.95);
    Tensor pt = Tensor::from({8}, p, true);
    const std::vector<unsigned char> fg{1, 0, 0, 1, 1, 0, 1, 0};
    add_case(out, s, "focal_terms", [=] { return sum(focal_terms(pt, fg, 0.25, 2.0)); }, {{"p", pt}});
  }
  {
    Tensor x = leaf({6, 4}, rng);
    Linear lin = Linear::init(4, 3, rng);
    ParamList ps{{"x", x}};
    lin.collect("linear", ps);
    add_case(out, s, "linear", probe([=] { return linear(x, lin); }, rng), ps);
  }
  {
    Tensor x = leaf({7, 4}, rng);
    LbrLayer l = LbrLayer::init(4, 3, rng);
    // keep the post-normalization ReLU inputs away from its kink
    std::ranges::fill(l.norm_shift.mutable_data(), 3.0);
    ParamList ps{{"x", x}};
    l.collect("lbr", ps);
    add_case(out, s, "lbr_standardize", probe([=] { return lbr(x, l); }, rng), ps);
    LbrLayer li = LbrLayer::init(4, 3, rng, NormMode::kIdentity);
    std::ranges::fill(li.norm_shift.mutable_data(), 3.0);
    ParamList pi{{"x", x}};
    li.collect("lbr", pi);
    add_case(out, s, "lbr_identity", probe([=] { return lbr(x, li); }, rng), pi);
  }
}

void stage_cases(std::vector<GradcheckCase>& out, Rng& rng) {
  const std::string s = "stage";
  for (AttnMode mode : {AttnMode::kSubtract, AttnMode::kMultiply}) {
    const auto coords = random_coords(12, rng);
    Tensor f = leaf({12, 6}, rng);
    AttentionBlock blk = AttentionBlock::init(6, 4, mode, rng);
    ParamList ps{{"feats", f}};
    blk.collect("attn", ps);
    add_case(out, s, "attention_" + std::string(attn_mode_name(mode)),
             probe([=] { return attention_forward(coords, f, blk); }, rng), ps, 32);
  }
  for (AttnMode mode : {AttnMode::kSubtract, AttnMode::kMultiply}) {
    PointSet in{random_coords(24, rng), leaf({24, 5}, rng)};
    PtdStage st = PtdStage::init(5, 8, 4, 6, mode, rng);
    ParamList ps{{"feats", in.feats}};
    st.collect("ptd", ps);
    add_case(out, s, "ptd_" + std::string(attn_mode_name(mode)), probe([=] { return ptd_forward(in, st).feats; }, rng),
             ps, 32);
  }
  {
    PointSet coarse{random_coords(6, rng), leaf({6, 6}, rng)};
    PointSet skip{random_coords(16, rng), leaf({16, 4}, rng)};
    PtuStage st = PtuStage::init(6, 4, 4, AttnMode::kSubtract, rng);
    ParamList ps{{"coarse", coarse.feats}, {"skip", skip.feats}};
    st.collect("ptu", ps);
    add_case(out, s, "ptu", probe([=] { return ptu_forward(coarse, skip, st).feats; }, rng), ps, 32);
  }
  {
    PointSet c0{random_coords(4, rng), leaf({4, 6}, rng)};
    PointSet s1{random_coords(10, rng), leaf({10, 5}, rng)};
    PointSet s2{random_coords(20, rng), leaf({20, 3}, rng)};
    FpStage f1 = FpStage::init(6, 5, {6, 6}, rng), f2 = FpStage::init(6, 3, {5, 5}, rng);
    ParamList ps{{"coarse", c0.feats}, {"skip1", s1.feats}, {"skip2", s2.feats}};
    f1.collect("fp1", ps);
    f2.collect("fp2", ps);
    add_case(out, s, "fp_two_stacked", probe([=] { return fp_forward(fp_forward(c0, s1, f1), s2, f2).feats; }, rng),
             ps, 32);
  }
  for (AttnMode am : {AttnMode::kMultiply, AttnMode::kSubtract})
    for (CombineMode cm : {CombineMode::kSubtract, CombineMode::kAdd, CombineMode::kConcat}) {
      Tensor fr = leaf({7, 5}, rng), fp = leaf({4, 6}, rng);
      PftStage st = PftStage::init(5, 6, 4, 7, 4, 6, cm, am, rng);
      ParamList ps{{"f_raw", fr}, {"f_pseu", fp}};
      st.collect("pft", ps);
      add_case(out, s, "pft_" + std::string(attn_mode_name(am)) + "_" + std::string(combine_mode_name(cm)),
               probe(
                   [=] {
                     const PftOutput o = pft_forward(fr, fp, st);
                     return concat_cols({reshape(o.raw, {1, 7 * 4}), reshape(o.pseu, {1, 4 * 4})});
                   },
                   rng),
               ps, 32);
    }
  {
    // image encoder -> frustum -> trilinear pseudo-point features
    ImageEncoderConfig ec;
    ec.block_strides = {2, 1};
    ec.block_channels = {4, 4};
    ec.feature_channels = 3;
    ec.depth_bins = 6;
    ImageEncoder enc = ImageEncoder::init(ec, rng);
    Image img(8, 8);
    for (double& v : img.pixels) v = rng.uniform();
    PseudoRouting routing;
    for (int i = 0; i < 5; ++i) {
      routing.pixel_uv.push_back({rng.uniform(0.0, 7.0), rng.uniform(0.0, 7.0)});
      routing.bin_coord.push_back(rng.uniform(0.0, 5.0));
    }
    ParamList ps;
    enc.collect("image", ps);
    add_case(out, s, "image_frustum_sample",
             probe(
                 [=] {
                   const ImageHeads h = encode_image(img, enc);
                   return sample_frustum(build_frustum(h.features, h.depth), routing, h.features.stride);
                 },
                 rng),
             ps, 32);
  }
  {
    DepthPrediction dp{leaf({12, 5}, rng, 2.0), Tensor(), 3, 4};
    Tensor raw_res = leaf({12, 5}, rng, 2.0);
    DepthTargets t;
    for (int i = 0; i < 9; ++i) {
      t.pixels.push_back({rng.uniform(0.0, 7.0), rng.uniform(0.0, 5.0)});
      t.gt_bin.push_back(rng.below(5));
      t.gt_res.push_back(rng.uniform());
    }
    const LossWeights w;
    add_case(out, s, "depth_loss",
             [=] {
               DepthPrediction d = dp;
               d.residuals = sigmoid(raw_res);
               return depth_loss(d, t, 2, w).total;
             },
             {{"bin_logits", dp.bin_logits}, {"residual_logits", raw_res}});
  }
  {
    const auto coords = random_coords(20, rng, 6.0);
    Tensor feats = leaf({20, 6}, rng);
    RpnHead head = RpnHead::init(6, 8, kNumClasses, rng);
    const std::vector<Box3D> gts{{2.0, 2.0, 2.0, 3.9, 2.5, 3.0, 0.4}};
    const std::vector<ObjectClass> cls{ObjectClass::kCar};
    const RpnTargets targets = build_rpn_targets(rpn_forward(feats, coords, head), gts, cls, AnchorSizes{});
    ParamList ps{{"feats", feats}};
    head.collect("rpn", ps);
    const LossWeights w;
    add_case(out, s, "rpn_loss", [=] { return rpn_loss(rpn_forward(feats, coords, head), targets, w).total; }, ps,
             32);
  }
}

void network_cases(std::vector<GradcheckCase>& out, Rng& rng) {
  const PipelineConfig mini = miniature_config();
  {
    const NetworkConfig& nc = mini.net;
    PointSet raw{random_coords(nc.raw_points, rng), leaf({nc.raw_points, nc.raw_in_channels}, rng)};
    PointSet ppc{random_coords(nc.ppc_points, rng), leaf({nc.ppc_points, nc.ppc_in_channels}, rng)};
    TwoStreamNet net = TwoStreamNet::init(nc, rng);
    ParamList ps{{"raw_feats", raw.feats}, {"ppc_feats", ppc.feats}};
    net.collect("net", ps);
    add_case(out, "network", "two_stream_mini", probe([=] { return two_stream_forward(raw, ppc, net, nc); }, rng), ps,
             12);
  }
  {
    Rng scene_rng(mini.seed ^ 0x5EEDULL);
    auto scene = std::make_shared<PreparedScene>(prepare_scene(generate_scene(mini.scene), mini, scene_rng));
    auto det = std::make_shared<Detector>(Detector::init(mini));
    const ForwardResult f0 = detector_forward(*det, *scene);
    auto routing = std::make_shared<PseudoRouting>(f0.routing);
    auto targets = std::make_shared<RpnTargets>(
        build_rpn_targets(f0.rpn, scene->gt_boxes, scene->gt_classes, mini.anchors));
    add_case(out, "network", "detector_total_loss",
             [=] {
               const ForwardResult f = detector_forward(*det, *scene, routing.get());
               return detector_loss(*det, *scene, f, targets.get()).total;
             },
             det->params(), 8);
  }
}

}  // namespace

PipelineConfig miniature_config() {
  PipelineConfig c = PipelineConfig::desk();
  c.net.raw_points = 32;
  c.net.raw_stages = {16, 8};
  c.net.ppc_points = 16;
  c.net.ppc_stages = {8, 4};
  c.net.channels = {8, 8};
  c.net.l_group = 4;
  c.net.fp_width = 8;
  c.net.fusion_width = 8;
  c.net.pft_score_hidden = 8;
  c.net.pft_links = {true, true};
  c.image.block_strides = {2, 2};
  c.image.block_channels = {4, 4};
  c.image.feature_channels = 6;
  c.net.ppc_in_channels = 6;
  c.image.depth_bins = 8;
  c.foreground_points = 48;
  c.rpn_hidden = 8;
  c.scene.image_width = 32;
  c.scene.image_height = 16;
  c.scene.focal = 18.6;
  c.scene.boxes = {1, 0, 0};
  c.scene.surface_density = 4.0;
  c.scene.clutter_points = 120;
  c.scene.x_range_min = 8.0;
  c.scene.x_range_max = 16.0;
  return c;
}

std::vector<GradcheckCase> gradcheck_cases(std::string_view scope, std::uint64_t seed) {
  if (scope != "op" && scope != "stage" && scope != "network" && scope != "all")
    throw ConfigError("unknown gradcheck scope '" + std::string(scope) + "' (expected op|stage|network|all)");
  std::vector<GradcheckCase> out;
  Rng rng(seed);
  if (scope == "op" || scope == "all") op_cases(out, rng);
  if (scope == "stage" || scope == "all") stage_cases(out, rng);
  if (scope == "network" || scope == "all") network_cases(out, rng);
  return out;
}

std::vector<GradcheckRow> run_gradcheck_case(const GradcheckCase& c, double tolerance) {
  std::vector<GradcheckRow> rows;
  for (const GradcheckResult& r : gradcheck(c.loss, c.params, c.options)) {
    GradcheckRow row;
    row.scope = c.scope;
    row.case_name = c.name;
    row.group = r.group;
    row.checked = r.checked;
    row.max_abs_err = r.max_abs_err;
    row.max_rel_err = r.max_rel_err;
    row.pass = r.max_rel_err < tolerance;
    rows.push_back(row);
  }
  return rows;
}

// ---- invariant checks -----------------------------------------------------------

namespace {

using CheckFn = std::function<std::string()>;  // empty string = pass

std::string fail_if(bool bad, const std::string& what) { return bad ? what : std::string(); }

std::string fmt(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

std::vector<std::pair<std::pair<std::string, std::string>, CheckFn>> builtin_checks(std::uint64_t seed) {
  std::vector<std::pair<std::pair<std::string, std::string>, CheckFn>> checks;
  auto add = [&](std::string module, std::string name, CheckFn fn) {
    checks.push_back({{std::move(module), std::move(name)}, std::move(fn)});
  };

  add("tensor-autodiff", "op_gradients", [seed] {
    for (const auto& c : gradcheck_cases("op", seed))
      for (const auto& r : run_gradcheck_case(c))
        if (!r.pass) return c.name + "/" + r.group + " rel err " + fmt(r.max_rel_err);
    return std::string();
  });
  add("tensor-autodiff", "non_finite_guard", [] {
    try {
      log(Tensor::from({1}, {-1.0}));
    } catch (const NumericError&) {
      return std::string();
    }
    return std::string("log(-1) did not raise");
  });
  add("tensor-autodiff", "checkpoint_round_trip", [seed] {
    Rng rng(seed);
    Linear l = Linear::init(3, 4, rng);
    ParamList ps;
    l.collect("l", ps);
    const auto path = std::filesystem::temp_directory_path() / ("ptadet_check_" + std::to_string(seed) + ".ckpt");
    save_checkpoint(path, ps);
    const auto loaded = read_checkpoint(path);
    std::filesystem::remove(path);
    for (const auto& [name, t] : ps)
      if (!loaded.contains(name) || !std::ranges::equal(loaded.at(name).data(), t.data())) return "mismatch in " + name;
    return std::string();
  });
  add("geometry", "fps_distinct_and_maxmin", [seed] {
    Rng rng(seed + 1);
    const auto pts = random_coords(64, rng, 10.0);
    const auto idx = farthest_point_sampling(pts, 16);
    std::vector<std::size_t> sorted = idx;
    std::ranges::sort(sorted);
    return fail_if(std::ranges::adjacent_find(sorted) != sorted.end() || idx[0] != 0, "fps returned duplicates");
  });
  add("geometry", "lid_round_trip", [seed] {
    Rng rng(seed + 2);
    const LidBinning b;
    for (int i = 0; i < 1000; ++i) {
      const double d = rng.uniform(0.0, 70.39);
      const auto e = b.encode(d);
      if (std::abs(b.decode(e.bin, e.residual) - d) > 1e-9) return "depth " + fmt(d);
    }
    return std::string();
  });
  add("geometry", "calibration_round_trip", [] {
    const Calibration c = synthetic_calibration({});
    for (double x : {5.0, 20.0, 60.0}) {
      const Vec3 p(x, 1.5, -0.7);
      if ((c.camera_to_lidar(c.lidar_to_camera(p)) - p).norm() > 1e-9) return std::string("lidar/camera mismatch");
      const ImagePoint ip = c.project_lidar(p);
      if ((c.camera_to_lidar(c.lift_from_image(ip.u, ip.v, ip.depth)) - p).norm() > 1e-9)
        return std::string("lift/project mismatch");
    }
    return std::string();
  });
  add("geometry", "idw_partition_of_unity", [seed] {
    Rng rng(seed + 3);
    const auto src = random_coords(10, rng), dst = random_coords(20, rng);
    const IdwStencil st = idw_stencil(dst, src);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      double s = 0;
      for (std::size_t k = 0; k < st.k; ++k) s += st.weights[i * st.k + k];
      if (std::abs(s - 1.0) > 1e-12) return "weights sum to " + fmt(s);
    }
    return std::string();
  });
  add("frustum-lift", "depth_marginal_recovers_features", [seed] {
    Rng rng(seed + 4);
    const std::size_t cells = 6, d = 5, c = 3;
    ImageFeatureGrid fi{Tensor::uniform({cells, c}, 1.0, rng), 2, 3, 1};
    DepthPrediction dp{Tensor::uniform({cells, d}, 3.0, rng), Tensor::full({cells, d}, 0.5), 2, 3};
    const FrustumGrid ft = build_frustum(fi, dp);
    const Tensor marg = sum_axis(reshape(ft.feats, {cells, d, c}), 1);
    for (std::size_t i = 0; i < cells * c; ++i)
      if (std::abs(marg[i] - fi.feats[i]) > 1e-6) return std::string("marginal differs");
    return std::string();
  });
  add("fusion-net", "attention_rows_sum_to_one", [seed] {
    Rng rng(seed + 5);
    PftStage st = PftStage::init(4, 5, 3, 6, 4, 5, CombineMode::kSubtract, AttnMode::kMultiply, rng);
    const PftOutput o = pft_forward(Tensor::uniform({6, 4}, 1.0, rng), Tensor::uniform({4, 5}, 1.0, rng), st);
    for (const Tensor* a : {&o.attn_raw, &o.attn_pseu}) {
      const std::size_t rows = a->dim(0), cols = a->dim(1);
      for (std::size_t r = 0; r < rows; ++r) {
        double s = 0;
        for (std::size_t k = 0; k < cols; ++k) s += (*a)[r * cols + k];
        if (std::abs(s - 1.0) > 1e-6) return "row sum " + fmt(s);
      }
    }
    return std::string();
  });
  add("fusion-net", "neighborhood_permutation_invariance", [seed] {
    Rng rng(seed + 6);
    const auto coords = random_coords(10, rng);
    const Tensor f = Tensor::uniform({10, 4}, 1.0, rng);
    const AttentionBlock blk = AttentionBlock::init(4, 4, AttnMode::kSubtract, rng);
    const KnnResult knn = knn_group(coords, coords, 4);
    std::vector<std::size_t> perm = knn.indices;
    for (std::size_t r = 0; r < 10; ++r) std::reverse(perm.begin() + r * 4, perm.begin() + r * 4 + 4);
    const Tensor a = attention_forward(coords, f, knn.indices, 4, blk);
    const Tensor b = attention_forward(coords, f, perm, 4, blk);
    return fail_if(!std::ranges::equal(a.data(), b.data()), "outputs differ after reordering neighbors");
  });
  add("losses", "focal_and_smooth_l1_values", [] {
    const double f = focal_loss(0.9, true, 0.25, 2.0).loss;
    if (std::abs(f - 0.25 * 0.01 * -std::log(0.9)) > 1e-15) return "focal " + fmt(f);
    if (smooth_l1(1.0) != 0.5 || smooth_l1(2.0) != 1.5 || smooth_l1(0.0) != 0.0) return std::string("smooth_l1");
    return std::string();
  });
  add("detect-eval", "iou_identities", [] {
    const Box3D a{0, 0, 0, 1, 1, 1, 0}, b{0.5, 0, 0, 1, 1, 1, 0};
    if (std::abs(iou_3d(a, b) - 1.0 / 3.0) > 1e-12) return "offset cubes " + fmt(iou_3d(a, b));
    if (std::abs(iou_bev(a, a) - 1.0) > 1e-12) return std::string("self IoU != 1");
    const Box3D far{10, 10, 0, 1, 1, 1, 0.3};
    return fail_if(iou_bev(a, far) != 0.0, "disjoint IoU != 0");
  });
  add("detect-eval", "ap_worked_example", [] {
    const Box3D g1{5, 0, 0, 4, 2, 1.5, 0}, g2{15, 5, 0, 4, 2, 1.5, 0}, miss{30, -5, 0, 4, 2, 1.5, 0};
    FrameEval f;
    f.gts = {{g1, ObjectClass::kCar}, {g2, ObjectClass::kCar}};
    f.dets = {{g1, 0.9, ObjectClass::kCar}, {miss, 0.8, ObjectClass::kCar}, {g2, 0.7, ObjectClass::kCar}};
    const ApResult r = average_precision_40(std::span(&f, 1), ObjectClass::kCar, 0.7);
    return fail_if(std::abs(r.ap - 5.0 / 6.0) > 1e-9, "AP " + fmt(r.ap));
  });
  add("kitti-io", "scene_determinism_and_masks", [seed] {
    SyntheticSceneSpec spec;
    spec.seed = seed;
    const SceneSample a = generate_scene(spec), b = generate_scene(spec);
    if (a.points.coords != b.points.coords || a.image.pixels != b.image.pixels) return std::string("nondeterministic");
    std::vector<Box3D> boxes;
    for (const auto& g : a.gts) boxes.push_back(g.box);
    const Mask m = rasterize_boxes(boxes, a.calib, a.image.height, a.image.width);
    return fail_if(m.bits != a.mask.bits, "mask differs from rasterized boxes");
  });
  add("kitti-io", "format_round_trips", [] {
    const Calibration c = synthetic_calibration({});
    const Calibration c2 = parse_calib(serialize_calib(c));
    if (!c2.p2().isApprox(c.p2(), 0.0) || !c2.tr_velo_to_cam().isApprox(c.tr_velo_to_cam(), 0.0))
      return std::string("calib");
    PointSet ps{{Vec3(1, 2, 3), Vec3(-4, 5.5, 0.25)}, Tensor::from({2, 1}, {0.5, 0.25})};
    const PointSet back = read_velodyne(write_velodyne(ps));
    return fail_if(back.coords != ps.coords, "velodyne");
  });
  return checks;
}

}  // namespace

std::vector<CheckResult> run_checks(const CheckOptions& options) {
  std::vector<CheckResult> out;
  for (const auto& [id, fn] : builtin_checks(options.seed)) {
    CheckResult r{id.first, id.second, false, ""};
    try {
      r.detail = fn();
      r.pass = r.detail.empty();
    } catch (const std::exception& e) {
      r.detail = std::string("exception: ") + e.what();
    }
    out.push_back(r);
  }
  if (!options.checkpoint.empty()) {
    CheckResult r{"cli", "checkpoint_load", false, ""};
    try {
      const Detector det = Detector::init(options.config);
      load_checkpoint(options.checkpoint, det.params());
      r.pass = true;
    } catch (const std::exception& e) {
      r.detail = e.what();
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace ptadet
