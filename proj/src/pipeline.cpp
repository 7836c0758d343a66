#include "ptadet/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

#include "ptadet/errors.hpp"

namespace ptadet {

// ---- presets ------------------------------------------------------------------

PipelineConfig PipelineConfig::paper() {
  PipelineConfig c;
  c.scene.image_width = 1248;
  c.scene.image_height = 376;
  c.scene.focal = 721.5377;
  c.scene.clutter_points = 14000;
  c.scene.surface_density = 40.0;
  c.foreground_points = 4096;
  return c;
}

PipelineConfig PipelineConfig::desk() {
  PipelineConfig c;
  c.net.raw_points = 256;
  c.net.raw_stages = {128, 64, 32, 16};
  c.net.ppc_points = 64;
  c.net.ppc_stages = {32, 16, 8, 4};
  c.net.channels = {16, 16, 32, 32};
  c.net.l_group = 8;
  c.net.fp_width = 16;
  c.net.fusion_width = 32;
  c.net.pft_score_hidden = 16;
  c.foreground_points = 1024;
  c.scene.surface_density = 16.0;
  return c;
}

void PipelineConfig::validate() const {
  net.validate();
  loss.validate();
  if (net.raw_in_channels != 4) throw ConfigError("net.raw_in_channels is fixed at 4 (x, y, z, intensity)");
  if (net.ppc_in_channels != image.feature_channels)
    throw ConfigError("image.feature_channels must equal the pseudo-point input width");
  if (image.block_strides.empty() || image.block_strides.size() != image.block_channels.size())
    throw ConfigError("image.block_strides and image.block_channels must be non-empty and of equal length");
  if (image.depth_bins == 0) throw ConfigError("image.depth_bins must be positive");
  if (!(depth_max > depth_min) || depth_min < 0.0) throw ConfigError("depth range must satisfy 0 <= min < max");
  if (foreground_points < net.raw_points || foreground_points < net.ppc_points)
    throw ConfigError("select.foreground_points must cover both branch inputs");
  std::size_t stride = 1;
  for (std::size_t s : image.block_strides) stride *= s;
  if (stride == 0 || scene.image_width % stride != 0 || scene.image_height % stride != 0)
    throw ConfigError("scene image size must be divisible by the encoder stride " + std::to_string(stride));
  for (double t : {score_threshold, nms_train, nms_test})
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("thresholds must lie in [0, 1]");
  if (rpn_hidden == 0) throw ConfigError("rpn.hidden must be positive");
  if (scenes == 0) throw ConfigError("train.scenes must be >= 1");
  if (!(adam.lr >= 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
      !(adam.eps > 0.0) || !(adam.weight_decay >= 0.0))
    throw ConfigError("invalid optimizer settings");
}

// ---- key = value codec ----------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  v = trim(v);
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError("config key '" + std::string(key) + "': expected a number, got '" + std::string(v) + "'");
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  v = trim(v);
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw ConfigError("config key '" + std::string(key) + "': expected a non-negative integer, got '" +
                      std::string(v) + "'");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  v = trim(v);
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true|false, got '" + std::string(v) + "'");
}

std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  v = trim(v);
  if (v.empty()) return out;
  while (true) {
    const auto comma = v.find(',', pos);
    out.push_back(trim(v.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::vector<std::size_t> to_sizes(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  for (auto t : split_list(v)) out.push_back(static_cast<std::size_t>(to_u64(key, t)));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_same_v<T, bool>)
      s += xs[i] ? "1" : "0";
    else
      s += std::to_string(xs[i]);
  }
  return s;
}

struct KeyDef {
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, std::string_view key, std::string_view)> set;
};

using Registry = std::vector<std::pair<std::string, KeyDef>>;

#define PTADET_SIZE_KEY(name, field)                                                                \
  {name, {[](const PipelineConfig& c) { return std::to_string(c.field); },                           \
          [](PipelineConfig& c, std::string_view k, std::string_view v) {                            \
            c.field = static_cast<std::size_t>(to_u64(k, v));                                        \
          }}}
#define PTADET_DOUBLE_KEY(name, field)                                                              \
  {name, {[](const PipelineConfig& c) { return fmt_double(c.field); },                               \
          [](PipelineConfig& c, std::string_view k, std::string_view v) { c.field = to_double(k, v); }}}
#define PTADET_SIZES_KEY(name, field)                                                               \
  {name, {[](const PipelineConfig& c) { return join(c.field); },                                     \
          [](PipelineConfig& c, std::string_view k, std::string_view v) { c.field = to_sizes(k, v); }}}

std::string sampling_name(SamplingMode m) { return m == SamplingMode::kKeypoint ? "kps" : "fps"; }

const Registry& registry() {
  static const Registry reg = [] {
    Registry r{
        {"seed", {[](const PipelineConfig& c) { return std::to_string(c.seed); },
                  [](PipelineConfig& c, std::string_view k, std::string_view v) { c.seed = to_u64(k, v); }}},
        PTADET_SIZE_KEY("net.raw_points", net.raw_points),
        PTADET_SIZES_KEY("net.raw_stages", net.raw_stages),
        PTADET_SIZE_KEY("net.ppc_points", net.ppc_points),
        PTADET_SIZES_KEY("net.ppc_stages", net.ppc_stages),
        PTADET_SIZES_KEY("net.channels", net.channels),
        PTADET_SIZE_KEY("net.l_group", net.l_group),
        PTADET_SIZE_KEY("net.fp_width", net.fp_width),
        PTADET_SIZE_KEY("net.fusion_width", net.fusion_width),
        PTADET_SIZE_KEY("net.pft_score_hidden", net.pft_score_hidden),
        {"net.pft_links",
         {[](const PipelineConfig& c) { return join(c.net.pft_links); },
          [](PipelineConfig& c, std::string_view k, std::string_view v) {
            c.net.pft_links.clear();
            for (auto t : split_list(v)) c.net.pft_links.push_back(to_bool(k, t));
          }}},
        {"net.final_fusion",
         {[](const PipelineConfig& c) { return std::string(c.net.final_fusion ? "true" : "false"); },
          [](PipelineConfig& c, std::string_view k, std::string_view v) { c.net.final_fusion = to_bool(k, v); }}},
        {"net.combine",
         {[](const PipelineConfig& c) { return std::string(combine_mode_name(c.net.combine)); },
          [](PipelineConfig& c, std::string_view, std::string_view v) { c.net.combine = parse_combine_mode(trim(v)); }}},
        {"net.attn_ptd",
         {[](const PipelineConfig& c) { return std::string(attn_mode_name(c.net.ptd_attn)); },
          [](PipelineConfig& c, std::string_view, std::string_view v) { c.net.ptd_attn = parse_attn_mode(trim(v)); }}},
        {"net.attn_ptu",
         {[](const PipelineConfig& c) { return std::string(attn_mode_name(c.net.ptu_attn)); },
          [](PipelineConfig& c, std::string_view, std::string_view v) { c.net.ptu_attn = parse_attn_mode(trim(v)); }}},
        {"net.attn_pft",
         {[](const PipelineConfig& c) { return std::string(attn_mode_name(c.net.pft_attn)); },
          [](PipelineConfig& c, std::string_view, std::string_view v) { c.net.pft_attn = parse_attn_mode(trim(v)); }}},
        {"net.sampling",
         {[](const PipelineConfig& c) { return sampling_name(c.sampling); },
          [](PipelineConfig& c, std::string_view k, std::string_view v) {
            v = trim(v);
            if (v == "kps")
              c.sampling = SamplingMode::kKeypoint;
            else if (v == "fps")
              c.sampling = SamplingMode::kFarthestPoint;
            else
              throw ConfigError("config key '" + std::string(k) + "': expected kps|fps");
          }}},
        PTADET_SIZES_KEY("image.block_strides", image.block_strides),
        PTADET_SIZES_KEY("image.block_channels", image.block_channels),
        {"image.feature_channels",
         {[](const PipelineConfig& c) { return std::to_string(c.image.feature_channels); },
          [](PipelineConfig& c, std::string_view k, std::string_view v) {
            c.image.feature_channels = c.net.ppc_in_channels = static_cast<std::size_t>(to_u64(k, v));
          }}},
        PTADET_SIZE_KEY("image.depth_bins", image.depth_bins),
        PTADET_DOUBLE_KEY("depth.min", depth_min),
        PTADET_DOUBLE_KEY("depth.max", depth_max),
        PTADET_SIZE_KEY("select.foreground_points", foreground_points),
        PTADET_SIZE_KEY("rpn.hidden", rpn_hidden),
        PTADET_DOUBLE_KEY("rpn.score_threshold", score_threshold),
        PTADET_DOUBLE_KEY("rpn.nms_train", nms_train),
        PTADET_DOUBLE_KEY("rpn.nms_test", nms_test),
        PTADET_DOUBLE_KEY("loss.depth", loss.depth),
        PTADET_DOUBLE_KEY("loss.rpn", loss.rpn),
        PTADET_DOUBLE_KEY("loss.rcnn", loss.rcnn),
        PTADET_DOUBLE_KEY("loss.lambda1", loss.lambda1),
        PTADET_DOUBLE_KEY("loss.lambda2", loss.lambda2),
        PTADET_DOUBLE_KEY("loss.vote", loss.vote),
        PTADET_DOUBLE_KEY("loss.focal_alpha", loss.focal_alpha),
        PTADET_DOUBLE_KEY("loss.focal_gamma", loss.focal_gamma),
        PTADET_DOUBLE_KEY("loss.foreground_depth", loss.foreground_depth),
        PTADET_SIZE_KEY("train.steps", steps),
        PTADET_SIZE_KEY("train.scenes", scenes),
        PTADET_DOUBLE_KEY("train.lr", adam.lr),
        PTADET_DOUBLE_KEY("train.momentum", adam.beta1),
        PTADET_DOUBLE_KEY("train.beta2", adam.beta2),
        PTADET_DOUBLE_KEY("train.eps", adam.eps),
        PTADET_DOUBLE_KEY("train.weight_decay", adam.weight_decay),
        {"scene.seed", {[](const PipelineConfig& c) { return std::to_string(c.scene.seed); },
                        [](PipelineConfig& c, std::string_view k, std::string_view v) { c.scene.seed = to_u64(k, v); }}},
        PTADET_SIZE_KEY("scene.cars", scene.boxes[0]),
        PTADET_SIZE_KEY("scene.pedestrians", scene.boxes[1]),
        PTADET_SIZE_KEY("scene.cyclists", scene.boxes[2]),
        PTADET_DOUBLE_KEY("scene.surface_density", scene.surface_density),
        PTADET_SIZE_KEY("scene.clutter_points", scene.clutter_points),
        PTADET_SIZE_KEY("scene.image_width", scene.image_width),
        PTADET_SIZE_KEY("scene.image_height", scene.image_height),
        PTADET_DOUBLE_KEY("scene.focal", scene.focal),
        PTADET_DOUBLE_KEY("scene.x_min", scene.x_range_min),
        PTADET_DOUBLE_KEY("scene.x_max", scene.x_range_max),
    };
    return r;
  }();
  return reg;
}

#undef PTADET_SIZE_KEY
#undef PTADET_DOUBLE_KEY
#undef PTADET_SIZES_KEY

const KeyDef& find_key(std::string_view key) {
  for (const auto& [name, def] : registry())
    if (name == key) return def;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [name, def] : registry()) out.push_back(name);
  return out;
}

std::string get_config_value(const PipelineConfig& cfg, std::string_view key) { return find_key(key).get(cfg); }

void set_config_value(PipelineConfig& cfg, std::string_view key, std::string_view value) {
  find_key(trim(key)).set(cfg, trim(key), value);
}

std::string serialize_config(const PipelineConfig& cfg) {
  std::string out;
  for (const auto& [name, def] : registry()) out += name + " = " + def.get(cfg) + "\n";
  return out;
}

PipelineConfig parse_config(std::string_view text, PipelineConfig base) {
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos)
        throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
      set_config_value(base, line.substr(0, eq), line.substr(eq + 1));
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return base;
}

// ---- detector -----------------------------------------------------------------

Detector Detector::init(const PipelineConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Detector d;
  d.cfg = cfg;
  d.encoder = ImageEncoder::init(cfg.image, rng);
  d.net = TwoStreamNet::init(cfg.net, rng);
  d.rpn = RpnHead::init(cfg.net.out_channels(), cfg.rpn_hidden, kNumClasses, rng);
  return d;
}

ParamList Detector::params() const {
  ParamList out;
  encoder.collect("image", out);
  net.collect("net", out);
  rpn.collect("rpn", out);
  return out;
}

PreparedScene prepare_scene(SceneSample scene, const PipelineConfig& cfg, Rng& rng) {
  PreparedScene p;
  p.scene = std::move(scene);
  const SceneSample& s = p.scene;
  if (s.image.height != cfg.scene.image_height || s.image.width != cfg.scene.image_width)
    throw ConfigError("scene image is " + std::to_string(s.image.width) + "x" + std::to_string(s.image.height) +
                      " but the config expects " + std::to_string(cfg.scene.image_width) + "x" +
                      std::to_string(cfg.scene.image_height));
  if (s.points.size() < cfg.foreground_points)
    throw ConfigError("scene has " + std::to_string(s.points.size()) + " points, fewer than select.foreground_points");
  p.selection = select_foreground(s.points, s.mask, s.calib, cfg.foreground_points, rng);

  std::vector<Vec3> selected;
  for (std::size_t i : p.selection.indices) selected.push_back(s.points.coords[i]);
  const auto picked = farthest_point_sampling(selected, cfg.net.raw_points, 0);
  auto intensity = s.points.feats.data();
  std::vector<double> feats;
  for (std::size_t j : picked) {
    const std::size_t i = p.selection.indices[j];
    p.raw_indices.push_back(i);
    const Vec3& c = s.points.coords[i];
    p.raw.coords.push_back(c);
    feats.insert(feats.end(), {c.x(), c.y(), c.z(), intensity[i]});
  }
  p.raw.feats = Tensor::from({picked.size(), 4}, std::move(feats));

  std::vector<Vec3> fg;
  for (std::size_t k = 0; k < p.selection.foreground_count; ++k) fg.push_back(s.points.coords[p.selection.indices[k]]);
  const LidBinning binning = cfg.binning();
  p.depth_targets = make_depth_targets(fg, s.calib, binning, s.image.height, s.image.width);
  if (p.depth_targets.size() == 0)
    p.depth_targets = make_depth_targets(selected, s.calib, binning, s.image.height, s.image.width);
  if (p.depth_targets.size() == 0) throw EmptyForegroundError("scene yields no depth targets inside the image");

  for (const GroundTruth& g : s.gts) {
    p.gt_boxes.push_back(g.box);
    p.gt_classes.push_back(g.cls);
  }
  return p;
}

ForwardResult detector_forward(const Detector& det, const PreparedScene& scene, const PseudoRouting* frozen) {
  const PipelineConfig& cfg = det.cfg;
  ForwardResult f;
  f.heads = encode_image(scene.scene.image, det.encoder);
  f.frustum = build_frustum(f.heads.features, f.heads.depth);
  PseudoPointOptions opts;
  opts.count = cfg.net.ppc_points;
  opts.mode = cfg.sampling;
  opts.image_height = scene.scene.image.height;
  opts.image_width = scene.scene.image.width;
  f.routing = frozen ? *frozen
                     : route_pseudo_points(scene.scene.points, scene.selection.indices, scene.scene.calib,
                                           f.heads.depth, f.heads.offsets, cfg.binning(), opts);
  f.ppc.feats = sample_frustum(f.frustum, f.routing, f.heads.features.stride);
  f.ppc.coords = f.routing.coords;
  f.ppc.pixel_uv = f.routing.pixel_uv;
  f.ppc.source_depth = f.routing.depth;
  f.ppc.source_indices = f.routing.source_indices;
  f.ppc.clamped = f.routing.clamped;
  f.fused = two_stream_forward(scene.raw, f.ppc.as_point_set(), det.net, cfg.net);
  f.rpn = rpn_forward(f.fused, scene.raw.coords, det.rpn);
  return f;
}

LossBreakdown detector_loss(const Detector& det, const PreparedScene& scene, const ForwardResult& fwd,
                            const RpnTargets* frozen_targets) {
  const LossWeights& w = det.cfg.loss;
  const DepthLoss dl = depth_loss(fwd.heads.depth, scene.depth_targets, fwd.heads.features.stride, w);
  const RpnLoss rl =
      rpn_loss(fwd.rpn,
               frozen_targets ? *frozen_targets
                              : build_rpn_targets(fwd.rpn, scene.gt_boxes, scene.gt_classes, det.cfg.anchors),
               w);
  LossBreakdown b;
  b.total = total_loss(dl.total, rl.total, w);
  b.depth_bin = dl.bin.item();
  b.depth_res = dl.res.item();
  b.depth = dl.total.item();
  b.rpn_cls = rl.cls.item();
  b.rpn_reg = rl.reg.item();
  b.rpn_vote = rl.vote.item();
  b.rpn = rl.total.item();
  b.no_foreground = rl.no_foreground;
  return b;
}

std::vector<DetectionResult> detect(const Detector& det, const ForwardResult& fwd, double nms_threshold) {
  const ProposalSet ps = decode_proposals(fwd.rpn, det.cfg.anchors, det.cfg.score_threshold);
  return nms(ps.proposals, nms_threshold);
}

std::vector<TrainRecord> train(Detector& det, std::span<const PreparedScene> scenes, const TrainCallback& on_step) {
  if (scenes.empty()) throw ContractError("train: no scenes");
  const ParamList params = det.params();
  Adam opt(params, det.cfg.adam);
  std::vector<TrainRecord> log;
  const double inv = 1.0 / static_cast<double>(scenes.size());
  for (std::size_t step = 1; step <= det.cfg.steps; ++step) {
    opt.zero_grad();
    TrainRecord rec;
    rec.step = step;
    Tensor total;
    for (const PreparedScene& s : scenes) {
      const ForwardResult f = detector_forward(det, s);
      const LossBreakdown b = detector_loss(det, s, f);
      total = total.defined() ? add(total, b.total) : b.total;
      rec.depth += b.depth * inv;
      rec.depth_bin += b.depth_bin * inv;
      rec.depth_res += b.depth_res * inv;
      rec.rpn += b.rpn * inv;
      rec.rpn_cls += b.rpn_cls * inv;
      rec.rpn_reg += b.rpn_reg * inv;
      rec.rpn_vote += b.rpn_vote * inv;
    }
    total = scale(total, inv);
    rec.total = total.item();
    total.backward();
    opt.step();
    log.push_back(rec);
    if (on_step) on_step(rec);
  }
  return log;
}

std::vector<PreparedScene> make_training_scenes(const PipelineConfig& cfg) {
  std::vector<PreparedScene> out;
  Rng rng(cfg.seed ^ 0x5EEDULL);
  for (std::size_t i = 0; i < cfg.scenes; ++i) {
    SyntheticSceneSpec spec = cfg.scene;
    spec.seed = cfg.scene.seed + i;
    out.push_back(prepare_scene(generate_scene(spec), cfg, rng));
  }
  return out;
}

// ---- hashing --------------------------------------------------------------------

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h) {
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t hash_values(std::span<const double> values) {
  std::uint64_t h = 14695981039346656037ULL;
  for (double v : values) {
    const auto u = std::bit_cast<std::uint64_t>(v);
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(u >> (8 * i));
    h = fnv1a(b, h);
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
  return s;
}

}  // namespace ptadet
