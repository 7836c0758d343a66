#include "ptadet/frustum.hpp"

#include <algorithm>
#include <cmath>

#include "ptadet/errors.hpp"

namespace ptadet {

// ---- image encoder ----------------------------------------------------------

ImageEncoder ImageEncoder::init(const ImageEncoderConfig& cfg, Rng& rng) {
  if (cfg.block_strides.empty() || cfg.block_strides.size() != cfg.block_channels.size())
    throw ConfigError("image encoder: block_strides and block_channels must be non-empty and equal length");
  ImageEncoder enc;
  enc.config = cfg;
  std::size_t c_in = 3;
  for (std::size_t i = 0; i < cfg.block_strides.size(); ++i) {
    const std::size_t s = cfg.block_strides[i];
    if (s == 0) throw ConfigError("image encoder: stride must be >= 1");
    enc.blocks.push_back(Linear::init(c_in * s * s, cfg.block_channels[i], rng));
    c_in = cfg.block_channels[i];
  }
  enc.feature_head = Linear::init(c_in, cfg.feature_channels, rng);
  enc.depth_head = Linear::init(c_in, cfg.depth_bins, rng);
  enc.residual_head = Linear::init(c_in, cfg.depth_bins, rng);
  enc.offset_head = Linear::init(c_in, 2, rng);
  return enc;
}

std::size_t ImageEncoder::stride() const {
  std::size_t s = 1;
  for (std::size_t b : config.block_strides) s *= b;
  return s;
}

void ImageEncoder::zero_heads() {
  for (Linear* head : {&feature_head, &depth_head, &residual_head, &offset_head}) {
    std::ranges::fill(head->weight.mutable_data(), 0.0);
    std::ranges::fill(head->bias.mutable_data(), 0.0);
  }
}

void ImageEncoder::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
  feature_head.collect(prefix + ".feature_head", out);
  depth_head.collect(prefix + ".depth_head", out);
  residual_head.collect(prefix + ".residual_head", out);
  offset_head.collect(prefix + ".offset_head", out);
}

Tensor space_to_depth(const Tensor& x, std::size_t height, std::size_t width, std::size_t stride) {
  if (height % stride != 0 || width % stride != 0) throw ConfigError("space_to_depth: extents not divisible by stride");
  if (x.rank() != 2 || x.dim(0) != height * width) throw DimensionError("space_to_depth: expected [H·W × C] input");
  const std::size_t oh = height / stride, ow = width / stride;
  std::vector<std::size_t> rows;
  rows.reserve(height * width);
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c)
      for (std::size_t dy = 0; dy < stride; ++dy)
        for (std::size_t dx = 0; dx < stride; ++dx) rows.push_back((r * stride + dy) * width + c * stride + dx);
  return reshape(gather_rows(x, rows), {oh * ow, stride * stride * x.dim(1)});
}

ImageHeads encode_image(const Image& image, const ImageEncoder& encoder) {
  const std::size_t s = encoder.stride();
  if (image.height == 0 || image.width == 0 || image.height % s != 0 || image.width % s != 0)
    throw ConfigError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                      " is not divisible by encoder stride " + std::to_string(s));
  std::size_t h = image.height, w = image.width;
  Tensor x = Tensor::from({h * w, 3}, image.pixels);
  for (std::size_t i = 0; i < encoder.blocks.size(); ++i) {
    const std::size_t bs = encoder.config.block_strides[i];
    if (bs > 1) {
      x = space_to_depth(x, h, w, bs);
      h /= bs;
      w /= bs;
    }
    x = relu(linear(x, encoder.blocks[i]));
  }
  ImageHeads out;
  out.features = {linear(x, encoder.feature_head), h, w, s};
  out.depth = {linear(x, encoder.depth_head), sigmoid(linear(x, encoder.residual_head)), h, w};
  out.offsets = {linear(x, encoder.offset_head), h, w, s};
  return out;
}

// ---- frustum ----------------------------------------------------------------

FrustumGrid build_frustum(const ImageFeatureGrid& fi, const DepthPrediction& dp) {
  if (fi.height != dp.height || fi.width != dp.width || fi.feats.dim(0) != dp.bin_logits.dim(0))
    throw DimensionError("build_frustum: feature grid and depth prediction disagree on H_F×W_F");
  const std::size_t cells = fi.feats.dim(0), d = dp.bin_logits.dim(1), c = fi.feats.dim(1);
  Tensor weights = softmax(dp.bin_logits, 1);
  return {reshape(outer_rows(weights, fi.feats), {cells * d, c}), fi.height, fi.width, d};
}

// ---- foreground selection ---------------------------------------------------

ForegroundSelection select_foreground(const PointSet& points, const Mask& mask, const Calibration& calib,
                                      std::size_t n, Rng& rng) {
  if (n > points.size())
    throw ArgumentError("select_foreground: n=" + std::to_string(n) + " exceeds " + std::to_string(points.size()) +
                        " points");
  std::vector<std::size_t> fg, bg;
  bool any_inside = false;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 cam = calib.lidar_to_camera(points.coords[i]);
    bool hit = false;
    const Eigen::Vector3d h = calib.p2() * cam.homogeneous();
    if (h.z() > 0.0) {
      const double col = std::floor(h.x() / h.z() + 0.5), row = std::floor(h.y() / h.z() + 0.5);
      if (col >= 0 && row >= 0 && col < static_cast<double>(mask.width) && row < static_cast<double>(mask.height)) {
        any_inside = true;
        hit = mask.at(static_cast<std::size_t>(row), static_cast<std::size_t>(col));
      }
    }
    (hit ? fg : bg).push_back(i);
  }
  if (!any_inside) throw EmptyForegroundError("select_foreground: no point projects inside the image");

  ForegroundSelection sel;
  sel.total_foreground = fg.size();
  if (fg.size() >= n) {
    sel.indices.assign(fg.begin(), fg.begin() + static_cast<std::ptrdiff_t>(n));
    sel.foreground_count = n;
    return sel;
  }
  sel.indices = fg;
  sel.foreground_count = fg.size();
  rng.shuffle(bg);
  sel.indices.insert(sel.indices.end(), bg.begin(), bg.begin() + static_cast<std::ptrdiff_t>(n - fg.size()));
  return sel;
}

// ---- pseudo points ----------------------------------------------------------

std::vector<std::array<double, 2>> sample_keypoint_offsets(const OffsetGrid& og,
                                                           std::span<const std::array<double, 2>> pixels) {
  std::vector<std::array<double, 2>> out;
  out.reserve(pixels.size());
  auto data = og.offsets.data();
  for (const auto& px : pixels) {
    const Sample s = bilinear_sample(data, og.height, og.width, 2, pixel_to_grid(px[0], og.stride),
                                     pixel_to_grid(px[1], og.stride));
    out.push_back({s.values[0], s.values[1]});
  }
  return out;
}

PseudoRouting route_pseudo_points(const PointSet& points, std::span<const std::size_t> foreground,
                                  const Calibration& calib, const DepthPrediction& dp, const OffsetGrid& og,
                                  const LidBinning& binning, const PseudoPointOptions& options) {
  if (options.count > foreground.size())
    throw ContractError("generate_pseudo_points: m=" + std::to_string(options.count) + " exceeds " +
                        std::to_string(foreground.size()) + " foreground points");
  if (dp.bin_logits.dim(1) != binning.bins()) throw DimensionError("depth head width does not match bin count");
  if (options.image_width == 0 || options.image_height == 0) throw ArgumentError("pseudo points need image extents");

  std::vector<Vec3> fg_coords;
  fg_coords.reserve(foreground.size());
  for (std::size_t i : foreground) fg_coords.push_back(points.coords.at(i));
  const auto picked = farthest_point_sampling(fg_coords, options.count, 0);

  PseudoRouting r;
  std::vector<std::array<double, 2>> pixels;
  for (std::size_t j : picked) {
    r.source_indices.push_back(foreground[j]);
    const ImagePoint ip = calib.project_lidar(fg_coords[j]);
    pixels.push_back({ip.u, ip.v});
  }
  if (options.mode == SamplingMode::kKeypoint) {
    const auto offsets = sample_keypoint_offsets(og, pixels);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      pixels[i][0] += offsets[i][0];
      pixels[i][1] += offsets[i][1];
    }
  }

  const double max_u = static_cast<double>(options.image_width - 1);
  const double max_v = static_cast<double>(options.image_height - 1);
  const std::size_t d = binning.bins();
  auto logits = dp.bin_logits.data();
  auto residuals = dp.residuals.data();
  for (auto& px : pixels) {
    // round-off at the border is not counted as a clamp
    constexpr double kTol = 1e-9;
    if (px[0] < -kTol || px[0] > max_u + kTol || px[1] < -kTol || px[1] > max_v + kTol) ++r.clamped;
    px[0] = std::clamp(px[0], 0.0, max_u);
    px[1] = std::clamp(px[1], 0.0, max_v);
    const auto col = static_cast<std::size_t>(std::clamp(std::lround(pixel_to_grid(px[0], og.stride)), 0L,
                                                         static_cast<long>(dp.width) - 1));
    const auto row = static_cast<std::size_t>(std::clamp(std::lround(pixel_to_grid(px[1], og.stride)), 0L,
                                                         static_cast<long>(dp.height) - 1));
    const std::size_t cell = row * dp.width + col;
    const double* row_logits = &logits[cell * d];
    const auto bin = static_cast<std::size_t>(std::max_element(row_logits, row_logits + d) - row_logits);
    const double depth = binning.decode(bin, residuals[cell * d + bin]);
    r.pixel_uv.push_back(px);
    r.depth.push_back(depth);
    r.bin_coord.push_back(binning.bin_coordinate(depth));
    r.coords.push_back(calib.camera_to_lidar(calib.lift_from_image(px[0], px[1], depth)));
  }
  return r;
}

Tensor sample_frustum(const FrustumGrid& ft, const PseudoRouting& routing, std::size_t stride) {
  std::vector<std::size_t> idx;
  std::vector<double> w;
  idx.reserve(routing.pixel_uv.size() * 8);
  w.reserve(routing.pixel_uv.size() * 8);
  for (std::size_t i = 0; i < routing.pixel_uv.size(); ++i) {
    const auto st = trilinear_stencil(ft.height, ft.width, ft.depth, pixel_to_grid(routing.pixel_uv[i][0], stride),
                                      pixel_to_grid(routing.pixel_uv[i][1], stride), routing.bin_coord[i]);
    idx.insert(idx.end(), st.index.begin(), st.index.end());
    w.insert(w.end(), st.weight.begin(), st.weight.end());
  }
  return weighted_gather(ft.feats, idx, w, 8);
}

PseudoPointSet generate_pseudo_points(const PointSet& points, std::span<const std::size_t> foreground,
                                      const Calibration& calib, const ImageHeads& heads, const FrustumGrid& ft,
                                      const LidBinning& binning, const PseudoPointOptions& options) {
  PseudoRouting r = route_pseudo_points(points, foreground, calib, heads.depth, heads.offsets, binning, options);
  PseudoPointSet out;
  out.feats = sample_frustum(ft, r, heads.features.stride);
  out.coords = std::move(r.coords);
  out.pixel_uv = std::move(r.pixel_uv);
  out.source_depth = std::move(r.depth);
  out.source_indices = std::move(r.source_indices);
  out.clamped = r.clamped;
  return out;
}

}  // namespace ptadet
