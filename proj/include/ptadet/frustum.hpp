#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "ptadet/geometry.hpp"
#include "ptadet/image.hpp"
#include "ptadet/nn.hpp"
#include "ptadet/tensor.hpp"

namespace ptadet {

// Image-plane grids are stored as [cells × channels] tensors, cell = row·W_F + col.

struct ImageFeatureGrid {
  Tensor feats;  // [H_F·W_F × C]
  std::size_t height = 0, width = 0;
  std::size_t stride = 1;  // pixels per feature cell
};

struct DepthPrediction {
  Tensor bin_logits;  // [H_F·W_F × D]
  Tensor residuals;   // [H_F·W_F × D], in (0, 1)
  std::size_t height = 0, width = 0;
};

struct OffsetGrid {
  Tensor offsets;  // [H_F·W_F × 2], (Δu, Δv) in pixels
  std::size_t height = 0, width = 0;
  std::size_t stride = 1;
};

/// F_T flattened as [(cell·D + d) × C].
struct FrustumGrid {
  Tensor feats;
  std::size_t height = 0, width = 0, depth = 0;
  std::size_t channels() const { return feats.dim(1); }
};

/// Maps a pixel coordinate to the continuous feature-grid coordinate
/// (cell centers at integers).
inline double pixel_to_grid(double pixel, std::size_t stride) {
  return (pixel + 0.5) / static_cast<double>(stride) - 0.5;
}

// ---- image encoder ----------------------------------------------------------

struct ImageEncoderConfig {
  std::vector<std::size_t> block_strides{2, 2, 1};
  std::vector<std::size_t> block_channels{16, 16, 32};
  std::size_t feature_channels = 16;
  std::size_t depth_bins = 80;
};

/// Stack of patchify (stride s) + linear + ReLU blocks feeding four linear heads.
struct ImageEncoder {
  ImageEncoderConfig config;
  std::vector<Linear> blocks;
  Linear feature_head;
  Linear depth_head;
  Linear residual_head;  // sigmoid applied
  Linear offset_head;

  static ImageEncoder init(const ImageEncoderConfig& cfg, Rng& rng);
  std::size_t stride() const;
  void zero_heads();
  void collect(const std::string& prefix, ParamList& out) const;
};

struct ImageHeads {
  ImageFeatureGrid features;
  DepthPrediction depth;
  OffsetGrid offsets;
};

/// Throws ConfigError unless both image dimensions are divisible by the encoder stride.
ImageHeads encode_image(const Image& image, const ImageEncoder& encoder);

/// Rearranges [H·W × C] into [(H/s)·(W/s) × s·s·C] patches.
Tensor space_to_depth(const Tensor& x, std::size_t height, std::size_t width, std::size_t stride);

// ---- frustum ----------------------------------------------------------------

/// F_T[h,w,d,c] = softmax_D(bin_logits)[h,w,d] · F_I[h,w,c].
FrustumGrid build_frustum(const ImageFeatureGrid& fi, const DepthPrediction& dp);

// ---- foreground selection ---------------------------------------------------

struct ForegroundSelection {
  std::vector<std::size_t> indices;  // true foreground first, then background padding
  std::size_t foreground_count = 0;  // leading entries of `indices` that are true foreground
  std::size_t total_foreground = 0;  // foreground points available before truncation to n
};

/// Points whose projection hits a true mask pixel, in index order, truncated to n;
/// padded with rng-chosen background points when fewer exist.
ForegroundSelection select_foreground(const PointSet& points, const Mask& mask, const Calibration& calib,
                                      std::size_t n, Rng& rng);

// ---- pseudo points ----------------------------------------------------------

enum class SamplingMode { kKeypoint, kFarthestPoint };

/// Bilinear samples of the offset grid at pixel coordinates (rows of [M×2]).
std::vector<std::array<double, 2>> sample_keypoint_offsets(const OffsetGrid& og,
                                                           std::span<const std::array<double, 2>> pixels);

/// The non-differentiable half of pseudo-point generation: which pixels,
/// which depths, which 3D locations.
struct PseudoRouting {
  std::vector<std::size_t> source_indices;  // into the LiDAR point set
  std::vector<std::array<double, 2>> pixel_uv;
  std::vector<double> depth;
  std::vector<Vec3> coords;        // LiDAR frame
  std::vector<double> bin_coord;   // continuous depth-bin position used for feature sampling
  std::size_t clamped = 0;         // pixels moved back inside the image
};

struct PseudoPointSet {
  std::vector<Vec3> coords;
  Tensor feats;  // [M × C]
  std::vector<std::array<double, 2>> pixel_uv;
  std::vector<double> source_depth;
  std::vector<std::size_t> source_indices;
  std::size_t clamped = 0;

  std::size_t size() const { return coords.size(); }
  PointSet as_point_set() const { return {coords, feats}; }
};

struct PseudoPointOptions {
  std::size_t count = 480;
  SamplingMode mode = SamplingMode::kKeypoint;
  std::size_t image_height = 0;
  std::size_t image_width = 0;
};

/// FPS over the foreground points, optional keypoint shift, depth lookup
/// (argmax bin + its residual at the nearest feature cell), re-projection to LiDAR.
PseudoRouting route_pseudo_points(const PointSet& points, std::span<const std::size_t> foreground,
                                  const Calibration& calib, const DepthPrediction& dp, const OffsetGrid& og,
                                  const LidBinning& binning, const PseudoPointOptions& options);

/// Trilinear samples of F_T at (u, v, bin coordinate) for each routed point.
Tensor sample_frustum(const FrustumGrid& ft, const PseudoRouting& routing, std::size_t stride);

PseudoPointSet generate_pseudo_points(const PointSet& points, std::span<const std::size_t> foreground,
                                      const Calibration& calib, const ImageHeads& heads, const FrustumGrid& ft,
                                      const LidBinning& binning, const PseudoPointOptions& options);

}  // namespace ptadet
