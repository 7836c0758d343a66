#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ptadet/boxes.hpp"
#include "ptadet/geometry.hpp"
#include "ptadet/image.hpp"

namespace ptadet {

// ---- calibration ------------------------------------------------------------

/// Reads the P2, R0_rect and Tr_velo_to_cam rows of a KITTI calib file (other keys are ignored).
Calibration parse_calib(std::string_view text);
/// Writes P0..P3 (P2 repeated), R0_rect, Tr_velo_to_cam and Tr_imu_to_velo (identity) rows.
std::string serialize_calib(const Calibration& calib);

// ---- velodyne ---------------------------------------------------------------

/// Little-endian float32 (x, y, z, intensity) records. feats = [N × 1] intensity (absent when N = 0).
PointSet read_velodyne(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_velodyne(const PointSet& points);

// ---- labels -----------------------------------------------------------------

/// One row of a KITTI label file (camera frame, (x, y, z) = bottom center).
struct LabelObject {
  std::string type;
  double truncation = 0.0;
  int occlusion = 0;
  double alpha = 0.0;
  std::array<double, 4> bbox{};  // left, top, right, bottom
  double h = 0, w = 0, l = 0;
  double x = 0, y = 0, z = 0;
  double ry = 0;
  std::optional<double> score;
};

/// Parses label rows, skipping DontCare. Throws ParseError with the line number.
std::vector<LabelObject> parse_label_rows(std::string_view text);
std::string serialize_labels(std::span<const LabelObject> rows);

/// Camera-frame label -> LiDAR-frame ground truth.
GroundTruth label_to_ground_truth(const LabelObject& row, const Calibration& calib, ObjectClass cls);
/// LiDAR-frame ground truth -> camera-frame label (bbox from the projected corners).
LabelObject ground_truth_to_label(const GroundTruth& gt, const Calibration& calib);

/// Rows of the three detection classes converted to the LiDAR frame; other types are dropped.
std::vector<GroundTruth> parse_labels(std::string_view text, const Calibration& calib);

// ---- scene crop -------------------------------------------------------------

struct CropBounds {
  std::array<double, 2> x{0.0, 70.4};
  std::array<double, 2> y{-40.0, 40.0};
  std::array<double, 2> z{-3.0, 1.0};
  bool contains(const Vec3& p) const;
};

struct CropResult {
  PointSet points;
  std::size_t removed = 0;
};

CropResult crop_points(const PointSet& points, const CropBounds& bounds = {});

// ---- rasterization ----------------------------------------------------------

/// Pixels whose centers fall inside the convex hull of the box's projected corners.
/// Boxes with a corner at or behind the image plane rasterize to nothing.
void rasterize_box(const Box3D& box, const Calibration& calib, Mask& mask);
Mask rasterize_boxes(std::span<const Box3D> boxes, const Calibration& calib, std::size_t height,
                     std::size_t width);

// ---- synthetic scenes -------------------------------------------------------

struct SyntheticSceneSpec {
  std::uint64_t seed = 0;
  std::array<std::size_t, kNumClasses> boxes{2, 0, 0};  // per class
  double surface_density = 24.0;  // points per square meter of box surface
  std::size_t clutter_points = 1500;
  std::size_t image_width = 192;
  std::size_t image_height = 64;
  double focal = 111.5;  // pixels
  double x_range_min = 8.0;
  double x_range_max = 30.0;
  double ground_z = -1.73;
  std::size_t max_retries = 200;
};

struct SceneSample {
  PointSet points;  // feats = [N × 1] intensity
  Image image;
  Calibration calib = Calibration::identity();
  std::vector<GroundTruth> gts;
  Mask mask;  // rasterized gt boxes
  std::size_t cropped = 0;  // points removed by the scene crop
};

/// Pinhole camera matching the spec's intrinsics with a standard LiDAR-to-camera axis swap.
Calibration synthetic_calibration(const SyntheticSceneSpec& spec);
SceneSample generate_scene(const SyntheticSceneSpec& spec);

// ---- image files ------------------------------------------------------------

/// Portable float map: "PF\n<W> <H>\n-1.0\n" then little-endian float32 RGB rows, bottom row first.
std::vector<std::uint8_t> write_pfm(const Image& image);
Image read_pfm(std::span<const std::uint8_t> bytes);

// ---- scene directories ------------------------------------------------------

/// KITTI layout: calib/ID.txt, velodyne/ID.bin, image_2/ID.pfm, label_2/ID.txt.
void write_scene(const std::filesystem::path& root, const std::string& id, const SceneSample& scene);
SceneSample read_scene(const std::filesystem::path& root, const std::string& id, const CropBounds& bounds = {});

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace ptadet
