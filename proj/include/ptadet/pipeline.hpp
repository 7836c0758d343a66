#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ptadet/boxes.hpp"
#include "ptadet/frustum.hpp"
#include "ptadet/fusion.hpp"
#include "ptadet/kitti.hpp"
#include "ptadet/losses.hpp"
#include "ptadet/nn.hpp"
#include "ptadet/rpn.hpp"

namespace ptadet {

/// Everything a run needs: network shape, image encoder, selection budgets,
/// RPN/NMS settings, loss weights, optimizer and the synthetic scene recipe.
struct PipelineConfig {
  NetworkConfig net;
  ImageEncoderConfig image;
  double depth_min = 0.0;
  double depth_max = 70.4;
  std::size_t foreground_points = 4096;
  SamplingMode sampling = SamplingMode::kKeypoint;
  std::size_t rpn_hidden = 32;
  double score_threshold = 0.3;
  double nms_train = 0.8;
  double nms_test = 0.85;
  AnchorSizes anchors;
  LossWeights loss;
  AdamOptions adam;
  std::size_t steps = 200;
  std::size_t scenes = 1;
  SyntheticSceneSpec scene;
  std::uint64_t seed = 0;

  /// Stage sizes and budgets as published (1600/480 points, 4096 selected).
  static PipelineConfig paper();
  /// Reduced sizes that train in seconds per step on one core.
  static PipelineConfig desk();

  LidBinning binning() const { return LidBinning(depth_min, depth_max, image.depth_bins); }
  /// Throws ConfigError on any inconsistency.
  void validate() const;
};

// ---- key = value config files -------------------------------------------------

std::vector<std::string> config_keys();
std::string get_config_value(const PipelineConfig& cfg, std::string_view key);
/// Throws ConfigError for unknown keys or unparsable values.
void set_config_value(PipelineConfig& cfg, std::string_view key, std::string_view value);
/// One `key = value` line per key in config_keys() order.
std::string serialize_config(const PipelineConfig& cfg);
/// Lines are `key = value`; blank lines and `#` comments are ignored. Keys not
/// mentioned keep their value from `base`.
PipelineConfig parse_config(std::string_view text, PipelineConfig base = PipelineConfig::desk());

// ---- detector -----------------------------------------------------------------

struct Detector {
  PipelineConfig cfg;
  ImageEncoder encoder;
  TwoStreamNet net;
  RpnHead rpn;

  /// Parameters drawn from Rng(cfg.seed).
  static Detector init(const PipelineConfig& cfg);
  ParamList params() const;
};

struct PreparedScene {
  SceneSample scene;
  ForegroundSelection selection;
  PointSet raw;                          // branch input: coords + [x y z intensity]
  std::vector<std::size_t> raw_indices;  // into scene.points
  DepthTargets depth_targets;
  std::vector<Box3D> gt_boxes;
  std::vector<ObjectClass> gt_classes;
};

/// Foreground selection, FPS down to the raw-branch budget and depth targets.
PreparedScene prepare_scene(SceneSample scene, const PipelineConfig& cfg, Rng& rng);

struct ForwardResult {
  ImageHeads heads;
  FrustumGrid frustum;
  PseudoRouting routing;
  PseudoPointSet ppc;
  Tensor fused;
  RpnOutput rpn;
};

/// With `frozen` set, pseudo points reuse that routing instead of recomputing it.
ForwardResult detector_forward(const Detector& det, const PreparedScene& scene, const PseudoRouting* frozen = nullptr);

struct LossBreakdown {
  Tensor total;
  double depth_bin = 0, depth_res = 0, depth = 0;
  double rpn_cls = 0, rpn_reg = 0, rpn_vote = 0, rpn = 0;
  bool no_foreground = false;
};

/// RPN targets are rebuilt from the forward pass unless `frozen_targets` is given.
LossBreakdown detector_loss(const Detector& det, const PreparedScene& scene, const ForwardResult& fwd,
                            const RpnTargets* frozen_targets = nullptr);

/// Thresholded proposals after BEV NMS.
std::vector<DetectionResult> detect(const Detector& det, const ForwardResult& fwd, double nms_threshold);

struct TrainRecord {
  std::size_t step = 0;  // 1-based, loss measured before that step's update
  double total = 0;
  double depth = 0, depth_bin = 0, depth_res = 0;
  double rpn = 0, rpn_cls = 0, rpn_reg = 0, rpn_vote = 0;
};

using TrainCallback = std::function<void(const TrainRecord&)>;

/// cfg.steps Adam steps on the mean loss over `scenes`.
std::vector<TrainRecord> train(Detector& det, std::span<const PreparedScene> scenes, const TrainCallback& on_step = {});

/// Scenes used by training commands: generate_scene with seeds scene.seed, scene.seed + 1, ...
std::vector<PreparedScene> make_training_scenes(const PipelineConfig& cfg);

// ---- hashing --------------------------------------------------------------------

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h = 14695981039346656037ULL);
std::uint64_t hash_values(std::span<const double> values);
std::string hex64(std::uint64_t v);

}  // namespace ptadet
