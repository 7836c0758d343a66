#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ptadet/geometry.hpp"
#include "ptadet/nn.hpp"
#include "ptadet/tensor.hpp"

namespace ptadet {

enum class AttnMode { kSubtract, kMultiply };
enum class CombineMode { kSubtract, kAdd, kConcat };

std::string_view attn_mode_name(AttnMode m);
std::string_view combine_mode_name(CombineMode m);
/// Accepts "subtract"/"-" and "multiply"/"x". Throws ConfigError otherwise.
AttnMode parse_attn_mode(std::string_view s);
CombineMode parse_combine_mode(std::string_view s);

// ---- vector self-attention shared by PTD and PTU ------------------------------

/// out = β(Σ_L A' ⊙ (V' + δ)) + F with A' = softmax_L(α(Q' ∘ K' + δ)),
/// δ = θ(p_i − p_j), ∘ = subtraction or elementwise product.
struct AttentionBlock {
  std::size_t l_group = 16;
  AttnMode mode = AttnMode::kSubtract;
  LbrLayer qkv_lbr;  // C -> C
  Linear w_e;        // C -> 3C, no bias
  Mlp2 theta;        // 3 -> C -> C
  Mlp2 alpha;        // C -> C -> C, no output bias
  LbrLayer beta;     // C -> C

  static AttentionBlock init(std::size_t channels, std::size_t l_group, AttnMode mode, Rng& rng);
  std::size_t channels() const { return w_e.in_features(); }
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Neighborhoods are k-NN among `coords` themselves with L = min(l_group, M).
Tensor attention_forward(std::span<const Vec3> coords, const Tensor& feats, const AttentionBlock& block);

/// Same, with caller-supplied neighborhoods (row-major [M × L] indices into coords).
/// Each row is reduced in ascending index order, so member order never matters.
Tensor attention_forward(std::span<const Vec3> coords, const Tensor& feats, std::span<const std::size_t> neighbors,
                         std::size_t l, const AttentionBlock& block);

// ---- PTD ----------------------------------------------------------------------

struct PtdStage {
  std::size_t m_out = 0;
  std::size_t l_group = 16;
  LbrLayer local_lbr;  // C_in -> C_out, applied to grouped neighbor features
  AttentionBlock attn;

  static PtdStage init(std::size_t c_in, std::size_t m_out, std::size_t l_group, std::size_t c_out, AttnMode mode,
                       Rng& rng);
  std::size_t c_out() const { return local_lbr.out_features(); }
  void collect(const std::string& prefix, ParamList& out) const;
};

/// FPS to m_out centers, k-NN groups of l_group input points, F_local =
/// maxpool(LBR(group features)), then the attention block at the centers.
PointSet ptd_forward(const PointSet& input, const PtdStage& stage);

/// Local aggregation only (the F_local term): for explicit groups.
Tensor ptd_local_features(const PointSet& input, std::span<const std::size_t> groups, std::size_t l,
                          const PtdStage& stage);

// ---- PTU / FP -----------------------------------------------------------------

struct PtuStage {
  LbrLayer skip_lbr;  // C_skip -> C_coarse
  AttentionBlock attn;

  static PtuStage init(std::size_t c_coarse, std::size_t c_skip, std::size_t l_group, AttnMode mode, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// F_I = idw(coarse at skip coords) + LBR(F_skip), then attention at the skip points.
PointSet ptu_forward(const PointSet& coarse, const PointSet& skip, const PtuStage& stage);

struct FpStage {
  std::vector<LbrLayer> mlp;  // first layer takes C_coarse + C_skip

  static FpStage init(std::size_t c_coarse, std::size_t c_skip, std::vector<std::size_t> widths, Rng& rng);
  std::size_t c_out() const { return mlp.back().out_features(); }
  void collect(const std::string& prefix, ParamList& out) const;
};

/// LBR stack over [idw(coarse at skip coords), F_skip].
PointSet fp_forward(const PointSet& coarse, const PointSet& skip, const FpStage& stage);

// ---- PFT ----------------------------------------------------------------------

struct PftStage {
  std::size_t c_e = 0;
  CombineMode combine = CombineMode::kSubtract;
  AttnMode attn = AttnMode::kMultiply;
  Linear in_raw, in_pseu;  // C1 -> C_e, C2 -> C_e (no bias)
  Linear w_raw, w_pseu;    // C1 -> 3C_e, C2 -> 3C_e (no bias)
  Mlp2 sigma;              // M -> h -> M, over rows of the N×M raw score matrix
  Mlp2 epsilon;            // N -> h -> N, over rows of the M×N pseudo score matrix
  LbrLayer out_raw, out_pseu;  // C_e (or 2C_e for concat) -> C_e

  static PftStage init(std::size_t c1, std::size_t c2, std::size_t c_e, std::size_t n, std::size_t m,
                       std::size_t score_hidden, CombineMode combine, AttnMode attn, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
  /// The same block with the roles of the two modalities exchanged.
  PftStage swapped() const;
};

struct PftOutput {
  Tensor raw;        // [N × C_e]
  Tensor pseu;       // [M × C_e]
  Tensor attn_raw;   // [N × M], rows sum to 1
  Tensor attn_pseu;  // [M × N]
};

PftOutput pft_forward(const Tensor& f_raw, const Tensor& f_pseu, const PftStage& stage);

// ---- two-stream network -----------------------------------------------------

struct NetworkConfig {
  std::size_t raw_points = 1600;
  std::vector<std::size_t> raw_stages{800, 400, 200, 100};
  std::size_t ppc_points = 480;
  std::vector<std::size_t> ppc_stages{240, 120, 60, 30};
  std::vector<std::size_t> channels{32, 32, 64, 64};
  std::size_t raw_in_channels = 4;   // x, y, z, intensity
  std::size_t ppc_in_channels = 16;  // image feature width
  std::size_t l_group = 16;
  std::size_t fp_width = 32;
  std::size_t fusion_width = 32;
  std::size_t pft_score_hidden = 32;
  std::vector<bool> pft_links{true, true, true, true};
  bool final_fusion = true;
  CombineMode combine = CombineMode::kSubtract;
  AttnMode ptd_attn = AttnMode::kSubtract;
  AttnMode ptu_attn = AttnMode::kSubtract;
  AttnMode pft_attn = AttnMode::kMultiply;

  std::size_t num_stages() const { return raw_stages.size(); }
  std::size_t out_channels() const { return final_fusion ? fusion_width : channels.back(); }
  /// Throws ConfigError on inconsistent sizes.
  void validate() const;
};

struct TwoStreamNet {
  std::vector<PtdStage> raw_enc, ppc_enc;
  std::vector<PftStage> links;  // entry s present iff pft_links[s]
  std::vector<PtuStage> raw_dec;  // raw_dec[s] restores level s from level s+1
  std::vector<FpStage> ppc_dec;
  PftStage final_pft;

  static TwoStreamNet init(const NetworkConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Per-point features at the raw-point resolution, [N_raw × out_channels].
Tensor two_stream_forward(const PointSet& raw, const PointSet& ppc, const TwoStreamNet& net,
                          const NetworkConfig& cfg);

}  // namespace ptadet
