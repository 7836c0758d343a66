#include "ptadet/fusion.hpp"

#include <algorithm>

#include "ptadet/errors.hpp"

namespace ptadet {

std::string_view attn_mode_name(AttnMode m) { return m == AttnMode::kSubtract ? "subtract" : "multiply"; }

std::string_view combine_mode_name(CombineMode m) {
  switch (m) {
    case CombineMode::kSubtract: return "subtract";
    case CombineMode::kAdd: return "add";
    case CombineMode::kConcat: return "concat";
  }
  return "?";
}

AttnMode parse_attn_mode(std::string_view s) {
  if (s == "subtract" || s == "-") return AttnMode::kSubtract;
  if (s == "multiply" || s == "x") return AttnMode::kMultiply;
  throw ConfigError("unknown attention mode '" + std::string(s) + "' (expected subtract|multiply)");
}

CombineMode parse_combine_mode(std::string_view s) {
  if (s == "subtract") return CombineMode::kSubtract;
  if (s == "add") return CombineMode::kAdd;
  if (s == "concat") return CombineMode::kConcat;
  throw ConfigError("unknown combine mode '" + std::string(s) + "' (expected subtract|add|concat)");
}

namespace {

std::vector<std::size_t> canonical_rows(std::span<const std::size_t> idx, std::size_t l) {
  std::vector<std::size_t> out(idx.begin(), idx.end());
  for (std::size_t r = 0; r + l <= out.size(); r += l)
    std::sort(out.begin() + static_cast<std::ptrdiff_t>(r), out.begin() + static_cast<std::ptrdiff_t>(r + l));
  return out;
}

std::vector<Vec3> gather_coords(std::span<const Vec3> coords, std::span<const std::size_t> idx) {
  std::vector<Vec3> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(coords[i]);
  return out;
}

void require_feats(const PointSet& ps, const char* what) {
  ps.validate();
  if (!ps.has_feats()) throw ContractError(std::string(what) + ": point set has no features");
}

}  // namespace

// ---- attention ----------------------------------------------------------------

AttentionBlock AttentionBlock::init(std::size_t channels, std::size_t l_group, AttnMode mode, Rng& rng) {
  AttentionBlock b;
  b.l_group = l_group;
  b.mode = mode;
  b.qkv_lbr = LbrLayer::init(channels, channels, rng);
  b.w_e = Linear::init(channels, 3 * channels, rng, false);
  b.theta = Mlp2::init(3, channels, channels, rng);
  b.alpha = Mlp2::init(channels, channels, channels, rng);
  b.alpha.second.bias = Tensor();
  b.beta = LbrLayer::init(channels, channels, rng);
  return b;
}

void AttentionBlock::collect(const std::string& prefix, ParamList& out) const {
  qkv_lbr.collect(prefix + ".qkv_lbr", out);
  w_e.collect(prefix + ".w_e", out);
  theta.collect(prefix + ".theta", out);
  alpha.collect(prefix + ".alpha", out);
  beta.collect(prefix + ".beta", out);
}

Tensor attention_forward(std::span<const Vec3> coords, const Tensor& feats, std::span<const std::size_t> neighbors,
                         std::size_t l, const AttentionBlock& block) {
  const std::size_t m = coords.size(), c = block.channels();
  if (m == 0 || l == 0) throw ContractError("attention: empty point set or neighborhood");
  if (feats.rank() != 2 || feats.dim(0) != m || feats.dim(1) != c)
    throw DimensionError("attention: expected features " + shape_str({m, c}) + ", got " + shape_str(feats.shape()));
  if (neighbors.size() != m * l) throw DimensionError("attention: neighbor table must be [M × L]");
  for (std::size_t j : neighbors)
    if (j >= m) throw ArgumentError("attention: neighbor index out of range");

  const auto nbr = canonical_rows(neighbors, l);
  std::vector<std::size_t> center(m * l);
  std::vector<double> rel(m * l * 3);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < l; ++k) {
      const std::size_t r = i * l + k;
      center[r] = i;
      const Vec3 d = coords[i] - coords[nbr[r]];
      rel[r * 3 + 0] = d.x();
      rel[r * 3 + 1] = d.y();
      rel[r * 3 + 2] = d.z();
    }

  const Tensor qkv = linear(lbr(feats, block.qkv_lbr), block.w_e);
  const Tensor q = gather_rows(slice_cols(qkv, 0, c), center);
  const Tensor k = gather_rows(slice_cols(qkv, c, 2 * c), nbr);
  const Tensor v = gather_rows(slice_cols(qkv, 2 * c, 3 * c), nbr);
  const Tensor delta = mlp2(Tensor::from({m * l, 3}, std::move(rel)), block.theta);
  const Tensor relation = block.mode == AttnMode::kSubtract ? sub(q, k) : mul(q, k);
  const Tensor weights = softmax(reshape(mlp2(add(relation, delta), block.alpha), {m, l, c}), 1);
  const Tensor agg = sum_axis(mul(weights, reshape(add(v, delta), {m, l, c})), 1);
  return add(lbr(agg, block.beta), feats);
}

Tensor attention_forward(std::span<const Vec3> coords, const Tensor& feats, const AttentionBlock& block) {
  const std::size_t l = std::min(block.l_group, coords.size());
  const KnnResult knn = knn_group(coords, coords, l);
  return attention_forward(coords, feats, knn.indices, l, block);
}

// ---- PTD ----------------------------------------------------------------------

PtdStage PtdStage::init(std::size_t c_in, std::size_t m_out, std::size_t l_group, std::size_t c_out, AttnMode mode,
                        Rng& rng) {
  PtdStage s;
  s.m_out = m_out;
  s.l_group = l_group;
  s.local_lbr = LbrLayer::init(c_in, c_out, rng);
  s.attn = AttentionBlock::init(c_out, l_group, mode, rng);
  return s;
}

void PtdStage::collect(const std::string& prefix, ParamList& out) const {
  local_lbr.collect(prefix + ".local_lbr", out);
  attn.collect(prefix + ".attn", out);
}

Tensor ptd_local_features(const PointSet& input, std::span<const std::size_t> groups, std::size_t l,
                          const PtdStage& stage) {
  require_feats(input, "ptd");
  if (l == 0 || groups.size() % l != 0) throw DimensionError("ptd: group table must be [M × L]");
  const auto idx = canonical_rows(groups, l);
  const Tensor grouped = lbr(gather_rows(input.feats, idx), stage.local_lbr);
  return maxpool_group(reshape(grouped, {idx.size() / l, l, stage.c_out()}));
}

PointSet ptd_forward(const PointSet& input, const PtdStage& stage) {
  require_feats(input, "ptd");
  const std::size_t n = input.size();
  if (stage.m_out == 0 || stage.m_out > n)
    throw ConfigError("ptd: m_out=" + std::to_string(stage.m_out) + " but input has " + std::to_string(n) + " points");
  if (stage.l_group == 0 || stage.l_group > n)
    throw ConfigError("ptd: l_group=" + std::to_string(stage.l_group) + " exceeds " + std::to_string(n) + " points");
  if (input.feats.dim(1) != stage.local_lbr.in_features())
    throw DimensionError("ptd: input has " + std::to_string(input.feats.dim(1)) + " channels, stage expects " +
                         std::to_string(stage.local_lbr.in_features()));
  const auto centers = farthest_point_sampling(input.coords, stage.m_out, 0);
  PointSet out;
  out.coords = gather_coords(input.coords, centers);
  const KnnResult groups = knn_group(out.coords, input.coords, stage.l_group);
  const Tensor local = ptd_local_features(input, groups.indices, stage.l_group, stage);
  out.feats = attention_forward(out.coords, local, stage.attn);
  return out;
}

// ---- PTU / FP -----------------------------------------------------------------

namespace {

Tensor interpolate_coarse(const PointSet& coarse, const PointSet& skip, const char* what) {
  require_feats(coarse, what);
  require_feats(skip, what);
  if (coarse.size() == 0) throw ContractError(std::string(what) + ": empty coarse point set");
  if (skip.size() < coarse.size())
    throw ContractError(std::string(what) + ": skip set (" + std::to_string(skip.size()) +
                        ") smaller than coarse set (" + std::to_string(coarse.size()) + ")");
  const IdwStencil st = idw_stencil(skip.coords, coarse.coords, 3, 2.0);
  return weighted_gather(coarse.feats, st.indices, st.weights, st.k);
}

}  // namespace

PtuStage PtuStage::init(std::size_t c_coarse, std::size_t c_skip, std::size_t l_group, AttnMode mode, Rng& rng) {
  PtuStage s;
  s.skip_lbr = LbrLayer::init(c_skip, c_coarse, rng);
  s.attn = AttentionBlock::init(c_coarse, l_group, mode, rng);
  return s;
}

void PtuStage::collect(const std::string& prefix, ParamList& out) const {
  skip_lbr.collect(prefix + ".skip_lbr", out);
  attn.collect(prefix + ".attn", out);
}

PointSet ptu_forward(const PointSet& coarse, const PointSet& skip, const PtuStage& stage) {
  const Tensor f_int = interpolate_coarse(coarse, skip, "ptu");
  if (coarse.feats.dim(1) != stage.attn.channels() || skip.feats.dim(1) != stage.skip_lbr.in_features())
    throw DimensionError("ptu: input widths do not match stage");
  PointSet out;
  out.coords = skip.coords;
  out.feats = attention_forward(skip.coords, add(f_int, lbr(skip.feats, stage.skip_lbr)), stage.attn);
  return out;
}

FpStage FpStage::init(std::size_t c_coarse, std::size_t c_skip, std::vector<std::size_t> widths, Rng& rng) {
  if (widths.empty()) throw ConfigError("fp: need at least one layer");
  FpStage s;
  std::size_t c_in = c_coarse + c_skip;
  for (std::size_t w : widths) {
    s.mlp.push_back(LbrLayer::init(c_in, w, rng));
    c_in = w;
  }
  return s;
}

void FpStage::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < mlp.size(); ++i) mlp[i].collect(prefix + ".mlp" + std::to_string(i), out);
}

PointSet fp_forward(const PointSet& coarse, const PointSet& skip, const FpStage& stage) {
  const Tensor f_int = interpolate_coarse(coarse, skip, "fp");
  if (coarse.feats.dim(1) + skip.feats.dim(1) != stage.mlp.front().in_features())
    throw DimensionError("fp: input widths do not match stage");
  Tensor x = concat_cols({f_int, skip.feats});
  for (const LbrLayer& layer : stage.mlp) x = lbr(x, layer);
  return {skip.coords, x};
}

// ---- PFT ----------------------------------------------------------------------

PftStage PftStage::init(std::size_t c1, std::size_t c2, std::size_t c_e, std::size_t n, std::size_t m,
                        std::size_t score_hidden, CombineMode combine, AttnMode attn, Rng& rng) {
  PftStage s;
  s.c_e = c_e;
  s.combine = combine;
  s.attn = attn;
  s.in_raw = Linear::init(c1, c_e, rng, false);
  s.in_pseu = Linear::init(c2, c_e, rng, false);
  s.w_raw = Linear::init(c1, 3 * c_e, rng, false);
  s.w_pseu = Linear::init(c2, 3 * c_e, rng, false);
  s.sigma = Mlp2::init(m, score_hidden, m, rng);
  s.epsilon = Mlp2::init(n, score_hidden, n, rng);
  const std::size_t c_out_in = combine == CombineMode::kConcat ? 2 * c_e : c_e;
  s.out_raw = LbrLayer::init(c_out_in, c_e, rng);
  s.out_pseu = LbrLayer::init(c_out_in, c_e, rng);
  return s;
}

void PftStage::collect(const std::string& prefix, ParamList& out) const {
  in_raw.collect(prefix + ".in_raw", out);
  in_pseu.collect(prefix + ".in_pseu", out);
  w_raw.collect(prefix + ".w_raw", out);
  w_pseu.collect(prefix + ".w_pseu", out);
  sigma.collect(prefix + ".sigma", out);
  epsilon.collect(prefix + ".epsilon", out);
  out_raw.collect(prefix + ".out_raw", out);
  out_pseu.collect(prefix + ".out_pseu", out);
}

PftStage PftStage::swapped() const {
  PftStage s = *this;
  std::swap(s.in_raw, s.in_pseu);
  std::swap(s.w_raw, s.w_pseu);
  std::swap(s.sigma, s.epsilon);
  std::swap(s.out_raw, s.out_pseu);
  return s;
}

namespace {

/// [A × B] cross-modal scores between rows of k [A × C] and q [B × C].
Tensor cross_scores(const Tensor& k, const Tensor& q, AttnMode mode) {
  const Tensor dot = matmul(k, transpose(q));
  if (mode == AttnMode::kMultiply) return dot;
  // -||k - q||² = 2 k·q - ||k||² - ||q||²
  return add_outer(scale(dot, 2.0), scale(sum_axis(square(k), 1), -1.0), scale(sum_axis(square(q), 1), -1.0));
}

Tensor combine(const Tensor& proj, const Tensor& msg, CombineMode mode, const LbrLayer& out) {
  switch (mode) {
    case CombineMode::kSubtract: return lbr(sub(proj, msg), out);
    case CombineMode::kAdd: return lbr(add(proj, msg), out);
    case CombineMode::kConcat: return lbr(concat_cols({proj, msg}), out);
  }
  throw ConfigError("unknown combine mode");
}

}  // namespace

PftOutput pft_forward(const Tensor& f_raw, const Tensor& f_pseu, const PftStage& stage) {
  if (f_raw.rank() != 2 || f_pseu.rank() != 2) throw DimensionError("pft: inputs must be 2-D");
  const std::size_t n = f_raw.dim(0), m = f_pseu.dim(0), ce = stage.c_e;
  if (n == 0 || m == 0) throw ContractError("pft: empty modality (N=" + std::to_string(n) + ", M=" + std::to_string(m) + ")");
  if (f_raw.dim(1) != stage.w_raw.in_features() || f_pseu.dim(1) != stage.w_pseu.in_features())
    throw DimensionError("pft: input widths do not match stage");
  if (stage.sigma.first.in_features() != m || stage.epsilon.first.in_features() != n)
    throw DimensionError("pft: score networks were built for different point counts");

  const Tensor qkv_r = linear(f_raw, stage.w_raw), qkv_p = linear(f_pseu, stage.w_pseu);
  const Tensor q_r = slice_cols(qkv_r, 0, ce), k_r = slice_cols(qkv_r, ce, 2 * ce), v_r = slice_cols(qkv_r, 2 * ce, 3 * ce);
  const Tensor q_p = slice_cols(qkv_p, 0, ce), k_p = slice_cols(qkv_p, ce, 2 * ce), v_p = slice_cols(qkv_p, 2 * ce, 3 * ce);

  PftOutput out;
  out.attn_raw = softmax(mlp2(cross_scores(k_r, q_p, stage.attn), stage.sigma), 1);
  out.attn_pseu = softmax(mlp2(cross_scores(k_p, q_r, stage.attn), stage.epsilon), 1);
  out.raw = combine(linear(f_raw, stage.in_raw), matmul(out.attn_raw, v_p), stage.combine, stage.out_raw);
  out.pseu = combine(linear(f_pseu, stage.in_pseu), matmul(out.attn_pseu, v_r), stage.combine, stage.out_pseu);
  return out;
}

// ---- two-stream network -----------------------------------------------------

void NetworkConfig::validate() const {
  const std::size_t s = raw_stages.size();
  if (s == 0) throw ConfigError("network: at least one stage is required");
  if (ppc_stages.size() != s || channels.size() != s || pft_links.size() != s)
    throw ConfigError("network: raw_stages, ppc_stages, channels and pft_links must have equal length");
  auto check_chain = [&](std::size_t start, const std::vector<std::size_t>& sizes, const char* name) {
    std::size_t prev = start;
    for (std::size_t v : sizes) {
      if (v == 0 || v >= prev)
        throw ConfigError(std::string("network: ") + name + " stage sizes must strictly decrease from the input count");
      if (l_group > prev)
        throw ConfigError("network: l_group=" + std::to_string(l_group) + " exceeds a stage input of " +
                          std::to_string(prev) + " points");
      prev = v;
    }
  };
  check_chain(raw_points, raw_stages, "raw");
  check_chain(ppc_points, ppc_stages, "ppc");
  if (l_group == 0) throw ConfigError("network: l_group must be >= 1");
  for (std::size_t c : channels)
    if (c == 0) throw ConfigError("network: channel widths must be positive");
  if (raw_in_channels == 0 || ppc_in_channels == 0 || fp_width == 0 || fusion_width == 0 || pft_score_hidden == 0)
    throw ConfigError("network: widths must be positive");
}

TwoStreamNet TwoStreamNet::init(const NetworkConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t s_count = cfg.num_stages();
  TwoStreamNet net;
  net.links.resize(s_count);
  std::size_t c_raw = cfg.raw_in_channels, c_ppc = cfg.ppc_in_channels;
  for (std::size_t s = 0; s < s_count; ++s) {
    const std::size_t c = cfg.channels[s];
    net.raw_enc.push_back(PtdStage::init(c_raw, cfg.raw_stages[s], cfg.l_group, c, cfg.ptd_attn, rng));
    net.ppc_enc.push_back(PtdStage::init(c_ppc, cfg.ppc_stages[s], cfg.l_group, c, cfg.ptd_attn, rng));
    if (cfg.pft_links[s])
      net.links[s] = PftStage::init(c, c, c, cfg.raw_stages[s], cfg.ppc_stages[s], cfg.pft_score_hidden, cfg.combine,
                                    cfg.pft_attn, rng);
    c_raw = c_ppc = c;
  }
  const std::size_t c_top = cfg.channels.back();
  for (std::size_t s = 0; s < s_count; ++s) {
    const std::size_t c_raw_skip = s == 0 ? cfg.raw_in_channels : cfg.channels[s - 1];
    const std::size_t c_ppc_skip = s == 0 ? cfg.ppc_in_channels : cfg.channels[s - 1];
    const std::size_t c_fp_coarse = s + 1 == s_count ? c_top : cfg.fp_width;
    net.raw_dec.push_back(PtuStage::init(c_top, c_raw_skip, cfg.l_group, cfg.ptu_attn, rng));
    net.ppc_dec.push_back(FpStage::init(c_fp_coarse, c_ppc_skip, {cfg.fp_width, cfg.fp_width}, rng));
  }
  if (cfg.final_fusion)
    net.final_pft = PftStage::init(c_top, cfg.fp_width, cfg.fusion_width, cfg.raw_points, cfg.ppc_points,
                                   cfg.pft_score_hidden, cfg.combine, cfg.pft_attn, rng);
  return net;
}

void TwoStreamNet::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t s = 0; s < raw_enc.size(); ++s) {
    const std::string i = std::to_string(s);
    raw_enc[s].collect(prefix + ".raw_enc" + i, out);
    ppc_enc[s].collect(prefix + ".ppc_enc" + i, out);
    if (links[s].w_raw.weight.defined()) links[s].collect(prefix + ".pft" + i, out);
  }
  for (std::size_t s = 0; s < raw_dec.size(); ++s) {
    const std::string i = std::to_string(s);
    raw_dec[s].collect(prefix + ".raw_dec" + i, out);
    ppc_dec[s].collect(prefix + ".ppc_dec" + i, out);
  }
  if (final_pft.w_raw.weight.defined()) final_pft.collect(prefix + ".final_pft", out);
}

Tensor two_stream_forward(const PointSet& raw, const PointSet& ppc, const TwoStreamNet& net,
                          const NetworkConfig& cfg) {
  cfg.validate();
  require_feats(raw, "two_stream");
  require_feats(ppc, "two_stream");
  if (raw.size() != cfg.raw_points || ppc.size() != cfg.ppc_points)
    throw ConfigError("two_stream: expected " + std::to_string(cfg.raw_points) + " raw and " +
                      std::to_string(cfg.ppc_points) + " pseudo points, got " + std::to_string(raw.size()) + " and " +
                      std::to_string(ppc.size()));
  if (raw.feats.dim(1) != cfg.raw_in_channels || ppc.feats.dim(1) != cfg.ppc_in_channels)
    throw ConfigError("two_stream: input feature widths do not match the config");
  if (net.raw_enc.size() != cfg.num_stages()) throw ConfigError("two_stream: network was built for another config");

  std::vector<PointSet> r{raw}, p{ppc};
  for (std::size_t s = 0; s < cfg.num_stages(); ++s) {
    PointSet rn = ptd_forward(r.back(), net.raw_enc[s]);
    PointSet pn = ptd_forward(p.back(), net.ppc_enc[s]);
    if (cfg.pft_links[s]) {
      PftOutput o = pft_forward(rn.feats, pn.feats, net.links[s]);
      rn.feats = o.raw;
      pn.feats = o.pseu;
    }
    r.push_back(std::move(rn));
    p.push_back(std::move(pn));
  }
  PointSet raw_out = r.back(), ppc_out = p.back();
  for (std::size_t s = cfg.num_stages(); s-- > 0;) {
    raw_out = ptu_forward(raw_out, r[s], net.raw_dec[s]);
    ppc_out = fp_forward(ppc_out, p[s], net.ppc_dec[s]);
  }
  if (!cfg.final_fusion) return raw_out.feats;
  return pft_forward(raw_out.feats, ppc_out.feats, net.final_pft).raw;
}

}  // namespace ptadet
