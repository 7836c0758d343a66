#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ptadet/rng.hpp"
#include "ptadet/tensor.hpp"

namespace ptadet {

enum class NormMode { kStandardize, kIdentity };

/// Named parameter handles. Tensors alias the owning module's storage.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

/// Affine map x·W (+ b). An undefined bias means no bias term.
struct Linear {
  Tensor weight;  // [C_in × C_out]
  Tensor bias;    // [C_out] or undefined

  static Linear init(std::size_t c_in, std::size_t c_out, Rng& rng, bool with_bias = true);
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  void collect(const std::string& prefix, ParamList& out) const;
};

Tensor linear(const Tensor& x, const Linear& layer);

/// Linear -> ReLU -> Linear.
struct Mlp2 {
  Linear first;
  Linear second;

  static Mlp2 init(std::size_t c_in, std::size_t c_hidden, std::size_t c_out, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

Tensor mlp2(const Tensor& x, const Mlp2& net);

/// Linear + per-channel normalization + ReLU.
struct LbrLayer {
  Tensor weight;      // [C_in × C_out]
  Tensor bias;        // [C_out]; undefined in standardize mode
  Tensor norm_scale;  // [C_out]
  Tensor norm_shift;  // [C_out]
  NormMode norm_mode = NormMode::kStandardize;

  static LbrLayer init(std::size_t c_in, std::size_t c_out, Rng& rng, NormMode mode = NormMode::kStandardize);
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  void collect(const std::string& prefix, ParamList& out) const;
};

inline constexpr double kNormEps = 1e-5;

Tensor linear(const Tensor& x, const LbrLayer& layer);
/// ReLU(scale ⊙ standardize(x·W + b) + shift); identity mode skips standardize.
Tensor lbr(const Tensor& x, const LbrLayer& layer);

// ---- optimizer --------------------------------------------------------------

struct AdamOptions {
  double lr = 0.01;
  double beta1 = 0.9;  // "momentum"
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // coupled L2, added to the gradient
};

/// Adam with classic (coupled) L2 weight decay. Keeps first/second moment
/// buffers per parameter, keyed by position in the ParamList it was built with.
class Adam {
 public:
  Adam(ParamList params, AdamOptions options);

  void step();
  void zero_grad();
  std::int64_t steps() const { return t_; }
  const AdamOptions& options() const { return opt_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  ParamList params_;
  AdamOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

/// One Adam update on raw buffers; exposed for direct testing.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 std::int64_t step, const AdamOptions& opt);

// ---- checkpoints ------------------------------------------------------------

/// Flat little-endian parameter file:
///   magic "PTADCKPT" (8 bytes), u32 version (=1), u32 tensor count,
///   then per tensor: u32 name length, name bytes, u32 rank, u64 extents[rank],
///   f64 payload[numel].
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ParamList& params);
std::map<std::string, Tensor> read_checkpoint(const std::filesystem::path& path);
/// Copies values into the matching parameters. Throws FormatError on missing
/// names or shape mismatches.
void load_checkpoint(const std::filesystem::path& path, const ParamList& params);

// ---- gradient checking ------------------------------------------------------

struct GradcheckResult {
  std::string group;
  std::size_t checked = 0;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
};

struct GradcheckOptions {
  double step = 1e-5;
  /// Check at most this many entries per tensor (evenly strided); 0 = all.
  std::size_t max_entries = 0;
  /// Magnitude floor used in the relative-error denominator.
  double floor = 1e-6;
};

/// Compares backward() gradients with central differences for every named
/// tensor. The relative error of a group is max|a - n| / max(max|a|, max|n|, floor).
std::vector<GradcheckResult> gradcheck(const std::function<Tensor()>& loss_fn, const ParamList& params,
                                       const GradcheckOptions& options = {});

}  // namespace ptadet
