#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ptadet/nn.hpp"
#include "ptadet/pipeline.hpp"

namespace ptadet {

// ---- gradient checks ------------------------------------------------------------

struct GradcheckCase {
  std::string scope;  // op | stage | network
  std::string name;
  std::function<Tensor()> loss;
  ParamList params;
  GradcheckOptions options;
};

/// Finite-difference cases for one scope ("op", "stage", "network") or all ("all").
/// Throws ConfigError on an unknown scope.
std::vector<GradcheckCase> gradcheck_cases(std::string_view scope, std::uint64_t seed = 0);

struct GradcheckRow {
  std::string scope, case_name, group;
  std::size_t checked = 0;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  bool pass = false;
};

inline constexpr double kGradcheckTolerance = 1e-4;

std::vector<GradcheckRow> run_gradcheck_case(const GradcheckCase& c, double tolerance = kGradcheckTolerance);

/// Miniature detector used by the network-scope gradient check: 32 raw points,
/// 16 pseudo points, two stages, a 32×16 image.
PipelineConfig miniature_config();

// ---- invariant checks -----------------------------------------------------------

struct CheckResult {
  std::string module;
  std::string name;
  bool pass = false;
  std::string detail;
};

struct CheckOptions {
  std::string checkpoint;  // when set, also verify this checkpoint loads into a detector built from `config`
  PipelineConfig config = PipelineConfig::desk();
  std::uint64_t seed = 0;
};

std::vector<CheckResult> run_checks(const CheckOptions& options);

}  // namespace ptadet
