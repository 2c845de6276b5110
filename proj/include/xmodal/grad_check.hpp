#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xmodal/autodiff.hpp"

namespace xmodal {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Widen h to 2e-4 where |analytic| < 1e-5 and to 1e-3 where it is
  /// below 1e-7, so float64 roundoff in f does not swamp tiny gradients.
  bool widen_small_gradients = false;
  /// Entries probed per parameter tensor; 0 probes every entry. Sampled
  /// entries are drawn deterministically from `seed`.
  std::size_t max_probes_per_parameter = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t probed = 0;
  double max_rel_error = 0.0;
  double analytic_at_max = 0.0;
  double numeric_at_max = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t probes = 0;
  double seconds = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

/// |a − n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

using LossFn = std::function<Var(Tape&)>;

/// Compares analytic gradients of `loss` with central differences
/// (f(θ+h) − f(θ−h)) / 2h, probing each listed parameter in place.
GradCheckReport grad_check(const LossFn& loss, std::span<Parameter* const> params,
                           const GradCheckOptions& options = {});
GradCheckReport grad_check(const LossFn& loss, ParameterSet& params,
                           const GradCheckOptions& options = {});

}  // namespace xmodal
