#include "xmodal/grad_check.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "xmodal/error.hpp"

namespace xmodal {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const LossFn& loss) {
  Tape tape(false);
  const double v = loss(tape).value().item();
  if (!std::isfinite(v)) fail(ErrorKind::probe, "loss is not finite at a probe point");
  return v;
}

double probe_step(const GradCheckOptions& o, double analytic) {
  if (!o.widen_small_gradients) return o.step;
  const double a = std::abs(analytic);
  if (a < 1e-7) return std::max(o.step, 1e-3);
  if (a < 1e-5) return std::max(o.step, 2e-4);
  return o.step;
}

}  // namespace

GradCheckReport grad_check(const LossFn& loss, std::span<Parameter* const> params,
                           const GradCheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var out = loss(tape);
    if (!std::isfinite(out.value().item())) fail(ErrorKind::probe, "loss is not finite");
    tape.backward(out);
  }

  GradCheckReport report;
  report.tolerance = options.tolerance;
  std::mt19937_64 rng(options.seed);
  for (Parameter* p : params) {
    GradCheckEntry entry;
    entry.name = p->name();
    const std::size_t n = p->value().size();
    std::vector<std::size_t> probe(n);
    std::iota(probe.begin(), probe.end(), 0);
    if (options.max_probes_per_parameter && n > options.max_probes_per_parameter) {
      std::shuffle(probe.begin(), probe.end(), rng);
      probe.resize(options.max_probes_per_parameter);
      std::sort(probe.begin(), probe.end());
    }
    for (std::size_t i : probe) {
      const double analytic = p->grad()[i];
      const double h = probe_step(options, analytic);
      double& theta = p->value()[i];
      const double saved = theta;
      theta = saved + h;
      const double plus = evaluate(loss);
      theta = saved - h;
      const double minus = evaluate(loss);
      theta = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = relative_error(analytic, numeric);
      if (entry.probed == 0 || err > entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.analytic_at_max = analytic;
        entry.numeric_at_max = numeric;
      }
      ++entry.probed;
    }
    report.probes += entry.probed;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

GradCheckReport grad_check(const LossFn& loss, ParameterSet& params,
                           const GradCheckOptions& options) {
  std::vector<Parameter*> list;
  for (auto& p : params) list.push_back(p.get());
  return grad_check(loss, list, options);
}

}  // namespace xmodal
