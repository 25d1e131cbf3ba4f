#include "gradcheck.hpp"

#include <chrono>
#include <cmath>

namespace carf {

GradCheckReport gradcheck(ParamStore& params, const std::function<double(bool)>& loss_fn,
                          double step, double tol, int64_t max_per_param) {
  if (step <= 0.0) throw_validation("gradcheck: step must be positive");
  if (tol <= 0.0) throw_validation("gradcheck: tolerance must be positive");

  const auto t0 = std::chrono::steady_clock::now();

  params.zero_grad();
  const double base = loss_fn(true);
  if (!std::isfinite(base)) throw_numeric("gradcheck: loss is not finite at the base point");

  // Snapshot analytic gradients before perturbation runs overwrite anything.
  std::vector<std::vector<double>> analytic;
  for (const ParamTensor* p : params.all()) analytic.push_back(p->grad.data);

  GradCheckReport report;
  report.step = step;
  report.tol = tol;

  auto ps = params.all();
  for (size_t k = 0; k < ps.size(); ++k) {
    ParamTensor* p = ps[k];
    if (!p->trainable) continue;
    GradCheckEntry entry;
    entry.param = p->name;

    const int64_t n = p->value.numel();
    const int64_t stride =
        (max_per_param > 0 && n > max_per_param) ? (n + max_per_param - 1) / max_per_param : 1;
    for (int64_t i = 0; i < n; i += stride) {
      const double saved = p->value.data[static_cast<size_t>(i)];
      p->value.data[static_cast<size_t>(i)] = saved + step;
      const double lp = loss_fn(false);
      p->value.data[static_cast<size_t>(i)] = saved - step;
      const double lm = loss_fn(false);
      p->value.data[static_cast<size_t>(i)] = saved;
      if (!std::isfinite(lp) || !std::isfinite(lm))
        throw_numeric("gradcheck: loss is not finite while perturbing '" + p->name + "'");

      const double numeric = (lp - lm) / (2.0 * step);
      const double a = analytic[k][static_cast<size_t>(i)];
      const double rel =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++entry.checked;
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = i;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }

  report.pass = report.max_rel_err < tol;
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace carf
