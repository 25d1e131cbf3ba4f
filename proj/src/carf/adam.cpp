#include "adam.hpp"

#include <cmath>

namespace carf {

Adam::Adam(ParamStore& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
  for (const ParamTensor* p : params_.all()) {
    m_.emplace_back(p->value.shape);
    v_.emplace_back(p->value.shape);
  }
}

double Adam::step() {
  auto ps = params_.all();
  if (ps.size() != m_.size()) throw_validation("adam: parameter set changed after construction");

  for (const ParamTensor* p : ps) {
    if (!p->trainable) continue;
    for (double g : p->grad.data)
      if (!std::isfinite(g)) throw_numeric("adam: non-finite gradient in parameter '" + p->name + "'");
  }

  const double norm = params_.grad_norm();
  double scale = 1.0;
  if (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;

  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));

  for (size_t k = 0; k < ps.size(); ++k) {
    ParamTensor* p = ps[k];
    if (!p->trainable) continue;
    const double lr = cfg_.lr_for(p->group);
    double* th = p->value.data.data();
    double* m = m_[k].data.data();
    double* v = v_[k].data.data();
    const double* gr = p->grad.data.data();
    const int64_t n = p->value.numel();
    for (int64_t i = 0; i < n; ++i) {
      const double g = gr[i] * scale;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      th[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  return norm;
}

}  // namespace carf
