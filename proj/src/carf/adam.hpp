#pragma once

#include <cstdint>
#include <vector>

#include "tensor.hpp"

namespace carf {

struct AdamConfig {
  double lr_field = 2.5e-3;  // referring features + interaction weights
  double lr_cam = 1e-4;      // camera branch + output squash
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global-norm clip across all groups; <= 0 disables

  double lr_for(ParamGroup g) const { return g == ParamGroup::field ? lr_field : lr_cam; }
};

// Adam with bias correction over a ParamStore. State arrays live here, in
// parameter registration order, and serialize into checkpoints alongside the
// parameters so a resumed run continues the exact trajectory.
class Adam {
 public:
  Adam(ParamStore& params, AdamConfig cfg);

  // Validates gradients (any non-finite entry aborts, naming the parameter),
  // applies global-norm clipping, then the bias-corrected update. Returns the
  // pre-clip global gradient norm.
  double step();

  int64_t step_count() const { return step_count_; }
  void set_step_count(int64_t t) { step_count_ = t; }

  const AdamConfig& config() const { return cfg_; }

  // Moment buffers for checkpointing, index-aligned with store order.
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  ParamStore& params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  int64_t step_count_ = 0;
};

}  // namespace carf
