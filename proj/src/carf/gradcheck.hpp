#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace carf {

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  int64_t checked = 0;
};

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  double step = 0.0;
  double tol = 0.0;
  double seconds = 0.0;
  std::vector<GradCheckEntry> entries;
};

// Central-difference verification of analytic gradients.
//
// loss_fn(true) must rebuild the computation from current parameter values,
// run backward, leave gradients in the store, and return the loss; with
// false it only needs the loss value. Relative error per element is
// |a - n| / max(1, |a|, |n|).
//
// max_per_param > 0 probes a deterministic strided subset of each parameter
// instead of every element (0 checks everything). Non-finite losses abort.
GradCheckReport gradcheck(ParamStore& params, const std::function<double(bool)>& loss_fn,
                          double step, double tol, int64_t max_per_param = 0);

}  // namespace carf
