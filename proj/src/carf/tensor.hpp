#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "common.hpp"

namespace carf {

// Dense row-major f64 tensor. Everything in the training stack is double
// precision; gradient checks at 1e-4 relative tolerance leave no room for
// single precision drift.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  }
  Tensor(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape))
      throw_validation("tensor: data size does not match shape");
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) {
      if (d < 0) throw_validation("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
  int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static std::string shape_str(const std::vector<int64_t>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
  }
};

// A named, trainable tensor with its gradient accumulator. Parameters belong
// to a learning-rate group ("field" vs "cam"): the referring features and
// interaction weights train fast, the camera branch and output squash slowly.
enum class ParamGroup : int { field = 0, cam = 1 };

struct ParamTensor {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  ParamGroup group = ParamGroup::field;

  ParamTensor(std::string n, Tensor v, ParamGroup g, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape), trainable(train), group(g) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

// Owns all parameters of a model in registration order. Registration order is
// load-bearing: the optimizer walks it, the global gradient norm sums in it,
// and checkpoints serialize in it, which is what makes sequential runs
// bit-reproducible.
class ParamStore {
 public:
  ParamTensor& add(std::string name, Tensor value, ParamGroup group, bool trainable = true) {
    for (const auto& p : params_)
      if (p->name == name) throw_validation("param store: duplicate parameter name '" + name + "'");
    params_.push_back(
        std::make_unique<ParamTensor>(std::move(name), std::move(value), group, trainable));
    return *params_.back();
  }

  ParamTensor& get(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return *p;
    throw_validation("param store: unknown parameter '" + name + "'");
  }
  const ParamTensor& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }
  bool has(const std::string& name) const {
    for (const auto& p : params_)
      if (p->name == name) return true;
    return false;
  }

  std::vector<ParamTensor*> all() {
    std::vector<ParamTensor*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }
  std::vector<const ParamTensor*> all() const {
    std::vector<const ParamTensor*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  // Global L2 norm over all trainable gradients, fixed order.
  double grad_norm() const {
    double sq = 0.0;
    for (const auto& p : params_) {
      if (!p->trainable) continue;
      for (double g : p->grad.data) sq += g * g;
    }
    return std::sqrt(sq);
  }

  size_t size() const { return params_.size(); }

 private:
  std::vector<std::unique_ptr<ParamTensor>> params_;
};

}  // namespace carf
