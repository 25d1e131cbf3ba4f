#include "tape.hpp"

#include <algorithm>
#include <cmath>

namespace carf {

namespace {

// c[m,n] += or = op(a) * op(b); plain triple loop, operands here are small.
void mm_into(double* c, const double* a, int64_t ar, int64_t ac, bool ta, const double* b,
             int64_t br, int64_t bc, bool tb) {
  const int64_t m = ta ? ac : ar;
  const int64_t k = ta ? ar : ac;
  const int64_t n = tb ? br : bc;
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t t = 0; t < k; ++t) {
        const double av = ta ? a[t * ac + i] : a[i * ac + t];
        const double bv = tb ? b[j * bc + t] : b[t * bc + j];
        acc += av * bv;
      }
      c[i * n + j] += acc;
    }
}

std::vector<int64_t> mm_shape(const Tensor& a, bool ta, const Tensor& b, bool tb,
                              const char* opname) {
  if (a.shape.size() != 2 || b.shape.size() != 2)
    throw_validation(std::string(opname) + ": operands must be rank-2, got " +
                     Tensor::shape_str(a.shape) + " and " + Tensor::shape_str(b.shape));
  const int64_t m = ta ? a.shape[1] : a.shape[0];
  const int64_t ka = ta ? a.shape[0] : a.shape[1];
  const int64_t kb = tb ? b.shape[1] : b.shape[0];
  const int64_t n = tb ? b.shape[0] : b.shape[1];
  if (ka != kb)
    throw_validation(std::string(opname) + ": inner dimensions disagree, " +
                     Tensor::shape_str(a.shape) + (ta ? "^T" : "") + " * " +
                     Tensor::shape_str(b.shape) + (tb ? "^T" : ""));
  return {m, n};
}

}  // namespace

Tape::NodeId Tape::push(Tensor value, ParamTensor* leaf, std::function<void(Tape&, NodeId)> back) {
  Node n;
  n.value = std::move(value);
  n.leaf = leaf;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Tensor& Tape::gradbuf(NodeId id) {
  Node& n = nodes_[check(id)];
  if (n.gradbuf.data.empty() && n.value.numel() > 0) n.gradbuf = Tensor(n.value.shape);
  return n.gradbuf;
}

const Tensor& Tape::grad(NodeId id) {
  Node& n = nodes_[check(id)];
  if (!n.live) {
    if (empty_grad_.shape != n.value.shape) empty_grad_ = Tensor(n.value.shape);
    else std::fill(empty_grad_.data.begin(), empty_grad_.data.end(), 0.0);
    return empty_grad_;
  }
  return n.gradbuf;
}

void Tape::accumulate(NodeId dst, const double* src, int64_t n) {
  Node& node = nodes_[check(dst)];
  if (n != node.value.numel()) throw_validation("tape: gradient size mismatch in accumulate");
  Tensor& g = gradbuf(dst);
  for (int64_t i = 0; i < n; ++i) {
    if (src[i] != 0.0) {
      g.data[static_cast<size_t>(i)] += src[i];
      node.live = true;
    }
  }
}

void Tape::accumulate_at(NodeId dst, int64_t index, double v) {
  if (v == 0.0) return;
  Node& node = nodes_[check(dst)];
  Tensor& g = gradbuf(dst);
  if (index < 0 || index >= node.value.numel())
    throw_validation("tape: gradient index out of range in accumulate_at");
  g.data[static_cast<size_t>(index)] += v;
  node.live = true;
}

double Tape::scalar(NodeId id) const {
  const Tensor& t = val(id);
  if (t.numel() != 1) throw_validation("tape: scalar() on non-scalar node");
  return t.data[0];
}

void Tape::backward(NodeId loss) {
  Node& ln = nodes_[check(loss)];
  if (ln.value.numel() != 1) throw_validation("tape: backward() requires a scalar loss node");
  if (!std::isfinite(ln.value.data[0])) throw_numeric("tape: loss is not finite");
  gradbuf(loss).data[0] = 1.0;
  ln.live = true;
  for (int32_t id = static_cast<int32_t>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.live) continue;
    if (n.back) {
      n.back(*this, id);
    } else if (n.leaf) {
      double* dst = n.leaf->grad.data.data();
      const double* src = n.gradbuf.data.data();
      const int64_t cnt = n.value.numel();
      for (int64_t i = 0; i < cnt; ++i)
        if (src[i] != 0.0) dst[i] += src[i];
    }
  }
}

Tape::NodeId Tape::param(ParamTensor& p) { return push(p.value, &p, nullptr); }

Tape::NodeId Tape::constant(Tensor t) { return push(std::move(t), nullptr, nullptr); }

Tape::NodeId Tape::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  Tensor out(mm_shape(A, trans_a, B, trans_b, "matmul"));
  mm_into(out.data.data(), A.data.data(), A.shape[0], A.shape[1], trans_a, B.data.data(),
          B.shape[0], B.shape[1], trans_b);
  return push(std::move(out), nullptr, [a, b, trans_a, trans_b](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    // dA and dB via the usual transpose algebra; worked out per flag pair.
    Tensor da(A.shape), db(B.shape);
    if (!trans_a)
      mm_into(da.data.data(), g.data.data(), g.shape[0], g.shape[1], false, B.data.data(),
              B.shape[0], B.shape[1], !trans_b);
    else
      mm_into(da.data.data(), B.data.data(), B.shape[0], B.shape[1], trans_b, g.data.data(),
              g.shape[0], g.shape[1], true);
    if (!trans_b)
      mm_into(db.data.data(), A.data.data(), A.shape[0], A.shape[1], !trans_a, g.data.data(),
              g.shape[0], g.shape[1], false);
    else
      mm_into(db.data.data(), g.data.data(), g.shape[0], g.shape[1], true, A.data.data(),
              A.shape[0], A.shape[1], trans_a);
    t.accumulate(a, da.data.data(), da.numel());
    t.accumulate(b, db.data.data(), db.numel());
  });
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (!A.same_shape(B))
    throw_validation("add: shape mismatch " + Tensor::shape_str(A.shape) + " vs " +
                     Tensor::shape_str(B.shape));
  Tensor out = A;
  for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += B.data[i];
  return push(std::move(out), nullptr, [a, b](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    t.accumulate(a, g.data.data(), g.numel());
    t.accumulate(b, g.data.data(), g.numel());
  });
}

Tape::NodeId Tape::scale(NodeId a, double c) {
  Tensor out = val(a);
  for (double& v : out.data) v *= c;
  return push(std::move(out), nullptr, [a, c](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    std::vector<double> da(g.data.size());
    for (size_t i = 0; i < da.size(); ++i) da[i] = c * g.data[i];
    t.accumulate(a, da.data(), static_cast<int64_t>(da.size()));
  });
}

Tape::NodeId Tape::add_const(NodeId a, double c) {
  Tensor out = val(a);
  for (double& v : out.data) v += c;
  return push(std::move(out), nullptr, [a](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    t.accumulate(a, g.data.data(), g.numel());
  });
}

Tape::NodeId Tape::add_rowvec(NodeId m, NodeId v) {
  const Tensor& M = val(m);
  const Tensor& V = val(v);
  if (M.shape.size() != 2 || V.shape.size() != 1 || V.shape[0] != M.shape[1])
    throw_validation("add_rowvec: need (r,c) and (c,), got " + Tensor::shape_str(M.shape) +
                     " and " + Tensor::shape_str(V.shape));
  Tensor out = M;
  for (int64_t r = 0; r < M.shape[0]; ++r)
    for (int64_t c = 0; c < M.shape[1]; ++c) out.data[r * M.shape[1] + c] += V.data[c];
  return push(std::move(out), nullptr, [m, v](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const int64_t rows = g.shape[0], cols = g.shape[1];
    t.accumulate(m, g.data.data(), g.numel());
    std::vector<double> dv(static_cast<size_t>(cols), 0.0);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c) dv[static_cast<size_t>(c)] += g.data[r * cols + c];
    t.accumulate(v, dv.data(), cols);
  });
}

Tape::NodeId Tape::relu(NodeId a) {
  Tensor out = val(a);
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), nullptr, [a](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(a);
    std::vector<double> da(g.data.size());
    for (size_t i = 0; i < da.size(); ++i) da[i] = x.data[i] > 0.0 ? g.data[i] : 0.0;
    t.accumulate(a, da.data(), static_cast<int64_t>(da.size()));
  });
}

Tape::NodeId Tape::sigmoid(NodeId a) {
  Tensor out = val(a);
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  return push(std::move(out), nullptr, [a](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    std::vector<double> da(g.data.size());
    for (size_t i = 0; i < da.size(); ++i) da[i] = g.data[i] * y.data[i] * (1.0 - y.data[i]);
    t.accumulate(a, da.data(), static_cast<int64_t>(da.size()));
  });
}

Tape::NodeId Tape::row_softmax(NodeId a) {
  const Tensor& A = val(a);
  if (A.shape.size() != 2)
    throw_validation("row_softmax: operand must be rank-2, got " + Tensor::shape_str(A.shape));
  Tensor out = A;
  const int64_t rows = A.shape[0], cols = A.shape[1];
  for (int64_t r = 0; r < rows; ++r) {
    double* row = out.data.data() + r * cols;
    double mx = row[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      denom += row[c];
    }
    for (int64_t c = 0; c < cols; ++c) row[c] /= denom;
  }
  return push(std::move(out), nullptr, [a](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    const int64_t rows = y.shape[0], cols = y.shape[1];
    std::vector<double> da(g.data.size());
    for (int64_t r = 0; r < rows; ++r) {
      const double* gr = g.data.data() + r * cols;
      const double* yr = y.data.data() + r * cols;
      double dotgy = 0.0;
      for (int64_t c = 0; c < cols; ++c) dotgy += gr[c] * yr[c];
      for (int64_t c = 0; c < cols; ++c) da[static_cast<size_t>(r * cols + c)] = (gr[c] - dotgy) * yr[c];
    }
    t.accumulate(a, da.data(), static_cast<int64_t>(da.size()));
  });
}

Tape::NodeId Tape::affine(NodeId x, NodeId w, NodeId b) {
  const Tensor& X = val(x);
  const Tensor& W = val(w);
  const Tensor& B = val(b);
  if (W.shape.size() != 2 || X.shape.size() != 1 || B.shape.size() != 1)
    throw_validation("affine: need W (m,n), x (n,), b (m,)");
  const int64_t m = W.shape[0], n = W.shape[1];
  if (X.shape[0] != n)
    throw_validation("affine: x has " + std::to_string(X.shape[0]) + " entries, W expects " +
                     std::to_string(n));
  if (B.shape[0] != m)
    throw_validation("affine: b has " + std::to_string(B.shape[0]) + " entries, W produces " +
                     std::to_string(m));
  Tensor out({m});
  for (int64_t i = 0; i < m; ++i) {
    double acc = B.data[i];
    for (int64_t j = 0; j < n; ++j) acc += W.data[i * n + j] * X.data[j];
    out.data[i] = acc;
  }
  return push(std::move(out), nullptr, [x, w, b](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& X = t.value(x);
    const Tensor& W = t.value(w);
    const int64_t m = W.shape[0], n = W.shape[1];
    std::vector<double> dw(static_cast<size_t>(m * n));
    std::vector<double> dx(static_cast<size_t>(n), 0.0);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) {
        dw[static_cast<size_t>(i * n + j)] = g.data[i] * X.data[j];
        dx[static_cast<size_t>(j)] += W.data[i * n + j] * g.data[i];
      }
    t.accumulate(w, dw.data(), m * n);
    t.accumulate(x, dx.data(), n);
    t.accumulate(b, g.data.data(), m);
  });
}

Tape::NodeId Tape::matvec(NodeId m, NodeId v) {
  const Tensor& M = val(m);
  const Tensor& V = val(v);
  if (M.shape.size() != 2 || V.shape.size() != 1 || M.shape[1] != V.shape[0])
    throw_validation("matvec: need (r,c) and (c,), got " + Tensor::shape_str(M.shape) + " and " +
                     Tensor::shape_str(V.shape));
  const int64_t rows = M.shape[0], cols = M.shape[1];
  Tensor out({rows});
  for (int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int64_t c = 0; c < cols; ++c) acc += M.data[r * cols + c] * V.data[c];
    out.data[r] = acc;
  }
  return push(std::move(out), nullptr, [m, v](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& M = t.value(m);
    const Tensor& V = t.value(v);
    const int64_t rows = M.shape[0], cols = M.shape[1];
    std::vector<double> dm(static_cast<size_t>(rows * cols));
    std::vector<double> dv(static_cast<size_t>(cols), 0.0);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c) {
        dm[static_cast<size_t>(r * cols + c)] = g.data[r] * V.data[c];
        dv[static_cast<size_t>(c)] += M.data[r * cols + c] * g.data[r];
      }
    t.accumulate(m, dm.data(), rows * cols);
    t.accumulate(v, dv.data(), cols);
  });
}

Tape::NodeId Tape::dot(NodeId a, NodeId b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.shape.size() != 1 || !A.same_shape(B))
    throw_validation("dot: need equal-length vectors, got " + Tensor::shape_str(A.shape) +
                     " and " + Tensor::shape_str(B.shape));
  double acc = 0.0;
  for (int64_t i = 0; i < A.numel(); ++i) acc += A.data[i] * B.data[i];
  Tensor out(std::vector<int64_t>{});
  out.data[0] = acc;
  return push(std::move(out), nullptr, [a, b](Tape& t, NodeId self) {
    const double g = t.grad(self).data[0];
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    std::vector<double> da(A.data.size()), db(B.data.size());
    for (size_t i = 0; i < da.size(); ++i) {
      da[i] = g * B.data[i];
      db[i] = g * A.data[i];
    }
    t.accumulate(a, da.data(), static_cast<int64_t>(da.size()));
    t.accumulate(b, db.data(), static_cast<int64_t>(db.size()));
  });
}

Tape::NodeId Tape::sum(NodeId a) {
  const Tensor& A = val(a);
  double acc = 0.0;
  for (double v : A.data) acc += v;
  Tensor out(std::vector<int64_t>{});
  out.data[0] = acc;
  return push(std::move(out), nullptr, [a](Tape& t, NodeId self) {
    const double g = t.grad(self).data[0];
    const int64_t n = t.value(a).numel();
    std::vector<double> da(static_cast<size_t>(n), g);
    t.accumulate(a, da.data(), n);
  });
}

Tape::NodeId Tape::mean(NodeId a) {
  const Tensor& A = val(a);
  if (A.numel() == 0) throw_validation("mean: empty operand");
  double acc = 0.0;
  for (double v : A.data) acc += v;
  Tensor out(std::vector<int64_t>{});
  out.data[0] = acc / static_cast<double>(A.numel());
  return push(std::move(out), nullptr, [a](Tape& t, NodeId self) {
    const int64_t n = t.value(a).numel();
    const double g = t.grad(self).data[0] / static_cast<double>(n);
    std::vector<double> da(static_cast<size_t>(n), g);
    t.accumulate(a, da.data(), n);
  });
}

Tape::NodeId Tape::mean_rows(NodeId x, std::vector<int64_t> indices) {
  const Tensor& X = val(x);
  if (X.shape.size() != 2)
    throw_validation("mean_rows: operand must be rank-2, got " + Tensor::shape_str(X.shape));
  if (indices.empty()) throw_validation("mean_rows: empty index set");
  const int64_t rows = X.shape[0], cols = X.shape[1];
  for (int64_t i : indices)
    if (i < 0 || i >= rows)
      throw_validation("mean_rows: row index " + std::to_string(i) + " out of range [0," +
                       std::to_string(rows) + ")");
  Tensor out({cols});
  for (int64_t i : indices)
    for (int64_t c = 0; c < cols; ++c) out.data[c] += X.data[i * cols + c];
  const double inv = 1.0 / static_cast<double>(indices.size());
  for (double& v : out.data) v *= inv;
  return push(std::move(out), nullptr, [x, idx = std::move(indices)](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& X = t.value(x);
    const int64_t cols = X.shape[1];
    const double inv = 1.0 / static_cast<double>(idx.size());
    std::vector<double> dx(X.data.size(), 0.0);
    for (int64_t i : idx)
      for (int64_t c = 0; c < cols; ++c) dx[static_cast<size_t>(i * cols + c)] += g.data[c] * inv;
    t.accumulate(x, dx.data(), static_cast<int64_t>(dx.size()));
  });
}

Tape::NodeId Tape::l2_normalize(NodeId x) {
  const Tensor& X = val(x);
  if (X.shape.size() != 1) throw_validation("l2_normalize: operand must be a vector");
  double sq = 0.0;
  for (double v : X.data) sq += v * v;
  const double r = std::sqrt(sq);
  if (r == 0.0) throw_numeric("l2_normalize: zero vector");
  Tensor out = X;
  for (double& v : out.data) v /= r;
  return push(std::move(out), nullptr, [x, r](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    double gy = 0.0;
    for (size_t i = 0; i < y.data.size(); ++i) gy += g.data[i] * y.data[i];
    std::vector<double> dx(y.data.size());
    for (size_t i = 0; i < dx.size(); ++i) dx[i] = (g.data[i] - y.data[i] * gy) / r;
    t.accumulate(x, dx.data(), static_cast<int64_t>(dx.size()));
  });
}

Tape::NodeId Tape::cross_entropy_index(NodeId logits, int64_t target) {
  const Tensor& L = val(logits);
  if (L.shape.size() != 1) throw_validation("cross_entropy_index: logits must be a vector");
  if (target < 0 || target >= L.numel())
    throw_validation("cross_entropy_index: target index out of range");
  double mx = L.data[0];
  for (double v : L.data) mx = std::max(mx, v);
  double denom = 0.0;
  for (double v : L.data) denom += std::exp(v - mx);
  const double lse = mx + std::log(denom);
  Tensor out(std::vector<int64_t>{});
  out.data[0] = lse - L.data[target];
  return push(std::move(out), nullptr, [logits, target, mx, denom](Tape& t, NodeId self) {
    const double g = t.grad(self).data[0];
    const Tensor& L = t.value(logits);
    std::vector<double> dl(L.data.size());
    for (size_t i = 0; i < dl.size(); ++i) {
      const double p = std::exp(L.data[i] - mx) / denom;
      dl[i] = g * (p - (static_cast<int64_t>(i) == target ? 1.0 : 0.0));
    }
    t.accumulate(logits, dl.data(), static_cast<int64_t>(dl.size()));
  });
}

Tape::NodeId Tape::make_node(Tensor value, std::function<void(Tape&, NodeId)> backward) {
  return push(std::move(value), nullptr, std::move(backward));
}

}  // namespace carf
