#include "losses.hpp"

#include <algorithm>
#include <cmath>

#include "common.hpp"

namespace carf {

namespace {
constexpr double kProbClampLo = 1e-7;
constexpr double kProbClampHi = 1.0 - 1e-7;
}  // namespace

Tape::NodeId bce_node(Tape& tape, Tape::NodeId prob, const Mask& target,
                      BceReduction reduction) {
  const Tensor& p = tape.value(prob);
  if (p.numel() != target.pixels())
    throw_validation("bce: probability map has " + std::to_string(p.numel()) +
                     " entries but the mask has " + std::to_string(target.pixels()) + " pixels");
  const auto n = static_cast<size_t>(p.numel());
  const double scale = reduction == BceReduction::mean ? 1.0 / static_cast<double>(n) : 1.0;

  double loss = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double ph = std::clamp(p.data[i], kProbClampLo, kProbClampHi);
    loss -= target.data[i] != 0 ? std::log(ph) : std::log(1.0 - ph);
  }
  loss *= scale;

  Mask target_copy = target;
  return tape.make_node(
      Tensor({}, {loss}), [prob, target_copy, scale](Tape& t, Tape::NodeId self) {
        const double g = t.grad(self).data[0] * scale;
        const Tensor& pv = t.value(prob);
        for (size_t i = 0; i < pv.data.size(); ++i) {
          const double raw = pv.data[i];
          if (raw < kProbClampLo || raw > kProbClampHi) continue;  // clamp is flat out here
          const double y = target_copy.data[i] != 0 ? 1.0 : 0.0;
          t.accumulate_at(prob, static_cast<int64_t>(i), g * (raw - y) / (raw * (1.0 - raw)));
        }
      });
}

Tape::NodeId two_view_node(Tape& tape, Tape::NodeId l_a, Tape::NodeId l_b, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw_validation("two_view: view weight must lie in [0, 1]");
  return tape.add(tape.scale(l_a, alpha), tape.scale(l_b, 1.0 - alpha));
}

Tape::NodeId multi_view_node(Tape& tape, const std::vector<Tape::NodeId>& per_view) {
  if (per_view.empty()) throw_validation("multi_view: no per-view losses");
  const double w = 1.0 / static_cast<double>(per_view.size());
  Tape::NodeId acc = tape.scale(per_view[0], w);
  for (size_t i = 1; i < per_view.size(); ++i) acc = tape.add(acc, tape.scale(per_view[i], w));
  return acc;
}

ContrastiveBatch ContrastiveBatch::make(std::vector<Tensor> raw_sentences, int64_t target) {
  if (raw_sentences.empty()) throw_validation("contrastive: empty sentence batch");
  if (target < 0 || target >= static_cast<int64_t>(raw_sentences.size()))
    throw_validation("contrastive: target index out of range");
  ContrastiveBatch batch;
  for (auto& s : raw_sentences) {
    double sq = 0.0;
    for (double v : s.data) sq += v * v;
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0)) throw_validation("contrastive: zero-norm sentence embedding");
    for (double& v : s.data) v /= norm;
    batch.sentences.push_back(std::move(s));
  }
  batch.target = target;
  return batch;
}

Tape::NodeId pack_scalars(Tape& tape, const std::vector<Tape::NodeId>& scalars) {
  if (scalars.empty()) throw_validation("pack_scalars: empty input");
  Tensor v({static_cast<int64_t>(scalars.size())});
  for (size_t i = 0; i < scalars.size(); ++i) v.data[i] = tape.scalar(scalars[i]);
  std::vector<Tape::NodeId> ids = scalars;
  return tape.make_node(std::move(v), [ids](Tape& t, Tape::NodeId self) {
    const Tensor& g = t.grad(self);
    for (size_t i = 0; i < ids.size(); ++i) t.accumulate_at(ids[i], 0, g.data[i]);
  });
}

Tape::NodeId contrastive_node(Tape& tape, Tape::NodeId features,
                              const std::vector<int64_t>& selected,
                              const ContrastiveBatch& batch, double t_con) {
  if (selected.empty()) throw_validation("contrastive: empty selection");
  if (!(t_con > 0.0)) throw_validation("contrastive: temperature must be > 0");
  const int64_t d = tape.value(features).cols();
  for (const auto& s : batch.sentences)
    if (s.numel() != d)
      throw_validation("contrastive: sentence embedding length does not match feature width");

  // f_g is unit-length, sentences are unit-length, so cosine = dot.
  const auto fg = tape.l2_normalize(tape.mean_rows(features, selected));

  if (batch.sentences.size() == 1) {
    const auto cos = tape.dot(fg, tape.constant(batch.sentences[0]));
    return tape.add_const(tape.scale(cos, -1.0), 1.0);
  }

  std::vector<Tape::NodeId> logits;
  logits.reserve(batch.sentences.size());
  for (const auto& s : batch.sentences)
    logits.push_back(tape.scale(tape.dot(fg, tape.constant(s)), 1.0 / t_con));
  return tape.cross_entropy_index(pack_scalars(tape, logits), batch.target);
}

Tape::NodeId total_node(Tape& tape, Tape::NodeId l_view, Tape::NodeId l_con, double lambda1,
                        double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw_validation("total loss: weights must be >= 0");
  return tape.add(tape.scale(l_view, lambda1), tape.scale(l_con, lambda2));
}

}  // namespace carf
