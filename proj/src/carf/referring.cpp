#include "referring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace carf {

ReferringModel::ReferringModel(size_t gaussian_count, const ModelConfig& config, Rng& init_rng)
    : cfg(config), n_(gaussian_count) {
  if (gaussian_count == 0) throw_validation("model: scene has no primitives");
  if (cfg.d < 2) throw_validation("model: d must be >= 2");
  if (cfg.hidden < 1) throw_validation("model: hidden width must be >= 1");

  const auto n = static_cast<int64_t>(gaussian_count);
  const double wscale = 1.0 / std::sqrt(static_cast<double>(cfg.d));

  // Draw order is fixed; changing it would silently re-seed every experiment.
  auto fill_normal = [&](Tensor& t, double scale) {
    for (double& v : t.data) v = init_rng.normal() * scale;
  };

  Tensor f({n, cfg.d});
  fill_normal(f, cfg.feat_init);
  params.add("F", std::move(f), ParamGroup::field);

  Tensor wq({cfg.d, cfg.d}), wk({cfg.d, cfg.d}), wv({cfg.d, cfg.d}), wp({cfg.d, 3});
  fill_normal(wq, wscale);
  fill_normal(wk, wscale);
  fill_normal(wv, 0.01);  // attention payload starts small: refinement, not takeover
  fill_normal(wp, 0.1);
  params.add("Wq", std::move(wq), ParamGroup::field);
  params.add("Wk", std::move(wk), ParamGroup::field);
  params.add("Wv", std::move(wv), ParamGroup::field);
  params.add("Wp", std::move(wp), ParamGroup::field);

  // Small first-layer weights keep the camera branch gentle: the descriptor
  // carries raw translation entries (several world units), and a large W1
  // would let the branch absorb global score shifts as per-view offsets
  // early in training instead of leaving them to the shared field.
  Tensor w1({cfg.hidden, 16});
  fill_normal(w1, 0.05);
  params.add("cam.W1", std::move(w1), ParamGroup::cam);
  params.add("cam.b1", Tensor({cfg.hidden}), ParamGroup::cam);
  params.add("cam.W2", Tensor({cfg.d, cfg.hidden}), ParamGroup::cam);  // exact zeros
  params.add("cam.b2", Tensor({cfg.d}), ParamGroup::cam);

  Tensor s(std::vector<int64_t>{}), b(std::vector<int64_t>{});
  // Sharp squash, "background" start: pixels without score mass sit well
  // below threshold and contribute almost no loss, so the only pressure on
  // the field is to raise target scores — a shift the features themselves
  // can supply quickly at their learning rate.
  s.data[0] = 8.0;
  b.data[0] = -4.0;
  params.add("s_out", std::move(s), ParamGroup::cam);
  params.add("b_out", std::move(b), ParamGroup::cam);
}

Tensor normalized_positions(const GaussianScene& scene) {
  Tensor out({static_cast<int64_t>(scene.gaussians.size()), 3});
  for (size_t i = 0; i < scene.gaussians.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      const double lo = scene.bbox_min[a], hi = scene.bbox_max[a];
      const double span = hi - lo;
      out.at(static_cast<int64_t>(i), a) =
          span > 0.0 ? 2.0 * (scene.gaussians[i].mu[a] - lo) / span - 1.0 : 0.0;
    }
  }
  return out;
}

InteractionNodes cross_interaction_node(Tape& tape, ReferringModel& model,
                                        const Tensor& mu_normalized, const QueryEmbedding& qe) {
  if (qe.E.rows() == 0) throw_validation("cross interaction: query has no word embeddings");
  if (qe.E.cols() != model.cfg.d)
    throw_validation("cross interaction: embedding dimension " + std::to_string(qe.E.cols()) +
                     " does not match model d=" + std::to_string(model.cfg.d));
  if (mu_normalized.rows() != static_cast<int64_t>(model.gaussian_count()))
    throw_validation("cross interaction: position rows do not match feature rows");

  InteractionNodes out;
  out.f = tape.param(model.F());
  const auto wq = tape.param(model.Wq());
  const auto wk = tape.param(model.Wk());
  const auto wv = tape.param(model.Wv());
  const auto wp = tape.param(model.Wp());
  const auto mu = tape.constant(mu_normalized);
  const auto e = tape.constant(qe.E);

  // q_i = Wq f_i + Wp mu_i, rows of Q = F Wq^T + Mu Wp^T
  const auto q = tape.add(tape.matmul(out.f, wq, false, true), tape.matmul(mu, wp, false, true));
  const auto k = tape.matmul(e, wk, false, true);                   // L x d
  const auto scores = tape.scale(tape.matmul(q, k, false, true),
                                 1.0 / std::sqrt(static_cast<double>(model.cfg.d)));
  const auto attn = tape.row_softmax(scores);                       // N x L
  const auto v = tape.matmul(e, wv, false, true);                   // L x d
  out.g = tape.add(out.f, tape.matmul(attn, v));
  return out;
}

Tape::NodeId camera_feature_node(Tape& tape, ReferringModel& model,
                                 const std::array<double, 16>& descriptor) {
  Tensor c({16});
  std::copy(descriptor.begin(), descriptor.end(), c.data.begin());
  const auto input = tape.constant(std::move(c));
  const auto h = tape.relu(tape.affine(input, tape.param(model.params.get("cam.W1")),
                                       tape.param(model.params.get("cam.b1"))));
  return tape.affine(h, tape.param(model.params.get("cam.W2")),
                     tape.param(model.params.get("cam.b2")));
}

Tape::NodeId score_node(Tape& tape, Tape::NodeId g, Tape::NodeId f_cam,
                        const QueryEmbedding& qe) {
  const int64_t d = tape.value(g).cols();
  Tensor esum({d});
  for (int64_t j = 0; j < qe.E.rows(); ++j)
    for (int64_t k = 0; k < d; ++k) esum.data[k] += qe.E.at(j, k);
  const auto esum_node = tape.constant(std::move(esum));
  const auto modulated = f_cam >= 0 ? tape.add_rowvec(g, f_cam) : g;
  return tape.matvec(modulated, esum_node);
}

std::vector<double> score_field(ReferringModel& model, const GaussianScene& scene,
                                const QueryEmbedding& qe, const Camera* cam_for_gfce) {
  Tape tape;
  const auto inter = cross_interaction_node(tape, model, normalized_positions(scene), qe);
  Tape::NodeId f_cam = -1;
  if (cam_for_gfce != nullptr)
    f_cam = camera_feature_node(tape, model, camera_descriptor(*cam_for_gfce));
  const auto m = score_node(tape, inter.g, f_cam, qe);
  return tape.value(m).data;
}

std::vector<int64_t> select_topk(const std::vector<double>& scores, double tau_percent) {
  if (scores.empty()) throw_validation("select_topk: empty score field");
  if (!(tau_percent > 0.0) || tau_percent > 100.0)
    throw_validation("select_topk: tau must lie in (0, 100]");
  const auto n = static_cast<int64_t>(scores.size());
  const auto k = static_cast<int64_t>(
      std::ceil(static_cast<double>(n) * tau_percent / 100.0));
  std::vector<int64_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
      return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    return a < b;
  });
  order.resize(static_cast<size_t>(std::max<int64_t>(1, k)));
  std::sort(order.begin(), order.end());
  return order;
}

double relevancy_rerank(const std::vector<double>& f, const std::vector<double>& e,
                        const std::vector<std::vector<double>>& canon) {
  if (canon.empty()) throw_validation("relevancy: canonical set is empty");
  auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw_validation("relevancy: embedding length mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
  };
  const double a = dot(f, e);
  // r = exp(a) / (exp(a) + exp(b)) = 1 / (1 + exp(b - a)): the minimum over
  // the canon set is attained at the largest canonical dot.
  double b = -std::numeric_limits<double>::infinity();
  for (const auto& c : canon) b = std::max(b, dot(f, c));
  const double diff = b - a;
  if (diff > 0.0) {
    const double t = std::exp(-diff);  // <= 1, never overflows
    return t / (t + 1.0);
  }
  return 1.0 / (1.0 + std::exp(diff));
}

std::vector<std::vector<double>> canonical_embeddings(int64_t d) {
  const QueryEmbedding qe = toy_embed({"object", "thing", "stuff", "texture"}, d);
  std::vector<std::vector<double>> out;
  for (int64_t j = 0; j < qe.E.rows(); ++j) {
    std::vector<double> row(static_cast<size_t>(d));
    for (int64_t k = 0; k < d; ++k) row[static_cast<size_t>(k)] = qe.E.at(j, k);
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace carf
