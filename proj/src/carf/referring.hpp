#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "adam.hpp"
#include "camera.hpp"
#include "embedding.hpp"
#include "rng.hpp"
#include "scene.hpp"
#include "tape.hpp"

namespace carf {

struct ModelConfig {
  int64_t d = 16;        // feature / embedding dimension
  int64_t hidden = 32;   // camera MLP hidden width
  double t_con = 0.07;   // contrastive temperature
  double feat_init = 0.1;
};

// The learnable referring field over one scene: per-primitive features F, the
// cross-modal interaction weights, the camera-conditioning MLP, and the squash
// parameters that turn composited scores into probabilities.
//
// Parameter groups: {F, Wq, Wk, Wv, Wp} train at the field learning rate;
// the camera MLP and (s_out, b_out) train at the slow camera-branch rate.
// The MLP's final layer starts at exact zeros so the camera branch initially
// contributes nothing and training begins at baseline behavior.
class ReferringModel {
 public:
  ReferringModel(size_t gaussian_count, const ModelConfig& cfg, Rng& init_rng);

  ModelConfig cfg;
  ParamStore params;

  ParamTensor& F() { return params.get("F"); }
  ParamTensor& Wq() { return params.get("Wq"); }
  ParamTensor& Wk() { return params.get("Wk"); }
  ParamTensor& Wv() { return params.get("Wv"); }
  ParamTensor& Wp() { return params.get("Wp"); }
  ParamTensor& s_out() { return params.get("s_out"); }
  ParamTensor& b_out() { return params.get("b_out"); }

  size_t gaussian_count() const { return n_; }

 private:
  size_t n_ = 0;
};

// Primitive centers normalized per-axis to [-1,1] by the scene bbox
// (degenerate axes map to 0); the positional term of the interaction.
Tensor normalized_positions(const GaussianScene& scene);

// Language-conditioned feature refinement: single-head scaled-dot attention
// from each primitive (query = Wq f_i + Wp mu_i) over the word embeddings,
// residual added to F. Returns the refined feature node G (N x d) plus the F
// leaf node for reuse.
struct InteractionNodes {
  Tape::NodeId f = -1;  // F leaf
  Tape::NodeId g = -1;  // refined features
};
InteractionNodes cross_interaction_node(Tape& tape, ReferringModel& model,
                                        const Tensor& mu_normalized, const QueryEmbedding& qe);

// Camera-conditioned feature offset: MLP over the 16-entry camera descriptor.
Tape::NodeId camera_feature_node(Tape& tape, ReferringModel& model,
                                 const std::array<double, 16>& descriptor);

// Per-primitive referring scores m_i = (g_i + f_cam)^T Σ_j e_j, the camera
// term included only when enabled (f_cam < 0 node id means disabled).
Tape::NodeId score_node(Tape& tape, Tape::NodeId g, Tape::NodeId f_cam,
                        const QueryEmbedding& qe);

// Plain-value convenience wrappers (no gradients kept).
std::vector<double> score_field(ReferringModel& model, const GaussianScene& scene,
                                const QueryEmbedding& qe, const Camera* cam_for_gfce);

// Indices of the ceil(N * tau_percent / 100) highest scores, ties resolved
// toward lower indices; returned ascending.
std::vector<int64_t> select_topk(const std::vector<double>& scores, double tau_percent);

// Two-way softmax of a query dot against the strongest canonical dot:
// r = exp(f.e) / (exp(f.e) + exp(f.c*)), evaluated for each canonical
// embedding with the minimum r kept (the most conservative reading).
// Stabilized so huge dots stay finite.
double relevancy_rerank(const std::vector<double>& f, const std::vector<double>& e,
                        const std::vector<std::vector<double>>& canon);

// The canonical comparison set used by relevancy reranking.
std::vector<std::vector<double>> canonical_embeddings(int64_t d);

}  // namespace carf
