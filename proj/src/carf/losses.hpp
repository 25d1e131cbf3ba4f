#pragma once

#include <cstdint>
#include <vector>

#include "image.hpp"
#include "tape.hpp"

namespace carf {

// How per-pixel mask losses collapse to a scalar. `mean` keeps the loss scale
// resolution-independent (the default); `sum` is the literal per-pixel total.
enum class BceReduction { mean, sum };

// Which feature rows feed the pooled contrastive embedding: the raw field F
// (view-independent, default) or the language-refined G.
enum class FgSource { f, g };

// One iteration's objective, broken out term by term. grad_norm is the
// pre-clip global gradient norm, filled in after backward by the caller.
struct LossBreakdown {
  double l_bce_a = 0.0;
  double l_bce_b = 0.0;
  double l_2view = 0.0;
  double l_con = 0.0;
  double l_total = 0.0;
  double view_weight = 0.5;  // alpha
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double grad_norm = 0.0;
};

// Binary cross-entropy of a flat probability map against a binary mask,
// probabilities clamped to [1e-7, 1-1e-7] before the logs. Differentiable to
// the probability node; the clamp zeroes the gradient outside its range.
Tape::NodeId bce_node(Tape& tape, Tape::NodeId prob, const Mask& target,
                      BceReduction reduction = BceReduction::mean);

// alpha * l_a + (1 - alpha) * l_b, built from scale/add nodes so that
// alpha = 1 feeds the b branch an exact zero and its whole subtree drops out
// of the backward sweep (see Tape).
Tape::NodeId two_view_node(Tape& tape, Tape::NodeId l_a, Tape::NodeId l_b, double alpha);

// Uniform-weight generalization for >= 3 views: sum of (1/V) * l_v.
Tape::NodeId multi_view_node(Tape& tape, const std::vector<Tape::NodeId>& per_view);

// The sentence embeddings a contrastive step discriminates between. Rows are
// unit-normalized on construction.
struct ContrastiveBatch {
  std::vector<Tensor> sentences;  // each a length-d unit vector
  int64_t target = 0;             // index of the positive sentence

  static ContrastiveBatch make(std::vector<Tensor> raw_sentences, int64_t target);
};

// Pools the selected feature rows (mean then L2-normalize -> f_g) and scores
// it against the batch: with >= 2 sentences, softmax cross-entropy over
// cos(f_g, e_k) / t_con; with a single sentence, 1 - cos(f_g, e_t).
Tape::NodeId contrastive_node(Tape& tape, Tape::NodeId features,
                              const std::vector<int64_t>& selected,
                              const ContrastiveBatch& batch, double t_con);

// lambda1 * l_view + lambda2 * l_con.
Tape::NodeId total_node(Tape& tape, Tape::NodeId l_view, Tape::NodeId l_con, double lambda1,
                        double lambda2);

// Packs rank-0 nodes into one vector node (backward scatters).
Tape::NodeId pack_scalars(Tape& tape, const std::vector<Tape::NodeId>& scalars);

}  // namespace carf
