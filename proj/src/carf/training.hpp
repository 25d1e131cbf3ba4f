#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "adam.hpp"
#include "camera.hpp"
#include "embedding.hpp"
#include "gradcheck.hpp"
#include "losses.hpp"
#include "rasterizer.hpp"
#include "referring.hpp"
#include "rng.hpp"
#include "scene.hpp"
#include "supervision.hpp"

namespace carf {

// Everything one training run depends on. Serialized as a flat JSON object
// whose keys equal these field names; every field has a same-named CLI flag.
struct TrainConfig {
  int64_t iterations = 2000;
  double lr_field = 2.5e-3;   // referring field + interaction weights
  double lr_cam = 1e-4;       // camera MLP + output squash ("gating") pair
  int64_t d = 16;
  int64_t hidden = 32;
  double tau = 10.0;          // top-score percentile feeding the contrastive pool
  double alpha_view = 0.5;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  int64_t num_views_per_iter = 2;
  double min_overlap = 0.30;
  bool gfce_enabled = true;
  bool itpvs_enabled = true;
  uint64_t seed = 1;
  std::string bce_reduction = "mean";  // "mean" | "sum"
  std::string fg_source = "f";         // "f" (raw field) | "g" (language-refined)
  double grad_clip = 1.0;
  double t_con = 0.07;
  double feat_init = 0.1;

  // Supervision plumbing. pseudo_k = 0 trains directly on the analytic
  // label masks; pseudo_k >= 1 synthesizes that many noisy candidates per
  // (query, view) and trains on the confidence-weighted pick.
  int64_t pseudo_k = 0;
  double pseudo_noise = 0.0;
  double corrupt_fraction = 0.0;  // share of train views whose masks get damaged
  double corrupt_severity = 0.0;  // morphology radius of the damage

  int64_t checkpoint_every = 0;  // 0 = final checkpoint only
  int64_t eval_every = 0;        // 0 = no in-training mIoU curve
  int threads = 1;

  // Debug switch: run the camera branch but zero its output, so the
  // modulation is exactly null while the MLP stays in the graph.
  bool gfce_force_zero = false;

  BceReduction bce_reduction_kind() const;
  FgSource fg_source_kind() const;
  void validate() const;
};

TrainConfig load_train_config(const std::string& path);
TrainConfig parse_train_config_json(const std::string& text);
void save_train_config(const TrainConfig& cfg, const std::string& path);
// Canonical JSON used for both the snapshot and the config hash.
std::string train_config_json(const TrainConfig& cfg);

// Desk-scale defaults (the struct defaults) vs the patience-required preset
// (30k iterations, d=128, hidden 256).
TrainConfig desk_preset();
TrainConfig paper_preset();

// Per-(query, view) supervision masks plus how they were produced.
struct SupervisionSet {
  std::vector<std::vector<Mask>> masks;  // [query][train view]
  std::vector<CorruptionReport> corruption;  // per query; empty if fraction = 0
};

// Immutable per-run state shared by every iteration: resolved queries,
// projected splats per train view (geometry is frozen), supervision masks,
// the pair sampler, and the normalized positions.
struct TrainContext {
  const GaussianScene* scene = nullptr;
  std::vector<Camera> train_cams;
  std::vector<std::string> query_ids;
  std::vector<QueryEmbedding> queries;
  ContrastiveBatch batch;  // all sentence embeddings; target set per iteration
  SupervisionSet supervision;
  std::vector<std::vector<Splat2D>> splats;  // per train view
  Tensor mu_normalized;
  std::unique_ptr<PairSampler> sampler;
  RasterParams raster;

  // Optional held-out views for the in-training mIoU curve (eval_every).
  std::vector<Camera> eval_cams;
  std::vector<int> eval_view_ids;
};

TrainContext build_train_context(const GaussianScene& scene, const std::vector<Camera>& train_cams,
                                 const std::vector<Query>& queries, const TrainConfig& cfg,
                                 const std::string& query_file_dir = "");

// Builds one iteration's full objective on the given tape: language-refined
// scores per view (camera-modulated when enabled), composited masks, the
// weighted per-view losses, and the contrastive term over the top-scoring
// selection of the primary view. `fixed_selection` pins the contrastive pool
// (gradient checking probes the locally smooth branch; top-k is piecewise
// constant); normal training recomputes it.
LossBreakdown build_iteration_loss(Tape& tape, ReferringModel& model, const TrainContext& ctx,
                                   const TrainConfig& cfg, const std::vector<int>& views,
                                   size_t query_index, Tape::NodeId* out_total,
                                   const std::vector<int64_t>* fixed_selection = nullptr,
                                   std::vector<int64_t>* out_selection = nullptr);

// One optimization step: sample views, score per view, composite, assemble
// the objective, backprop, clip, apply. Returns the loss breakdown with the
// pre-clip gradient norm filled in. Aborts (numeric error, naming the
// iteration) on a non-finite total.
LossBreakdown train_iteration(ReferringModel& model, TrainContext& ctx, const TrainConfig& cfg,
                              Adam& adam, Rng& view_rng, int64_t iter_index);

// Central-difference check of the full iteration objective on a fresh model
// (fixed sampled views, pinned contrastive selection). max_per_param > 0
// probes a strided subset of each parameter's entries.
GradCheckReport gradcheck_full_loss(const GaussianScene& scene, const std::vector<Camera>& cams,
                                    const std::vector<Query>& queries, const TrainConfig& cfg,
                                    double step = 1e-5, double tol = 1e-4,
                                    int64_t max_per_param = 0);

// Full training state at one iteration boundary, exact enough to continue a
// run bit-identically.
struct TrainState {
  int64_t iteration = 0;
  std::array<uint64_t, 4> view_rng_state{};
};

void save_training_checkpoint(const std::string& path, const ReferringModel& model,
                              const Adam& adam, const TrainState& state);
// Restores parameters/optimizer into an existing model of matching shape.
TrainState load_training_checkpoint(const std::string& path, ReferringModel& model, Adam& adam);
// Shape probe so callers can construct the model before restoring.
struct CheckpointShape {
  int64_t n = 0, d = 0, hidden = 0;
};
CheckpointShape peek_checkpoint_shape(const std::string& path);

struct RunRecord {
  TrainConfig config;
  std::string config_snapshot_path;
  std::string loss_csv_path;
  std::string checkpoint_path;
  int64_t iterations_run = 0;
  double seconds_total = 0.0;
  double seconds_per_epoch = 0.0;  // epoch = one round-robin pass over queries
  LossBreakdown final_loss;
};

// Runs cfg.iterations round-robin over queries, appending one CSV row per
// iteration; writes the config snapshot, periodic/final checkpoints, and a
// run_record.json under out_dir. resume_from continues an earlier run's
// checkpoint bit-exactly.
RunRecord train(ReferringModel& model, TrainContext& ctx, const TrainConfig& cfg,
                const std::string& out_dir, const std::string& resume_from = "");

void save_run_record(const RunRecord& record, const std::string& path);

}  // namespace carf
