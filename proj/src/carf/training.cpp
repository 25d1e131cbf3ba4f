#include "training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "checkpoint.hpp"
#include "common.hpp"
#include "eval.hpp"

namespace carf {

namespace fs = std::filesystem;

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Rng named_substream(uint64_t seed, const std::string& tag) {
  return Rng::substream(seed, fnv1a64(tag.data(), tag.size()));
}

}  // namespace

BceReduction TrainConfig::bce_reduction_kind() const {
  if (bce_reduction == "mean") return BceReduction::mean;
  if (bce_reduction == "sum") return BceReduction::sum;
  throw_validation("config: bce_reduction must be 'mean' or 'sum', got '" + bce_reduction + "'");
}

FgSource TrainConfig::fg_source_kind() const {
  if (fg_source == "f") return FgSource::f;
  if (fg_source == "g") return FgSource::g;
  throw_validation("config: fg_source must be 'f' or 'g', got '" + fg_source + "'");
}

void TrainConfig::validate() const {
  if (iterations < 0) throw_validation("config: iterations must be >= 0");
  if (!(lr_field > 0.0) || !(lr_cam > 0.0)) throw_validation("config: learning rates must be > 0");
  if (d < 2) throw_validation("config: d must be >= 2");
  if (hidden < 1) throw_validation("config: hidden must be >= 1");
  if (!(tau > 0.0) || tau > 100.0) throw_validation("config: tau must lie in (0, 100]");
  if (alpha_view < 0.0 || alpha_view > 1.0)
    throw_validation("config: alpha_view must lie in [0, 1]");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw_validation("config: lambda weights must be >= 0");
  if (num_views_per_iter < 1) throw_validation("config: num_views_per_iter must be >= 1");
  if (min_overlap < 0.0 || min_overlap > 1.0)
    throw_validation("config: min_overlap must lie in [0, 1]");
  if (!(t_con > 0.0)) throw_validation("config: t_con must be > 0");
  if (!(feat_init > 0.0)) throw_validation("config: feat_init must be > 0");
  if (pseudo_k < 0) throw_validation("config: pseudo_k must be >= 0");
  if (pseudo_noise < 0.0) throw_validation("config: pseudo_noise must be >= 0");
  if (corrupt_fraction < 0.0 || corrupt_fraction > 1.0)
    throw_validation("config: corrupt_fraction must lie in [0, 1]");
  if (corrupt_severity < 0.0) throw_validation("config: corrupt_severity must be >= 0");
  if (checkpoint_every < 0) throw_validation("config: checkpoint_every must be >= 0");
  if (eval_every < 0) throw_validation("config: eval_every must be >= 0");
  if (threads < 0) throw_validation("config: threads must be >= 0");
  bce_reduction_kind();
  fg_source_kind();
}

std::string train_config_json(const TrainConfig& c) {
  std::string out = "{\n";
  auto num = [&](const char* k, double v) { out += std::string("  \"") + k + "\": " + fmt_g(v) + ",\n"; };
  auto integer = [&](const char* k, int64_t v) {
    out += std::string("  \"") + k + "\": " + std::to_string(v) + ",\n";
  };
  auto boolean = [&](const char* k, bool v) {
    out += std::string("  \"") + k + "\": " + (v ? "true" : "false") + ",\n";
  };
  auto str = [&](const char* k, const std::string& v) {
    out += std::string("  \"") + k + "\": \"" + v + "\",\n";
  };
  integer("iterations", c.iterations);
  num("lr_field", c.lr_field);
  num("lr_cam", c.lr_cam);
  integer("d", c.d);
  integer("hidden", c.hidden);
  num("tau", c.tau);
  num("alpha_view", c.alpha_view);
  num("lambda1", c.lambda1);
  num("lambda2", c.lambda2);
  integer("num_views_per_iter", c.num_views_per_iter);
  num("min_overlap", c.min_overlap);
  boolean("gfce_enabled", c.gfce_enabled);
  boolean("itpvs_enabled", c.itpvs_enabled);
  integer("seed", static_cast<int64_t>(c.seed));
  str("bce_reduction", c.bce_reduction);
  str("fg_source", c.fg_source);
  num("grad_clip", c.grad_clip);
  num("t_con", c.t_con);
  num("feat_init", c.feat_init);
  integer("pseudo_k", c.pseudo_k);
  num("pseudo_noise", c.pseudo_noise);
  num("corrupt_fraction", c.corrupt_fraction);
  num("corrupt_severity", c.corrupt_severity);
  integer("checkpoint_every", c.checkpoint_every);
  integer("eval_every", c.eval_every);
  integer("threads", c.threads);
  boolean("gfce_force_zero", c.gfce_force_zero);
  out.pop_back();
  out.pop_back();  // trailing ",\n"
  out += "\n}\n";
  return out;
}

void save_train_config(const TrainConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw_io("config: cannot write '" + path + "'");
  out << train_config_json(cfg);
  if (!out) throw_io("config: write failed for '" + path + "'");
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_io("config: cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_train_config_json(text);
  } catch (const Error& e) {
    throw Error(e.kind(), std::string(e.what()) + " (while reading '" + path + "')");
  }
}

TrainConfig parse_train_config_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw_io(std::string("config: not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw_validation("config: the document must hold a JSON object");

  TrainConfig c;
  auto grab = [&](const char* k, auto& field) {
    using T = std::decay_t<decltype(field)>;
    if (!j.contains(k)) return;
    try {
      field = j.at(k).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw_validation(std::string("config: field '") + k + "' has the wrong type");
    }
  };
  grab("iterations", c.iterations);
  grab("lr_field", c.lr_field);
  grab("lr_cam", c.lr_cam);
  grab("d", c.d);
  grab("hidden", c.hidden);
  grab("tau", c.tau);
  grab("alpha_view", c.alpha_view);
  grab("lambda1", c.lambda1);
  grab("lambda2", c.lambda2);
  grab("num_views_per_iter", c.num_views_per_iter);
  grab("min_overlap", c.min_overlap);
  grab("gfce_enabled", c.gfce_enabled);
  grab("itpvs_enabled", c.itpvs_enabled);
  grab("seed", c.seed);
  grab("bce_reduction", c.bce_reduction);
  grab("fg_source", c.fg_source);
  grab("grad_clip", c.grad_clip);
  grab("t_con", c.t_con);
  grab("feat_init", c.feat_init);
  grab("pseudo_k", c.pseudo_k);
  grab("pseudo_noise", c.pseudo_noise);
  grab("corrupt_fraction", c.corrupt_fraction);
  grab("corrupt_severity", c.corrupt_severity);
  grab("checkpoint_every", c.checkpoint_every);
  grab("eval_every", c.eval_every);
  grab("threads", c.threads);
  grab("gfce_force_zero", c.gfce_force_zero);
  for (const auto& [key, _] : j.items()) {
    static const char* known[] = {
        "iterations",     "lr_field",       "lr_cam",           "d",
        "hidden",         "tau",            "alpha_view",       "lambda1",
        "lambda2",        "num_views_per_iter", "min_overlap",  "gfce_enabled",
        "itpvs_enabled",  "seed",           "bce_reduction",    "fg_source",
        "grad_clip",      "t_con",          "feat_init",        "pseudo_k",
        "pseudo_noise",   "corrupt_fraction", "corrupt_severity", "checkpoint_every",
        "eval_every",     "threads",        "gfce_force_zero"};
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw_validation("config: unknown field '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig desk_preset() { return TrainConfig{}; }

TrainConfig paper_preset() {
  TrainConfig c;
  c.iterations = 30000;
  c.d = 128;
  c.hidden = 256;
  return c;
}

TrainContext build_train_context(const GaussianScene& scene, const std::vector<Camera>& train_cams,
                                 const std::vector<Query>& queries, const TrainConfig& cfg,
                                 const std::string& query_file_dir) {
  cfg.validate();
  if (train_cams.empty()) throw_validation("training: no train views");
  if (queries.empty()) throw_validation("training: no queries");

  TrainContext ctx;
  ctx.scene = &scene;
  ctx.train_cams = train_cams;
  ctx.mu_normalized = normalized_positions(scene);

  for (const auto& q : queries) {
    ctx.query_ids.push_back(q.id);
    ctx.queries.push_back(resolve_query_embedding(q, cfg.d, query_file_dir));
  }
  std::vector<Tensor> bank;
  for (const auto& qe : ctx.queries)
    bank.push_back(Tensor({cfg.d}, std::vector<double>(qe.e_t.begin(), qe.e_t.end())));
  ctx.batch = ContrastiveBatch::make(std::move(bank), 0);

  for (const auto& cam : train_cams) ctx.splats.push_back(project_splats(cam, scene, ctx.raster));

  // Supervision masks, in a fixed draw order: for each query, one substream
  // drives candidate synthesis across views (ascending), then one more drives
  // the view-corruption pass. Streams are independent of every flag except
  // the supervision knobs themselves.
  for (size_t q = 0; q < ctx.queries.size(); ++q) {
    std::vector<Mask> view_masks;
    Rng sup_rng = named_substream(cfg.seed, "supervision/query" + std::to_string(q));
    for (size_t v = 0; v < train_cams.size(); ++v) {
      Mask gt = gt_mask(train_cams[v], scene, ctx.queries[q].target_label, 0.5, ctx.raster,
                        cfg.threads);
      if (cfg.pseudo_k > 0 && !gt.empty_mask()) {
        const auto cands = synth_candidates(gt, cfg.pseudo_k, cfg.pseudo_noise, sup_rng);
        view_masks.push_back(select_pseudo_mask(cands).mask);
      } else {
        // An empty analytic mask has nothing to perturb; train against it
        // directly (the target is simply invisible from this view).
        view_masks.push_back(std::move(gt));
      }
    }
    CorruptionReport report;
    if (cfg.corrupt_fraction > 0.0) {
      Rng cor_rng = named_substream(cfg.seed, "corrupt/query" + std::to_string(q));
      report = corrupt_view_masks(view_masks, cfg.corrupt_fraction, cfg.corrupt_severity, cor_rng);
    }
    ctx.supervision.masks.push_back(std::move(view_masks));
    ctx.supervision.corruption.push_back(std::move(report));
  }

  ctx.sampler = std::make_unique<PairSampler>(train_cams, scene, cfg.min_overlap);
  return ctx;
}

LossBreakdown build_iteration_loss(Tape& tape, ReferringModel& model, const TrainContext& ctx,
                                   const TrainConfig& cfg, const std::vector<int>& views,
                                   size_t query_index, Tape::NodeId* out_total,
                                   const std::vector<int64_t>* fixed_selection,
                                   std::vector<int64_t>* out_selection) {
  const QueryEmbedding& qe = ctx.queries[query_index];
  const InteractionNodes inter = cross_interaction_node(tape, model, ctx.mu_normalized, qe);
  const auto s_node = tape.param(model.s_out());
  const auto b_node = tape.param(model.b_out());

  std::vector<Tape::NodeId> score_nodes, view_losses;
  for (const int v : views) {
    const Camera& cam = ctx.train_cams[static_cast<size_t>(v)];
    Tape::NodeId f_cam = -1;
    if (cfg.gfce_enabled) {
      f_cam = camera_feature_node(tape, model, camera_descriptor(cam));
      if (cfg.gfce_force_zero) f_cam = tape.scale(f_cam, 0.0);
    }
    const auto scores = score_node(tape, inter.g, f_cam, qe);
    const auto prob = composite_node(tape, scores, s_node, b_node,
                                     ctx.splats[static_cast<size_t>(v)], cam.width, cam.height,
                                     ctx.raster, cfg.threads);
    const auto l = bce_node(tape, prob, ctx.supervision.masks[query_index][static_cast<size_t>(v)],
                            cfg.bce_reduction_kind());
    score_nodes.push_back(scores);
    view_losses.push_back(l);
  }

  Tape::NodeId l_view;
  if (view_losses.size() == 1)
    l_view = view_losses[0];
  else if (view_losses.size() == 2)
    l_view = two_view_node(tape, view_losses[0], view_losses[1], cfg.alpha_view);
  else
    l_view = multi_view_node(tape, view_losses);

  const std::vector<int64_t> selected =
      fixed_selection ? *fixed_selection : select_topk(tape.value(score_nodes[0]).data, cfg.tau);
  if (out_selection) *out_selection = selected;
  ContrastiveBatch batch = ctx.batch;
  batch.target = static_cast<int64_t>(query_index);
  const auto features = cfg.fg_source_kind() == FgSource::f ? inter.f : inter.g;
  const auto l_con = contrastive_node(tape, features, selected, batch, cfg.t_con);
  const auto total = total_node(tape, l_view, l_con, cfg.lambda1, cfg.lambda2);

  LossBreakdown bd;
  bd.l_bce_a = tape.scalar(view_losses[0]);
  bd.l_bce_b = view_losses.size() > 1 ? tape.scalar(view_losses[1]) : 0.0;
  bd.l_2view = tape.scalar(l_view);
  bd.l_con = tape.scalar(l_con);
  bd.l_total = tape.scalar(total);
  bd.view_weight = cfg.alpha_view;
  bd.lambda1 = cfg.lambda1;
  bd.lambda2 = cfg.lambda2;
  *out_total = total;
  return bd;
}

LossBreakdown train_iteration(ReferringModel& model, TrainContext& ctx, const TrainConfig& cfg,
                              Adam& adam, Rng& view_rng, int64_t iter_index) {
  const auto nq = static_cast<int64_t>(ctx.queries.size());
  const auto qidx = static_cast<size_t>(iter_index % nq);
  const int count = cfg.itpvs_enabled ? static_cast<int>(cfg.num_views_per_iter) : 1;
  const std::vector<int> views = ctx.sampler->sample_views(view_rng, count);

  Tape tape;
  Tape::NodeId total = -1;
  LossBreakdown bd = build_iteration_loss(tape, model, ctx, cfg, views, qidx, &total);

  if (!std::isfinite(bd.l_total))
    throw_numeric("iteration " + std::to_string(iter_index) +
                  ": non-finite total loss (bce_a=" + fmt_g(bd.l_bce_a) +
                  ", bce_b=" + fmt_g(bd.l_bce_b) + ", con=" + fmt_g(bd.l_con) + ")");

  model.params.zero_grad();
  tape.backward(total);
  bd.grad_norm = adam.step();
  return bd;
}

GradCheckReport gradcheck_full_loss(const GaussianScene& scene, const std::vector<Camera>& cams,
                                    const std::vector<Query>& queries, const TrainConfig& cfg,
                                    double step, double tol, int64_t max_per_param) {
  TrainContext ctx = build_train_context(scene, cams, queries, cfg, "");
  Rng init_rng = named_substream(cfg.seed, "init");
  ReferringModel model(scene.gaussians.size(),
                       ModelConfig{cfg.d, cfg.hidden, cfg.t_con, cfg.feat_init}, init_rng);

  Rng view_rng = named_substream(cfg.seed, "views");
  const int count = cfg.itpvs_enabled ? static_cast<int>(cfg.num_views_per_iter) : 1;
  const std::vector<int> views = ctx.sampler->sample_views(view_rng, count);

  // Pin the contrastive pool at the unperturbed scores so finite differences
  // and the analytic gradient walk the same piecewise-smooth branch.
  std::vector<int64_t> selection;
  {
    Tape tape;
    Tape::NodeId total = -1;
    build_iteration_loss(tape, model, ctx, cfg, views, 0, &total, nullptr, &selection);
  }

  auto loss_fn = [&](bool with_grad) {
    Tape tape;
    Tape::NodeId total = -1;
    build_iteration_loss(tape, model, ctx, cfg, views, 0, &total, &selection);
    if (with_grad) {
      model.params.zero_grad();
      tape.backward(total);
    }
    return tape.scalar(total);
  };
  return gradcheck(model.params, loss_fn, step, tol, max_per_param);
}

namespace {

// Splits each RNG word into two exactly representable 32-bit halves; raw
// 64-bit patterns could alias NaN payloads inside an f64 container.
Tensor pack_rng_state(const std::array<uint64_t, 4>& s) {
  Tensor t({8});
  for (size_t i = 0; i < 4; ++i) {
    t.data[2 * i] = static_cast<double>(s[i] >> 32);
    t.data[2 * i + 1] = static_cast<double>(s[i] & 0xffffffffull);
  }
  return t;
}

std::array<uint64_t, 4> unpack_rng_state(const Tensor& t) {
  if (t.numel() != 8) throw_validation("checkpoint: rng state record must hold 8 values");
  std::array<uint64_t, 4> s{};
  for (size_t i = 0; i < 4; ++i) {
    const auto hi = static_cast<uint64_t>(t.data[2 * i]);
    const auto lo = static_cast<uint64_t>(t.data[2 * i + 1]);
    s[i] = (hi << 32) | lo;
  }
  return s;
}

Tensor scalar_tensor(double v) { return Tensor({}, {v}); }

}  // namespace

void save_training_checkpoint(const std::string& path, const ReferringModel& model,
                              const Adam& adam, const TrainState& state) {
  checkpoint::NamedTensors items;
  items.emplace_back("shape/n", scalar_tensor(static_cast<double>(model.gaussian_count())));
  items.emplace_back("shape/d", scalar_tensor(static_cast<double>(model.cfg.d)));
  items.emplace_back("shape/hidden", scalar_tensor(static_cast<double>(model.cfg.hidden)));
  const auto params = model.params.all();
  const auto& m = adam.first_moments();
  const auto& v = adam.second_moments();
  if (m.size() != params.size() || v.size() != params.size())
    throw_validation("checkpoint: optimizer state is not aligned with the parameter store");
  for (size_t i = 0; i < params.size(); ++i) {
    items.emplace_back("param/" + params[i]->name, params[i]->value);
    items.emplace_back("adam/m/" + params[i]->name, m[i]);
    items.emplace_back("adam/v/" + params[i]->name, v[i]);
  }
  items.emplace_back("adam/t", scalar_tensor(static_cast<double>(adam.step_count())));
  items.emplace_back("train/iteration", scalar_tensor(static_cast<double>(state.iteration)));
  items.emplace_back("train/view_rng", pack_rng_state(state.view_rng_state));
  checkpoint::save(path, items);
}

TrainState load_training_checkpoint(const std::string& path, ReferringModel& model, Adam& adam) {
  const auto items = checkpoint::load(path);
  const auto want_n = static_cast<int64_t>(model.gaussian_count());
  if (static_cast<int64_t>(checkpoint::find(items, "shape/n").data[0]) != want_n ||
      static_cast<int64_t>(checkpoint::find(items, "shape/d").data[0]) != model.cfg.d ||
      static_cast<int64_t>(checkpoint::find(items, "shape/hidden").data[0]) != model.cfg.hidden)
    throw_validation("checkpoint: model shape in '" + path +
                     "' does not match the constructed model");

  auto params = model.params.all();
  auto& m = adam.first_moments();
  auto& v = adam.second_moments();
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor& pv = checkpoint::find(items, "param/" + params[i]->name);
    const Tensor& mv = checkpoint::find(items, "adam/m/" + params[i]->name);
    const Tensor& vv = checkpoint::find(items, "adam/v/" + params[i]->name);
    if (!pv.same_shape(params[i]->value) || !mv.same_shape(params[i]->value) ||
        !vv.same_shape(params[i]->value))
      throw_validation("checkpoint: shape mismatch for parameter '" + params[i]->name + "'");
    params[i]->value = pv;
    m[i] = mv;
    v[i] = vv;
  }
  adam.set_step_count(static_cast<int64_t>(checkpoint::find(items, "adam/t").data[0]));

  TrainState state;
  state.iteration = static_cast<int64_t>(checkpoint::find(items, "train/iteration").data[0]);
  state.view_rng_state = unpack_rng_state(checkpoint::find(items, "train/view_rng"));
  return state;
}

CheckpointShape peek_checkpoint_shape(const std::string& path) {
  const auto items = checkpoint::load(path);
  CheckpointShape s;
  s.n = static_cast<int64_t>(checkpoint::find(items, "shape/n").data[0]);
  s.d = static_cast<int64_t>(checkpoint::find(items, "shape/d").data[0]);
  s.hidden = static_cast<int64_t>(checkpoint::find(items, "shape/hidden").data[0]);
  return s;
}

RunRecord train(ReferringModel& model, TrainContext& ctx, const TrainConfig& cfg,
                const std::string& out_dir, const std::string& resume_from) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw_io("train: cannot create output directory '" + out_dir + "': " + ec.message());

  Adam adam(model.params,
            AdamConfig{cfg.lr_field, cfg.lr_cam, 0.9, 0.999, 1e-8, cfg.grad_clip});
  Rng view_rng = named_substream(cfg.seed, "views");
  int64_t start_iter = 0;
  if (!resume_from.empty()) {
    const TrainState st = load_training_checkpoint(resume_from, model, adam);
    view_rng.set_state(st.view_rng_state);
    start_iter = st.iteration;
    if (start_iter > cfg.iterations)
      throw_validation("train: checkpoint is already past the configured iteration count");
  }

  RunRecord record;
  record.config = cfg;
  record.config_snapshot_path = (fs::path(out_dir) / "config.json").string();
  record.loss_csv_path = (fs::path(out_dir) / "loss.csv").string();
  record.checkpoint_path = (fs::path(out_dir) / "checkpoint_final.bin").string();
  save_train_config(cfg, record.config_snapshot_path);

  std::ofstream csv(record.loss_csv_path);
  if (!csv) throw_io("train: cannot write '" + record.loss_csv_path + "'");
  csv << "iter,l_bce_a,l_bce_b,l_2view,l_con,l_total,grad_norm\n";

  std::ofstream curve;
  const bool eval_during = cfg.eval_every > 0 && !ctx.eval_cams.empty();
  if (eval_during) {
    curve.open((fs::path(out_dir) / "miou_curve.csv").string());
    if (!curve) throw_io("train: cannot write the mIoU curve CSV");
    curve << "iter,miou\n";
  }

  const auto nq = static_cast<int64_t>(ctx.queries.size());
  std::vector<double> epoch_seconds;
  auto epoch_start = std::chrono::steady_clock::now();
  const auto run_start = epoch_start;

  for (int64_t i = start_iter; i < cfg.iterations; ++i) {
    const LossBreakdown bd = train_iteration(model, ctx, cfg, adam, view_rng, i);
    record.final_loss = bd;
    csv << i << ',' << fmt_g(bd.l_bce_a) << ',' << fmt_g(bd.l_bce_b) << ',' << fmt_g(bd.l_2view)
        << ',' << fmt_g(bd.l_con) << ',' << fmt_g(bd.l_total) << ',' << fmt_g(bd.grad_norm)
        << '\n';

    const int64_t done = i + 1;
    if (done % nq == 0) {
      const auto now = std::chrono::steady_clock::now();
      epoch_seconds.push_back(std::chrono::duration<double>(now - epoch_start).count());
      epoch_start = now;
    }
    if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.iterations) {
      const auto path = (fs::path(out_dir) / ("checkpoint_" + std::to_string(done) + ".bin"));
      save_training_checkpoint(path.string(), model, adam, TrainState{done, view_rng.state()});
    }
    if (eval_during && done % cfg.eval_every == 0) {
      const EvalReport r = evaluate(model, *ctx.scene, ctx.eval_cams, ctx.eval_view_ids,
                                    ctx.queries, ctx.query_ids, cfg.gfce_enabled, 0.5, ctx.raster,
                                    cfg.threads);
      curve << done << ',' << fmt_g(r.miou) << '\n';
    }
  }

  csv.flush();
  if (!csv) throw_io("train: write failed for '" + record.loss_csv_path + "'");

  record.iterations_run = cfg.iterations - start_iter;
  record.seconds_total =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
  if (!epoch_seconds.empty()) {
    double s = 0.0;
    for (double e : epoch_seconds) s += e;
    record.seconds_per_epoch = s / static_cast<double>(epoch_seconds.size());
  } else if (record.iterations_run > 0) {
    record.seconds_per_epoch =
        record.seconds_total * static_cast<double>(nq) / static_cast<double>(record.iterations_run);
  }

  save_training_checkpoint(record.checkpoint_path, model, adam,
                           TrainState{cfg.iterations, view_rng.state()});
  save_run_record(record, (fs::path(out_dir) / "run_record.json").string());
  return record;
}

void save_run_record(const RunRecord& record, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw_io("run record: cannot write '" + path + "'");
  out << "{\n";
  out << "  \"config_snapshot_path\": \"" << record.config_snapshot_path << "\",\n";
  out << "  \"loss_csv_path\": \"" << record.loss_csv_path << "\",\n";
  out << "  \"checkpoint_path\": \"" << record.checkpoint_path << "\",\n";
  out << "  \"iterations_run\": " << record.iterations_run << ",\n";
  out << "  \"seconds_total\": " << fmt_g(record.seconds_total) << ",\n";
  out << "  \"seconds_per_epoch\": " << fmt_g(record.seconds_per_epoch) << ",\n";
  out << "  \"final_loss\": {\n";
  out << "    \"l_bce_a\": " << fmt_g(record.final_loss.l_bce_a) << ",\n";
  out << "    \"l_bce_b\": " << fmt_g(record.final_loss.l_bce_b) << ",\n";
  out << "    \"l_2view\": " << fmt_g(record.final_loss.l_2view) << ",\n";
  out << "    \"l_con\": " << fmt_g(record.final_loss.l_con) << ",\n";
  out << "    \"l_total\": " << fmt_g(record.final_loss.l_total) << ",\n";
  out << "    \"grad_norm\": " << fmt_g(record.final_loss.grad_norm) << "\n";
  out << "  },\n";
  out << "  \"config\": " << train_config_json(record.config);
  out << "}\n";
  if (!out) throw_io("run record: write failed for '" + path + "'");
}

}  // namespace carf
