#include "carf/carf.h"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "../carf/camera.hpp"
#include "../carf/common.hpp"
#include "../carf/embedding.hpp"
#include "../carf/eval.hpp"
#include "../carf/image.hpp"
#include "../carf/scene.hpp"
#include "../carf/supervision.hpp"
#include "../carf/training.hpp"

struct carf_scene {
  carf::GaussianScene scene;
};

struct carf_cameras {
  std::vector<carf::Camera> cams;
};

namespace {

thread_local std::string g_last_error;

carf_status fail(carf_status code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

carf_status fail_usage(const std::string& msg) { return fail(CARF_ERR_USAGE, msg); }

// Runs `fn`, translating exceptions into status codes + the thread-local
// message. Every public entry point goes through here.
template <typename Fn>
carf_status guarded(Fn&& fn) {
  try {
    fn();
    return CARF_OK;
  } catch (const carf::Error& e) {
    return fail(static_cast<carf_status>(e.code()), e.what());
  } catch (const std::exception& e) {
    return fail(CARF_ERR_VALIDATION, std::string("unexpected error: ") + e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::vector<carf::Query> load_or_default_queries(const char* queries_path,
                                                 std::string* out_dir_hint) {
  if (queries_path == nullptr) {
    out_dir_hint->clear();
    return carf::smoke_queries();
  }
  *out_dir_hint = std::filesystem::path(queries_path).parent_path().string();
  return carf::load_queries(queries_path);
}

std::vector<carf::Camera> default_ring() {
  return carf::make_camera_ring(carf::RingSpec{});
}

std::vector<carf::Camera> gradcheck_ring() {
  carf::RingSpec spec;
  spec.count = 4;
  spec.width = 16;
  spec.height_px = 16;
  return carf::make_camera_ring(spec);
}

void split_cameras(const std::vector<carf::Camera>& all, const std::string& split,
                   std::vector<carf::Camera>* out, std::vector<int>* out_ids) {
  std::vector<int> train, test;
  carf::ring_split(all.size(), train, test);
  const std::vector<int>* pick = nullptr;
  if (split == "train")
    pick = &train;
  else if (split == "test")
    pick = &test;
  else if (split == "all")
    pick = nullptr;
  else
    carf::throw_validation("split must be 'train', 'test', or 'all', got '" + split + "'");
  if (pick == nullptr) {
    *out = all;
    out_ids->resize(all.size());
    for (size_t i = 0; i < all.size(); ++i) (*out_ids)[i] = static_cast<int>(i);
  } else {
    for (int v : *pick) {
      out->push_back(all[static_cast<size_t>(v)]);
      out_ids->push_back(v);
    }
  }
}

// Reconstructs a trained model from a checkpoint for inference.
struct LoadedModel {
  std::unique_ptr<carf::ReferringModel> model;
};

LoadedModel load_model(const std::string& checkpoint_path, const carf::GaussianScene& scene) {
  const carf::CheckpointShape shape = carf::peek_checkpoint_shape(checkpoint_path);
  if (shape.n != static_cast<int64_t>(scene.gaussians.size()))
    carf::throw_validation("checkpoint was trained on " + std::to_string(shape.n) +
                           " primitives but the scene has " +
                           std::to_string(scene.gaussians.size()));
  carf::ModelConfig mc;
  mc.d = shape.d;
  mc.hidden = shape.hidden;
  carf::Rng dummy = carf::Rng::substream(0, 0);
  LoadedModel lm;
  lm.model = std::make_unique<carf::ReferringModel>(scene.gaussians.size(), mc, dummy);
  carf::Adam adam(lm.model->params, carf::AdamConfig{});
  carf::load_training_checkpoint(checkpoint_path, *lm.model, adam);
  return lm;
}

std::vector<carf::QueryEmbedding> resolve_all(const std::vector<carf::Query>& queries, int64_t d,
                                              const std::string& dir,
                                              std::vector<std::string>* ids) {
  std::vector<carf::QueryEmbedding> out;
  for (const auto& q : queries) {
    ids->push_back(q.id);
    out.push_back(carf::resolve_query_embedding(q, d, dir));
  }
  return out;
}

}  // namespace

extern "C" {

const char* carf_version(void) { return "1.0.0"; }

const char* carf_last_error(void) { return g_last_error.c_str(); }

void carf_string_free(char* s) { std::free(s); }

/* ---- scenes ---------------------------------------------------------- */

carf_status carf_scene_generate(const char* spec_json_path, uint64_t seed, carf_scene** out) {
  if (out == nullptr) return fail_usage("carf_scene_generate: out is NULL");
  return guarded([&] {
    const carf::SceneSpec spec =
        spec_json_path ? carf::load_scene_spec(spec_json_path) : carf::smoke_scene_spec();
    *out = new carf_scene{carf::generate_scene(spec, seed)};
  });
}

carf_status carf_scene_load(const char* path, carf_scene** out) {
  if (path == nullptr || out == nullptr) return fail_usage("carf_scene_load: NULL argument");
  return guarded([&] { *out = new carf_scene{carf::load_scene(path)}; });
}

carf_status carf_scene_save(const carf_scene* scene, const char* path) {
  if (scene == nullptr || path == nullptr) return fail_usage("carf_scene_save: NULL argument");
  return guarded([&] { carf::save_scene(scene->scene, path); });
}

carf_status carf_scene_size(const carf_scene* scene, size_t* out_count) {
  if (scene == nullptr || out_count == nullptr)
    return fail_usage("carf_scene_size: NULL argument");
  *out_count = scene->scene.gaussians.size();
  return CARF_OK;
}

void carf_scene_free(carf_scene* scene) { delete scene; }

/* ---- cameras ---------------------------------------------------------- */

carf_status carf_cameras_ring(int count, double radius, double height, double fov_deg, int width,
                              int height_px, double near_plane, double phase_deg,
                              carf_cameras** out) {
  if (out == nullptr) return fail_usage("carf_cameras_ring: out is NULL");
  return guarded([&] {
    carf::RingSpec spec;
    spec.count = count;
    spec.radius = radius;
    spec.height = height;
    spec.fov_deg = fov_deg;
    spec.width = width;
    spec.height_px = height_px;
    spec.near = near_plane;
    spec.phase_deg = phase_deg;
    *out = new carf_cameras{carf::make_camera_ring(spec)};
  });
}

carf_status carf_cameras_load(const char* path, carf_cameras** out) {
  if (path == nullptr || out == nullptr) return fail_usage("carf_cameras_load: NULL argument");
  return guarded([&] { *out = new carf_cameras{carf::load_cameras(path)}; });
}

carf_status carf_cameras_save(const carf_cameras* cams, const char* path) {
  if (cams == nullptr || path == nullptr) return fail_usage("carf_cameras_save: NULL argument");
  return guarded([&] { carf::save_cameras(cams->cams, path); });
}

carf_status carf_cameras_size(const carf_cameras* cams, size_t* out_count) {
  if (cams == nullptr || out_count == nullptr)
    return fail_usage("carf_cameras_size: NULL argument");
  *out_count = cams->cams.size();
  return CARF_OK;
}

void carf_cameras_free(carf_cameras* cams) { delete cams; }

/* ---- config ------------------------------------------------------------ */

carf_status carf_config_default(const char* preset, char** out_json) {
  if (out_json == nullptr) return fail_usage("carf_config_default: out_json is NULL");
  return guarded([&] {
    const std::string name = preset ? preset : "desk";
    carf::TrainConfig cfg;
    if (name == "desk")
      cfg = carf::desk_preset();
    else if (name == "paper")
      cfg = carf::paper_preset();
    else
      carf::throw_validation("unknown config preset '" + name + "' (want 'desk' or 'paper')");
    *out_json = dup_string(carf::train_config_json(cfg));
  });
}

carf_status carf_config_load(const char* path, char** out_json) {
  if (path == nullptr || out_json == nullptr)
    return fail_usage("carf_config_load: NULL argument");
  return guarded([&] {
    *out_json = dup_string(carf::train_config_json(carf::load_train_config(path)));
  });
}

carf_status carf_config_set(const char* config_json, const char* key, const char* value,
                            char** out_json) {
  if (config_json == nullptr || key == nullptr || value == nullptr || out_json == nullptr)
    return fail_usage("carf_config_set: NULL argument");
  return guarded([&] {
    // Patch one field, then reparse: the config parser owns all typing rules.
    carf::TrainConfig base = carf::parse_train_config_json(config_json);
    nlohmann::json j = nlohmann::json::parse(carf::train_config_json(base));
    const std::string k = key;
    const std::string v = value;
    if (!j.contains(k)) carf::throw_validation("config: unknown field '" + k + "'");
    if (k == "bce_reduction" || k == "fg_source") {
      j[k] = v;
    } else if (j[k].is_boolean()) {
      if (v == "true" || v == "1")
        j[k] = true;
      else if (v == "false" || v == "0")
        j[k] = false;
      else
        carf::throw_validation("config: field '" + k + "' wants true/false, got '" + v + "'");
    } else {
      const nlohmann::json parsed = nlohmann::json::parse(v, nullptr, false);
      if (parsed.is_discarded() || !parsed.is_number())
        carf::throw_validation("config: field '" + k + "' wants a number, got '" + v + "'");
      j[k] = parsed;
    }
    carf::TrainConfig updated = carf::parse_train_config_json(j.dump());
    *out_json = dup_string(carf::train_config_json(updated));
  });
}

/* ---- pseudo-mask selection --------------------------------------------- */

carf_status carf_select_pseudo_mask(const char* manifest_path, const char* out_mask_path,
                                    int64_t* out_index, double* out_score) {
  if (manifest_path == nullptr) return fail_usage("carf_select_pseudo_mask: manifest is NULL");
  return guarded([&] {
    const auto candidates = carf::load_candidates(manifest_path);
    const carf::PseudoMask pick = carf::select_pseudo_mask(candidates);
    if (out_mask_path) carf::save_mask_pgm(pick.mask, out_mask_path);
    if (out_index) *out_index = pick.source_index;
    if (out_score) *out_score = pick.score;
  });
}

/* ---- gradcheck ---------------------------------------------------------- */

carf_status carf_gradcheck(const carf_scene* scene, const carf_cameras* cams,
                           const char* config_json, double step, double tol,
                           int64_t max_per_param, double* out_max_rel_err, int* out_pass) {
  if (scene == nullptr || config_json == nullptr)
    return fail_usage("carf_gradcheck: scene and config are required");
  return guarded([&] {
    const carf::TrainConfig cfg = carf::parse_train_config_json(config_json);
    const std::vector<carf::Camera> all = cams ? cams->cams : gradcheck_ring();
    const carf::GradCheckReport report = carf::gradcheck_full_loss(
        scene->scene, all, carf::smoke_queries(), cfg, step, tol, max_per_param);
    if (out_max_rel_err) *out_max_rel_err = report.max_rel_err;
    if (out_pass) *out_pass = report.pass ? 1 : 0;
  });
}

/* ---- train --------------------------------------------------------------- */

carf_status carf_train(const carf_scene* scene, const carf_cameras* cams,
                       const char* queries_path, const char* config_json, const char* out_dir,
                       const char* resume_checkpoint, carf_train_summary* out_summary) {
  if (scene == nullptr || config_json == nullptr || out_dir == nullptr)
    return fail_usage("carf_train: scene, config, and out_dir are required");
  return guarded([&] {
    const carf::TrainConfig cfg = carf::parse_train_config_json(config_json);
    const std::vector<carf::Camera> all = cams ? cams->cams : default_ring();

    std::vector<carf::Camera> train_cams, test_cams;
    std::vector<int> train_ids, test_ids;
    split_cameras(all, "train", &train_cams, &train_ids);
    split_cameras(all, "test", &test_cams, &test_ids);

    std::string qdir;
    const auto queries = load_or_default_queries(queries_path, &qdir);
    carf::TrainContext ctx =
        carf::build_train_context(scene->scene, train_cams, queries, cfg, qdir);
    ctx.eval_cams = test_cams;
    ctx.eval_view_ids = test_ids;

    carf::Rng init_rng =
        carf::Rng::substream(cfg.seed, carf::fnv1a64(std::string("init")));
    carf::ReferringModel model(scene->scene.gaussians.size(),
                               carf::ModelConfig{cfg.d, cfg.hidden, cfg.t_con, cfg.feat_init},
                               init_rng);
    const carf::RunRecord record =
        carf::train(model, ctx, cfg, out_dir, resume_checkpoint ? resume_checkpoint : "");

    if (out_summary) {
      out_summary->final_total_loss = record.final_loss.l_total;
      out_summary->seconds_per_epoch = record.seconds_per_epoch;
      out_summary->seconds_total = record.seconds_total;
      out_summary->iterations_run = record.iterations_run;
      std::snprintf(out_summary->checkpoint_path, sizeof(out_summary->checkpoint_path), "%s",
                    record.checkpoint_path.c_str());
    }
  });
}

/* ---- render ---------------------------------------------------------------- */

carf_status carf_render(const char* checkpoint_path, const carf_scene* scene,
                        const carf_cameras* cams, const char* queries_path, const char* view_ids,
                        int gfce_enabled, int threads, const char* out_dir) {
  if (checkpoint_path == nullptr || scene == nullptr || out_dir == nullptr)
    return fail_usage("carf_render: checkpoint, scene, and out_dir are required");
  return guarded([&] {
    const std::vector<carf::Camera> all = cams ? cams->cams : default_ring();
    std::vector<int> views;
    if (view_ids == nullptr || std::string(view_ids).empty()) {
      for (size_t i = 0; i < all.size(); ++i) views.push_back(static_cast<int>(i));
    } else {
      std::string spec = view_ids;
      size_t start = 0;
      while (start <= spec.size()) {
        const size_t comma = spec.find(',', start);
        const std::string tok = spec.substr(start, comma - start);
        if (tok.empty()) carf::throw_validation("render: empty view id in list '" + spec + "'");
        size_t used = 0;
        int v = 0;
        try {
          v = std::stoi(tok, &used);
        } catch (const std::exception&) {
          carf::throw_validation("render: bad view id '" + tok + "'");
        }
        if (used != tok.size()) carf::throw_validation("render: bad view id '" + tok + "'");
        if (v < 0 || static_cast<size_t>(v) >= all.size())
          carf::throw_validation("render: view id " + tok + " is out of range (have " +
                                 std::to_string(all.size()) + " views)");
        views.push_back(v);
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
    }

    LoadedModel lm = load_model(checkpoint_path, scene->scene);
    std::string qdir;
    const auto queries = load_or_default_queries(queries_path, &qdir);
    std::vector<std::string> ids;
    const auto embeddings = resolve_all(queries, lm.model->cfg.d, qdir, &ids);

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) carf::throw_io(std::string("render: cannot create '") + out_dir + "': " + ec.message());

    const double s_out = lm.model->s_out().value.data[0];
    const double b_out = lm.model->b_out().value.data[0];
    const carf::RasterParams raster;
    for (size_t q = 0; q < embeddings.size(); ++q) {
      std::vector<double> shared_scores;
      if (!gfce_enabled)
        shared_scores = carf::score_field(*lm.model, scene->scene, embeddings[q], nullptr);
      for (int v : views) {
        const carf::Camera& cam = all[static_cast<size_t>(v)];
        const std::vector<double> scores =
            gfce_enabled ? carf::score_field(*lm.model, scene->scene, embeddings[q], &cam)
                         : shared_scores;
        const auto splats = carf::project_splats(cam, scene->scene, raster);
        const carf::RenderedMask r = carf::composite_scalar(
            splats, cam.width, cam.height, scores, true, s_out, b_out, raster, threads);
        const auto stem = (std::filesystem::path(out_dir) /
                           (ids[q] + "_view" + std::to_string(v)))
                              .string();
        carf::save_gray_pgm(r.prob, stem + ".pgm");
        carf::save_f32_raw(r.prob, stem + ".f32");
      }
    }
  });
}

/* ---- eval ---------------------------------------------------------------- */

carf_status carf_eval(const char* checkpoint_path, const carf_scene* scene,
                      const carf_cameras* cams, const char* queries_path,
                      const char* config_json, const char* split, int gfce_enabled,
                      double threshold, int threads, const char* out_json, const char* out_csv,
                      const char* dump_dir, double* out_miou) {
  if (checkpoint_path == nullptr || scene == nullptr)
    return fail_usage("carf_eval: checkpoint and scene are required");
  return guarded([&] {
    const std::vector<carf::Camera> all = cams ? cams->cams : default_ring();
    std::vector<carf::Camera> eval_cams;
    std::vector<int> view_ids;
    split_cameras(all, split ? split : "test", &eval_cams, &view_ids);

    LoadedModel lm = load_model(checkpoint_path, scene->scene);
    std::string qdir;
    const auto queries = load_or_default_queries(queries_path, &qdir);
    std::vector<std::string> ids;
    const auto embeddings = resolve_all(queries, lm.model->cfg.d, qdir, &ids);

    carf::EvalReport report =
        carf::evaluate(*lm.model, scene->scene, eval_cams, view_ids, embeddings, ids,
                       gfce_enabled != 0, threshold, carf::RasterParams{}, threads,
                       dump_dir ? dump_dir : "");
    if (config_json) {
      const carf::TrainConfig cfg = carf::parse_train_config_json(config_json);
      report.config_hash = carf::config_hash_hex(carf::train_config_json(cfg));
    }
    if (out_json) carf::save_eval_report_json(report, out_json);
    if (out_csv) carf::save_eval_report_csv(report, out_csv);
    if (out_miou) *out_miou = report.miou;
  });
}

}  // extern "C"
