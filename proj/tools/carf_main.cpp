// Command-line front end over the C API: scene/camera generation, pseudo-mask
// selection, gradient checking, training, rendering, evaluation, and the
// ablation sweeps. Exit codes: 0 success, 2 usage, 3 validation, 4 numeric
// failure (including a failed gradient check), 5 I/O.
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "carf/carf.h"

namespace {

[[noreturn]] void die(carf_status st) {
  std::fprintf(stderr, "error: %s\n", carf_last_error());
  std::exit(st == CARF_OK ? 1 : static_cast<int>(st));
}

void check(carf_status st) {
  if (st != CARF_OK) die(st);
}

// RAII for the C handles so early exits don't leak.
struct SceneHandle {
  carf_scene* p = nullptr;
  ~SceneHandle() { carf_scene_free(p); }
};
struct CamerasHandle {
  carf_cameras* p = nullptr;
  ~CamerasHandle() { carf_cameras_free(p); }
};

// ---- shared option bundles -------------------------------------------------

struct SceneOpts {
  std::string load_path;  // existing scene JSON
  std::string spec_path;  // generator spec; empty = built-in desk scene
};

struct CameraOpts {
  std::string load_path;  // existing camera JSON; empty = default ring
};

void add_scene_opts(CLI::App* cmd, SceneOpts* o) {
  cmd->add_option("--scene", o->load_path, "Scene JSON to load (default: generate from --seed)");
  cmd->add_option("--scene-spec", o->spec_path,
                  "Generator spec JSON used when --scene is absent");
}

void add_camera_opts(CLI::App* cmd, CameraOpts* o) {
  cmd->add_option("--cameras", o->load_path,
                  "Camera JSON to load (default: the built-in ring)");
}

// Every training-config field is exposed as a flag of the same name; values
// are passed through the config layer, which owns parsing and validation.
struct ConfigOpts {
  std::string file;
  std::string preset = "desk";
  std::vector<std::string> sets;  // raw key=value pairs from --set
  std::map<std::string, std::string> field_values;
  std::vector<std::pair<std::string, CLI::Option*>> field_opts;  // registration order
};

const char* const kConfigFields[] = {
    "iterations",     "lr_field",       "lr_cam",          "d",
    "hidden",         "tau",            "alpha_view",      "lambda1",
    "lambda2",        "num_views_per_iter", "min_overlap", "gfce_enabled",
    "itpvs_enabled",  "seed",           "bce_reduction",   "fg_source",
    "grad_clip",      "t_con",          "feat_init",       "pseudo_k",
    "pseudo_noise",   "corrupt_fraction", "corrupt_severity", "checkpoint_every",
    "eval_every",     "threads",        "gfce_force_zero",
};

void add_config_opts(CLI::App* cmd, ConfigOpts* o) {
  cmd->add_option("--config", o->file, "Training config JSON (default: the desk preset)");
  cmd->add_option("--preset", o->preset, "Built-in config preset: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--set", o->sets, "Override one config field as key=value (repeatable)");
  for (const char* field : kConfigFields) {
    std::string names = std::string("--") + field;
    if (std::strcmp(field, "gfce_enabled") == 0) names += ",--gfce";
    if (std::strcmp(field, "itpvs_enabled") == 0) names += ",--itpvs";
    CLI::Option* opt = cmd->add_option(names, o->field_values[field],
                                       std::string("Config field ") + field);
    o->field_opts.emplace_back(field, opt);
  }
}

// File/preset first, then field flags in declaration order, then --set pairs.
std::string assemble_config(const ConfigOpts& o) {
  char* json = nullptr;
  if (!o.file.empty())
    check(carf_config_load(o.file.c_str(), &json));
  else
    check(carf_config_default(o.preset.c_str(), &json));
  std::string cur = json;
  carf_string_free(json);

  auto apply = [&cur](const std::string& key, const std::string& value) {
    char* next = nullptr;
    check(carf_config_set(cur.c_str(), key.c_str(), value.c_str(), &next));
    cur = next;
    carf_string_free(next);
  };
  for (const auto& [field, opt] : o.field_opts)
    if (opt->count() > 0) apply(field, o.field_values.at(field));
  for (const std::string& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::fprintf(stderr, "error: --set wants key=value, got '%s'\n", kv.c_str());
      std::exit(CARF_ERR_USAGE);
    }
    apply(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cur;
}

uint64_t config_seed(const std::string& config_json) {
  return nlohmann::json::parse(config_json).at("seed").get<uint64_t>();
}

int config_threads(const std::string& config_json) {
  return nlohmann::json::parse(config_json).at("threads").get<int>();
}

// --threads beats CARF_THREADS beats 0 (all available cores).
std::string resolved_threads_value(const CLI::Option* threads_opt, const std::string& flag_value) {
  if (threads_opt != nullptr && threads_opt->count() > 0) return flag_value;
  if (const char* env = std::getenv("CARF_THREADS")) return env;
  return "0";
}

carf_scene* open_scene(const SceneOpts& o, uint64_t seed) {
  carf_scene* s = nullptr;
  if (!o.load_path.empty())
    check(carf_scene_load(o.load_path.c_str(), &s));
  else
    check(carf_scene_generate(o.spec_path.empty() ? nullptr : o.spec_path.c_str(), seed, &s));
  return s;
}

carf_cameras* open_cameras(const CameraOpts& o) {
  if (o.load_path.empty()) return nullptr;  // NULL = API default ring
  carf_cameras* c = nullptr;
  check(carf_cameras_load(o.load_path.c_str(), &c));
  return c;
}

const char* opt_str(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

// ---- ablation ----------------------------------------------------------------

struct AblationRow {
  std::string grid;
  int itpvs = -1, gfce = -1, num_views = -1;  // -1 = not applicable
  double miou = 0.0;
  double seconds_per_epoch = 0.0;
};

std::string cell(int v) { return v < 0 ? "" : std::to_string(v); }

void write_ablation_csv(const std::string& path, const std::string& grid,
                        const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) {
    std::fprintf(stderr, "error: cannot write '%s'\n", path.c_str());
    std::exit(CARF_ERR_IO);
  }
  char buf[64];
  auto g17 = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  if (grid == "flags") {
    out << "itpvs,gfce,miou_heldout\n";
    for (const auto& r : rows)
      out << r.itpvs << "," << r.gfce << "," << g17(r.miou) << "\n";
  } else if (grid == "views") {
    out << "num_views,seconds_per_epoch,miou_heldout\n";
    for (const auto& r : rows)
      out << r.num_views << "," << g17(r.seconds_per_epoch) << "," << g17(r.miou) << "\n";
  } else {
    out << "grid,itpvs,gfce,num_views,miou_heldout,seconds_per_epoch\n";
    for (const auto& r : rows)
      out << r.grid << "," << cell(r.itpvs) << "," << cell(r.gfce) << "," << cell(r.num_views)
          << "," << g17(r.miou) << "," << g17(r.seconds_per_epoch) << "\n";
  }
  if (!out) {
    std::fprintf(stderr, "error: write failed for '%s'\n", path.c_str());
    std::exit(CARF_ERR_IO);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Camera-aware referring segmentation over Gaussian scenes"};
  app.require_subcommand(1);

  // ---- gen-scene ----
  auto* gen_scene = app.add_subcommand("gen-scene", "Generate a synthetic labeled scene");
  std::string gs_spec, gs_out;
  uint64_t gs_seed = 1;
  gen_scene->add_option("--spec", gs_spec, "Generator spec JSON (default: built-in desk scene)");
  gen_scene->add_option("--seed", gs_seed, "Generator seed");
  gen_scene->add_option("--out", gs_out, "Output scene JSON")->required();

  // ---- gen-cameras ----
  auto* gen_cams = app.add_subcommand("gen-cameras", "Generate a camera ring");
  int gc_count = 8, gc_width = 64, gc_height_px = 64;
  double gc_radius = 4.0, gc_height = 0.8, gc_fov = 60.0, gc_near = 0.1, gc_phase = 0.0;
  std::string gc_out;
  gen_cams->add_option("--count", gc_count, "Number of cameras");
  gen_cams->add_option("--radius", gc_radius, "Ring radius");
  gen_cams->add_option("--height", gc_height, "Camera height above the scene center");
  gen_cams->add_option("--fov", gc_fov, "Horizontal field of view, degrees");
  gen_cams->add_option("--width", gc_width, "Image width, pixels");
  gen_cams->add_option("--height-px", gc_height_px, "Image height, pixels");
  gen_cams->add_option("--near", gc_near, "Near plane distance");
  gen_cams->add_option("--phase", gc_phase, "Angular offset of the first camera, degrees");
  gen_cams->add_option("--out", gc_out, "Output camera JSON")->required();

  // ---- select-mask ----
  auto* select_mask =
      app.add_subcommand("select-mask", "Pick the consensus mask from a candidate manifest");
  std::string sm_manifest, sm_out;
  select_mask->add_option("--manifest", sm_manifest, "Candidate manifest JSON")->required();
  select_mask->add_option("--out-mask", sm_out, "Write the winning mask as PGM");

  // ---- gradcheck ----
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "Compare analytic gradients of the training objective to central differences");
  SceneOpts gk_scene;
  CameraOpts gk_cams;
  ConfigOpts gk_cfg;
  double gk_step = 1e-5, gk_tol = 1e-4;
  int64_t gk_max = 0;
  add_scene_opts(gradcheck, &gk_scene);
  add_camera_opts(gradcheck, &gk_cams);
  add_config_opts(gradcheck, &gk_cfg);
  gradcheck->add_option("--step", gk_step, "Central-difference step");
  gradcheck->add_option("--tol", gk_tol, "Relative-error tolerance");
  gradcheck->add_option("--max-per-param", gk_max,
                        "Probe at most this many entries per parameter (0 = all)");

  // ---- train ----
  auto* train = app.add_subcommand("train", "Optimize the referring field on a scene");
  SceneOpts tr_scene;
  CameraOpts tr_cams;
  ConfigOpts tr_cfg;
  std::string tr_queries, tr_out, tr_resume;
  add_scene_opts(train, &tr_scene);
  add_camera_opts(train, &tr_cams);
  add_config_opts(train, &tr_cfg);
  train->add_option("--queries", tr_queries, "Query JSON (default: built-in smoke queries)");
  train->add_option("--out", tr_out, "Run directory for checkpoints/CSV/records")->required();
  train->add_option("--resume", tr_resume, "Checkpoint to continue from");

  // ---- render ----
  auto* render = app.add_subcommand("render", "Render probability masks from a checkpoint");
  SceneOpts rd_scene;
  CameraOpts rd_cams;
  std::string rd_ckpt, rd_queries, rd_views, rd_out, rd_gfce = "true", rd_threads_v;
  add_scene_opts(render, &rd_scene);
  add_camera_opts(render, &rd_cams);
  render->add_option("--checkpoint", rd_ckpt, "Trained checkpoint")->required();
  render->add_option("--queries", rd_queries, "Query JSON (default: built-in smoke queries)");
  render->add_option("--views", rd_views, "Comma-separated view indices (default: all)");
  render->add_option("--gfce", rd_gfce, "Camera-conditioned scoring: true or false")
      ->check(CLI::IsMember({"true", "false", "1", "0"}));
  CLI::Option* rd_threads_opt = render->add_option("--threads", rd_threads_v, "Worker threads");
  render->add_option("--out", rd_out, "Output directory")->required();
  uint64_t rd_seed = 1;
  render->add_option("--seed", rd_seed, "Scene generation seed when --scene is absent");

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "Score a checkpoint against the analytic masks");
  SceneOpts ev_scene;
  CameraOpts ev_cams;
  ConfigOpts ev_cfg;
  std::string ev_ckpt, ev_queries, ev_split = "test";
  std::string ev_json, ev_csv, ev_dump;
  double ev_threshold = 0.5;
  add_scene_opts(eval, &ev_scene);
  add_camera_opts(eval, &ev_cams);
  add_config_opts(eval, &ev_cfg);  // --gfce / --threads arrive as config fields
  eval->add_option("--checkpoint", ev_ckpt, "Trained checkpoint")->required();
  eval->add_option("--queries", ev_queries, "Query JSON (default: built-in smoke queries)");
  eval->add_option("--split", ev_split, "Views to score: test, train, or all")
      ->check(CLI::IsMember({"test", "train", "all"}));
  eval->add_option("--threshold", ev_threshold, "Binarization threshold on probabilities");
  eval->add_option("--out-json", ev_json, "Write the full report as JSON");
  eval->add_option("--out-csv", ev_csv, "Write per-(query, view) rows as CSV");
  eval->add_option("--dump-dir", ev_dump, "Dump probability maps and masks here");

  // ---- ablate ----
  auto* ablate = app.add_subcommand("ablate", "Train/evaluate sweeps over module flags or views");
  SceneOpts ab_scene;
  CameraOpts ab_cams;
  ConfigOpts ab_cfg;
  std::string ab_grid = "flags", ab_queries, ab_out;
  add_scene_opts(ablate, &ab_scene);
  add_camera_opts(ablate, &ab_cams);
  add_config_opts(ablate, &ab_cfg);
  ablate
      ->add_option("--grid", ab_grid,
                   "flags (2x2 module on/off grid; alias table6), views (view-count sweep; "
                   "alias table5), or all")
      ->check(CLI::IsMember({"flags", "views", "all", "table6", "table5"}));
  ablate->add_option("--queries", ab_queries, "Query JSON (default: built-in smoke queries)");
  ablate->add_option("--out", ab_out, "Directory for per-run outputs and ablation.csv")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : CARF_ERR_USAGE;
  }

  if (gen_scene->parsed()) {
    SceneHandle s;
    check(carf_scene_generate(opt_str(gs_spec), gs_seed, &s.p));
    check(carf_scene_save(s.p, gs_out.c_str()));
    size_t n = 0;
    check(carf_scene_size(s.p, &n));
    std::printf("wrote %zu primitives to %s\n", n, gs_out.c_str());
    return 0;
  }

  if (gen_cams->parsed()) {
    CamerasHandle c;
    check(carf_cameras_ring(gc_count, gc_radius, gc_height, gc_fov, gc_width, gc_height_px,
                            gc_near, gc_phase, &c.p));
    check(carf_cameras_save(c.p, gc_out.c_str()));
    std::printf("wrote %d cameras to %s\n", gc_count, gc_out.c_str());
    return 0;
  }

  if (select_mask->parsed()) {
    int64_t index = -1;
    double score = 0.0;
    check(carf_select_pseudo_mask(sm_manifest.c_str(), opt_str(sm_out), &index, &score));
    std::printf("index=%" PRId64 " score=%.17g\n", index, score);
    return 0;
  }

  if (gradcheck->parsed()) {
    std::string cfg = assemble_config(gk_cfg);
    SceneHandle s;
    s.p = open_scene(gk_scene, config_seed(cfg));
    CamerasHandle c;
    c.p = open_cameras(gk_cams);
    double max_rel_err = 0.0;
    int pass = 0;
    check(carf_gradcheck(s.p, c.p, cfg.c_str(), gk_step, gk_tol, gk_max, &max_rel_err, &pass));
    std::printf("%s max_rel_err=%.17g\n", pass ? "PASS" : "FAIL", max_rel_err);
    return pass ? 0 : CARF_ERR_NUMERIC;
  }

  if (train->parsed()) {
    std::string cfg = assemble_config(tr_cfg);
    {
      // Spec'd thread default is "all cores", overriding the config file's
      // value only when the flag or CARF_THREADS is present.
      const CLI::Option* topt = train->get_option("--threads");
      if (topt->count() > 0 || std::getenv("CARF_THREADS")) {
        char* next = nullptr;
        check(carf_config_set(cfg.c_str(), "threads",
                              resolved_threads_value(topt, tr_cfg.field_values.at("threads")).c_str(),
                              &next));
        cfg = next;
        carf_string_free(next);
      }
    }
    SceneHandle s;
    s.p = open_scene(tr_scene, config_seed(cfg));
    CamerasHandle c;
    c.p = open_cameras(tr_cams);
    carf_train_summary summary{};
    check(carf_train(s.p, c.p, opt_str(tr_queries), cfg.c_str(), tr_out.c_str(),
                     opt_str(tr_resume), &summary));
    std::printf("trained %" PRId64 " iterations in %.3f s (%.6f s/epoch)\n",
                summary.iterations_run, summary.seconds_total, summary.seconds_per_epoch);
    std::printf("final_loss=%.17g\ncheckpoint=%s\n", summary.final_total_loss,
                summary.checkpoint_path);
    return 0;
  }

  if (render->parsed()) {
    SceneHandle s;
    s.p = open_scene(rd_scene, rd_seed);
    CamerasHandle c;
    c.p = open_cameras(rd_cams);
    const int threads = std::atoi(resolved_threads_value(rd_threads_opt, rd_threads_v).c_str());
    const int gfce = (rd_gfce == "true" || rd_gfce == "1") ? 1 : 0;
    check(carf_render(rd_ckpt.c_str(), s.p, c.p, opt_str(rd_queries), opt_str(rd_views), gfce,
                      threads, rd_out.c_str()));
    std::printf("wrote masks to %s\n", rd_out.c_str());
    return 0;
  }

  if (eval->parsed()) {
    const bool cfg_given = !ev_cfg.file.empty() || !ev_cfg.sets.empty() ||
                           [&] {
                             for (const auto& [f, o] : ev_cfg.field_opts)
                               if (o->count() > 0) return true;
                             return false;
                           }();
    std::string cfg = assemble_config(ev_cfg);
    SceneHandle s;
    s.p = open_scene(ev_scene, config_seed(cfg));
    CamerasHandle c;
    c.p = open_cameras(ev_cams);
    int threads = config_threads(cfg);
    if (eval->get_option("--threads")->count() == 0)
      if (const char* env = std::getenv("CARF_THREADS")) threads = std::atoi(env);
    const int gfce = nlohmann::json::parse(cfg).at("gfce_enabled").get<bool>() ? 1 : 0;
    double miou = 0.0;
    check(carf_eval(ev_ckpt.c_str(), s.p, c.p, opt_str(ev_queries),
                    cfg_given ? cfg.c_str() : nullptr, ev_split.c_str(), gfce, ev_threshold,
                    threads, opt_str(ev_json), opt_str(ev_csv), opt_str(ev_dump), &miou));
    std::printf("miou=%.17g\n", miou);
    return 0;
  }

  if (ablate->parsed()) {
    std::string base_cfg = assemble_config(ab_cfg);
    std::string grid = ab_grid;
    if (grid == "table6") grid = "flags";
    if (grid == "table5") grid = "views";

    SceneHandle s;
    s.p = open_scene(ab_scene, config_seed(base_cfg));
    CamerasHandle c;
    c.p = open_cameras(ab_cams);
    const int threads = config_threads(base_cfg);

    auto set_field = [](std::string cfg, const char* key, const std::string& value) {
      char* next = nullptr;
      check(carf_config_set(cfg.c_str(), key, value.c_str(), &next));
      cfg = next;
      carf_string_free(next);
      return cfg;
    };
    auto run_one = [&](const std::string& cfg, const std::string& name, int gfce,
                       double* out_spe) -> double {
      const std::string run_dir = ab_out + "/" + name;
      carf_train_summary summary{};
      check(carf_train(s.p, c.p, opt_str(ab_queries), cfg.c_str(), run_dir.c_str(), nullptr,
                       &summary));
      if (out_spe) *out_spe = summary.seconds_per_epoch;
      double miou = 0.0;
      const std::string eval_json = run_dir + "/eval.json";
      check(carf_eval(summary.checkpoint_path, s.p, c.p, opt_str(ab_queries), cfg.c_str(),
                      "test", gfce, 0.5, threads, eval_json.c_str(), nullptr, nullptr, &miou));
      std::printf("%s: miou_heldout=%.17g\n", name.c_str(), miou);
      return miou;
    };

    std::vector<AblationRow> rows;
    if (grid == "flags" || grid == "all") {
      for (const auto& [itpvs, gfce] : std::vector<std::pair<int, int>>{
               {0, 0}, {0, 1}, {1, 0}, {1, 1}}) {
        std::string cfg = set_field(base_cfg, "itpvs_enabled", itpvs ? "true" : "false");
        cfg = set_field(cfg, "gfce_enabled", gfce ? "true" : "false");
        const std::string name =
            std::string("flags_itpvs") + std::to_string(itpvs) + "_gfce" + std::to_string(gfce);
        AblationRow row;
        row.grid = "flags";
        row.itpvs = itpvs;
        row.gfce = gfce;
        row.miou = run_one(cfg, name, gfce, &row.seconds_per_epoch);
        rows.push_back(row);
      }
    }
    if (grid == "views" || grid == "all") {
      for (int v : {2, 3, 4}) {
        std::string cfg = set_field(base_cfg, "num_views_per_iter", std::to_string(v));
        AblationRow row;
        row.grid = "views";
        row.num_views = v;
        row.miou = run_one(cfg, "views_" + std::to_string(v), 1, &row.seconds_per_epoch);
        rows.push_back(row);
      }
    }
    const std::string csv_path = ab_out + "/ablation.csv";
    write_ablation_csv(csv_path, grid, rows);
    std::printf("wrote %s\n", csv_path.c_str());
    return 0;
  }

  return CARF_ERR_USAGE;
}
