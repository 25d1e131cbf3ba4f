/* Camera-aware referring segmentation over Gaussian scenes: C API.
 *
 * Every entry point returns a carf_status; 0 is success. On failure,
 * carf_last_error() holds a one-line message for the calling thread.
 * Strings returned through char** outputs are heap-allocated; release them
 * with carf_string_free.
 */
#ifndef CARF_H
#define CARF_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CARF_API __declspec(dllexport)
#else
#define CARF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum carf_status {
  CARF_OK = 0,
  CARF_ERR_USAGE = 2,      /* bad arguments to an API call */
  CARF_ERR_VALIDATION = 3, /* inputs fail a domain contract */
  CARF_ERR_NUMERIC = 4,    /* non-finite values, failed numeric checks */
  CARF_ERR_IO = 5,         /* filesystem / parse failures */
} carf_status;

CARF_API const char* carf_version(void);
CARF_API const char* carf_last_error(void);
CARF_API void carf_string_free(char* s);

/* ---- scenes ---------------------------------------------------------- */

typedef struct carf_scene carf_scene;

/* spec_json_path NULL generates the built-in three-cluster desk scene. */
CARF_API carf_status carf_scene_generate(const char* spec_json_path, uint64_t seed,
                                         carf_scene** out);
CARF_API carf_status carf_scene_load(const char* path, carf_scene** out);
CARF_API carf_status carf_scene_save(const carf_scene* scene, const char* path);
CARF_API carf_status carf_scene_size(const carf_scene* scene, size_t* out_count);
CARF_API void carf_scene_free(carf_scene* scene);

/* ---- cameras ---------------------------------------------------------- */

typedef struct carf_cameras carf_cameras;

/* Evenly spaced ring around the origin; pass width == height_px == 64,
 * count == 8, radius 4, height 0.8, fov 40, near 0.1, phase 0 for the desk
 * default. */
CARF_API carf_status carf_cameras_ring(int count, double radius, double height, double fov_deg,
                                       int width, int height_px, double near_plane,
                                       double phase_deg, carf_cameras** out);
CARF_API carf_status carf_cameras_load(const char* path, carf_cameras** out);
CARF_API carf_status carf_cameras_save(const carf_cameras* cams, const char* path);
CARF_API carf_status carf_cameras_size(const carf_cameras* cams, size_t* out_count);
CARF_API void carf_cameras_free(carf_cameras* cams);

/* ---- training configuration ------------------------------------------ */

/* Configs travel as canonical JSON text. preset: "desk" or "paper". */
CARF_API carf_status carf_config_default(const char* preset, char** out_json);
CARF_API carf_status carf_config_load(const char* path, char** out_json);
/* Sets one field (value parsed per the field's type) and re-canonicalizes. */
CARF_API carf_status carf_config_set(const char* config_json, const char* key, const char* value,
                                     char** out_json);

/* ---- pseudo-mask selection -------------------------------------------- */

/* Reads a candidate manifest ({"candidates":[{"file","confidence"}]}),
 * runs the confidence-weighted overlap selection, optionally writes the
 * winning mask as PGM. out_index/out_score may be NULL. */
CARF_API carf_status carf_select_pseudo_mask(const char* manifest_path, const char* out_mask_path,
                                             int64_t* out_index, double* out_score);

/* ---- gradient checking ------------------------------------------------ */

/* Central-difference check of the full training objective on the given
 * scene/cameras (cams NULL: four-view 16x16 ring). max_per_param 0 probes
 * every entry. */
CARF_API carf_status carf_gradcheck(const carf_scene* scene, const carf_cameras* cams,
                                    const char* config_json, double step, double tol,
                                    int64_t max_per_param, double* out_max_rel_err,
                                    int* out_pass);

/* ---- training ---------------------------------------------------------- */

typedef struct carf_train_summary {
  double final_total_loss;
  double seconds_per_epoch;
  double seconds_total;
  int64_t iterations_run;
  char checkpoint_path[1024];
} carf_train_summary;

/* Trains on the even ring positions (odd positions are held out; they feed
 * the optional in-training mIoU curve). queries_path NULL uses the built-in
 * three smoke queries. resume_checkpoint continues a previous run.
 * out_summary may be NULL. */
CARF_API carf_status carf_train(const carf_scene* scene, const carf_cameras* cams,
                                const char* queries_path, const char* config_json,
                                const char* out_dir, const char* resume_checkpoint,
                                carf_train_summary* out_summary);

/* ---- rendering --------------------------------------------------------- */

/* Renders probability masks for every query into the listed views
 * (comma-separated indices into the camera array; NULL = all views),
 * writing PGM + raw f32 pairs under out_dir. */
CARF_API carf_status carf_render(const char* checkpoint_path, const carf_scene* scene,
                                 const carf_cameras* cams, const char* queries_path,
                                 const char* view_ids, int gfce_enabled, int threads,
                                 const char* out_dir);

/* ---- evaluation -------------------------------------------------------- */

/* split: "test" (odd ring positions), "train" (even), or "all". config_json
 * may be NULL; when given it is fingerprinted into the report. out_json /
 * out_csv / dump_dir / out_miou may each be NULL. */
CARF_API carf_status carf_eval(const char* checkpoint_path, const carf_scene* scene,
                               const carf_cameras* cams, const char* queries_path,
                               const char* config_json, const char* split, int gfce_enabled,
                               double threshold, int threads, const char* out_json,
                               const char* out_csv, const char* dump_dir, double* out_miou);

#ifdef __cplusplus
}
#endif

#endif /* CARF_H */
