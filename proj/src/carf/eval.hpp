#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "camera.hpp"
#include "image.hpp"
#include "rasterizer.hpp"
#include "referring.hpp"
#include "scene.hpp"
#include "supervision.hpp"

namespace carf {

// Analytic reference mask: composite the label-indicator field (1 on the
// target label, 0 elsewhere, squash off) and keep pixels whose raw coverage
// exceeds `coverage_threshold`. The synthetic stand-in for dataset masks.
Mask gt_mask(const Camera& cam, const GaussianScene& scene, int target_label,
             double coverage_threshold = 0.5, const RasterParams& raster = {}, int threads = 1);

// Intersection-over-union with the both-empty = 1 convention; see mask_iou.
inline double iou(const Mask& pred, const Mask& gt) { return mask_iou(pred, gt); }

// Renders one query's score field into a view and binarizes the probability
// map at `threshold` (strictly greater).
Mask predict_mask(const GaussianScene& scene, const Camera& cam,
                  const std::vector<double>& scores, double s_out, double b_out,
                  double threshold = 0.5, const RasterParams& raster = {}, int threads = 1);

struct EvalReport {
  std::vector<std::string> query_ids;
  std::vector<int> view_ids;               // caller-meaningful view labels
  std::vector<std::vector<double>> iou;    // [query][view]
  double miou = 0.0;
  std::vector<double> dispersion;          // per query: max - min IoU across views
  double render_ms_per_view = 0.0;         // score + composite + binarize, averaged
  std::string config_hash;                 // filled by callers that own a config
};

// Scores every query with the model (camera-conditioned when gfce_enabled),
// renders each evaluation view, and aggregates IoU against the analytic
// masks. Deterministic; aggregation runs in (query, view) order.
EvalReport evaluate(ReferringModel& model, const GaussianScene& scene,
                    const std::vector<Camera>& eval_cams, const std::vector<int>& view_ids,
                    const std::vector<QueryEmbedding>& queries,
                    const std::vector<std::string>& query_ids, bool gfce_enabled,
                    double threshold = 0.5, const RasterParams& raster = {}, int threads = 1,
                    const std::string& dump_dir = "");

void save_eval_report_json(const EvalReport& report, const std::string& path);
void save_eval_report_csv(const EvalReport& report, const std::string& path);

// Hex config fingerprint recorded in reports (FNV-1a of the canonical JSON).
std::string config_hash_hex(const std::string& canonical_json);

}  // namespace carf
