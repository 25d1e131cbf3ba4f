#include "eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "common.hpp"

namespace carf {

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Mask gt_mask(const Camera& cam, const GaussianScene& scene, int target_label,
             double coverage_threshold, const RasterParams& raster, int threads) {
  bool label_present = false;
  for (const auto& g : scene.gaussians) label_present = label_present || g.label == target_label;
  if (!label_present)
    throw_validation("gt_mask: label " + std::to_string(target_label) +
                     " does not occur in the scene");

  std::vector<double> indicator(scene.gaussians.size(), 0.0);
  for (size_t i = 0; i < scene.gaussians.size(); ++i)
    if (scene.gaussians[i].label == target_label) indicator[i] = 1.0;

  const auto splats = project_splats(cam, scene, raster);
  const RenderedMask r = composite_scalar(splats, cam.width, cam.height, indicator,
                                          /*squash=*/false, 1.0, 0.0, raster, threads);
  Mask out(cam.width, cam.height);
  for (size_t p = 0; p < r.logit.data.size(); ++p)
    out.data[p] = r.logit.data[p] > coverage_threshold ? 1 : 0;
  return out;
}

Mask predict_mask(const GaussianScene& scene, const Camera& cam,
                  const std::vector<double>& scores, double s_out, double b_out,
                  double threshold, const RasterParams& raster, int threads) {
  const auto splats = project_splats(cam, scene, raster);
  const RenderedMask r = composite_scalar(splats, cam.width, cam.height, scores,
                                          /*squash=*/true, s_out, b_out, raster, threads);
  Mask out(cam.width, cam.height);
  for (size_t p = 0; p < r.prob.data.size(); ++p) out.data[p] = r.prob.data[p] > threshold ? 1 : 0;
  return out;
}

EvalReport evaluate(ReferringModel& model, const GaussianScene& scene,
                    const std::vector<Camera>& eval_cams, const std::vector<int>& view_ids,
                    const std::vector<QueryEmbedding>& queries,
                    const std::vector<std::string>& query_ids, bool gfce_enabled,
                    double threshold, const RasterParams& raster, int threads,
                    const std::string& dump_dir) {
  if (eval_cams.empty()) throw_validation("evaluate: no evaluation views");
  if (queries.empty()) throw_validation("evaluate: no queries");
  if (queries.size() != query_ids.size())
    throw_validation("evaluate: query id list does not match the query list");
  if (!view_ids.empty() && view_ids.size() != eval_cams.size())
    throw_validation("evaluate: view id list does not match the camera list");

  EvalReport report;
  report.query_ids = query_ids;
  if (view_ids.empty())
    for (size_t v = 0; v < eval_cams.size(); ++v) report.view_ids.push_back(static_cast<int>(v));
  else
    report.view_ids = view_ids;

  if (!dump_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(dump_dir, ec);
    if (ec) throw_io("evaluate: cannot create dump directory '" + dump_dir + "': " + ec.message());
  }

  const double s_out = model.s_out().value.data[0];
  const double b_out = model.b_out().value.data[0];

  double sum = 0.0;
  size_t entries = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (size_t q = 0; q < queries.size(); ++q) {
    std::vector<double> row;
    double lo = 2.0, hi = -1.0;
    // Without camera conditioning the score field is view-independent; hoist it.
    std::vector<double> shared_scores;
    if (!gfce_enabled) shared_scores = score_field(model, scene, queries[q], nullptr);
    for (size_t v = 0; v < eval_cams.size(); ++v) {
      const Camera& cam = eval_cams[v];
      const std::vector<double> scores =
          gfce_enabled ? score_field(model, scene, queries[q], &cam) : shared_scores;
      const Mask pred = predict_mask(scene, cam, scores, s_out, b_out, threshold, raster, threads);
      const Mask gt = gt_mask(cam, scene, queries[q].target_label, 0.5, raster, threads);
      const double v_iou = iou(pred, gt);
      row.push_back(v_iou);
      lo = std::min(lo, v_iou);
      hi = std::max(hi, v_iou);
      sum += v_iou;
      ++entries;
      if (!dump_dir.empty()) {
        const auto splats = project_splats(cam, scene, raster);
        const RenderedMask r = composite_scalar(splats, cam.width, cam.height, scores, true,
                                                s_out, b_out, raster, threads);
        const auto stem = (std::filesystem::path(dump_dir) /
                           ("q" + std::to_string(q) + "_v" + std::to_string(report.view_ids[v])))
                              .string();
        save_gray_pgm(r.prob, stem + "_prob.pgm");
        save_f32_raw(r.prob, stem + "_prob.f32");
        save_mask_pgm(pred, stem + "_pred.pgm");
        save_mask_pgm(gt, stem + "_gt.pgm");
      }
    }
    report.iou.push_back(std::move(row));
    report.dispersion.push_back(hi - lo);
  }
  const auto t1 = std::chrono::steady_clock::now();
  report.miou = sum / static_cast<double>(entries);
  report.render_ms_per_view =
      std::chrono::duration<double, std::milli>(t1 - t0).count() / static_cast<double>(entries);
  return report;
}

std::string config_hash_hex(const std::string& canonical_json) {
  const uint64_t h = fnv1a64(canonical_json.data(), canonical_json.size());
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_eval_report_json(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw_io("eval report: cannot write '" + path + "'");
  out << "{\n  \"miou\": " << fmt_g(report.miou) << ",\n";
  out << "  \"render_ms_per_view\": " << fmt_g(report.render_ms_per_view) << ",\n";
  out << "  \"config_hash\": \"" << report.config_hash << "\",\n";
  out << "  \"view_ids\": [";
  for (size_t v = 0; v < report.view_ids.size(); ++v)
    out << (v ? ", " : "") << report.view_ids[v];
  out << "],\n  \"queries\": [\n";
  for (size_t q = 0; q < report.query_ids.size(); ++q) {
    out << "    {\"id\": \"" << report.query_ids[q] << "\", \"dispersion\": "
        << fmt_g(report.dispersion[q]) << ", \"iou\": [";
    for (size_t v = 0; v < report.iou[q].size(); ++v)
      out << (v ? ", " : "") << fmt_g(report.iou[q][v]);
    out << "]}" << (q + 1 < report.query_ids.size() ? "," : "") << "\n";
  }
  out << "  ]\n}\n";
  if (!out) throw_io("eval report: write failed for '" + path + "'");
}

void save_eval_report_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw_io("eval report: cannot write '" + path + "'");
  out << "query_id,view_id,iou\n";
  for (size_t q = 0; q < report.query_ids.size(); ++q)
    for (size_t v = 0; v < report.iou[q].size(); ++v)
      out << report.query_ids[q] << "," << report.view_ids[v] << "," << fmt_g(report.iou[q][v])
          << "\n";
  if (!out) throw_io("eval report: write failed for '" + path + "'");
}

}  // namespace carf
