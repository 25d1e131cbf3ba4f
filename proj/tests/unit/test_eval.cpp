#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "carf/camera.hpp"
#include "carf/common.hpp"
#include "carf/embedding.hpp"
#include "carf/eval.hpp"
#include "carf/rasterizer.hpp"
#include "carf/referring.hpp"
#include "carf/rng.hpp"
#include "carf/scene.hpp"
#include "carf/training.hpp"

using namespace carf;
namespace fs = std::filesystem;

namespace {

GaussianScene three_cluster_scene(int per_cluster, int background, uint64_t seed) {
  SceneSpec spec;
  spec.clusters.push_back({Vec3(-0.5, -0.3, 0.0), 0.18, per_cluster, Vec3(0.8, 0.2, 0.2)});
  spec.clusters.push_back({Vec3(0.5, 0.3, 0.0), 0.18, per_cluster, Vec3(0.2, 0.8, 0.2)});
  spec.clusters.push_back({Vec3(0.0, 0.5, 0.3), 0.18, per_cluster, Vec3(0.2, 0.2, 0.8)});
  spec.background_count = background;
  return generate_scene(spec, seed);
}

std::vector<Camera> small_ring(int count, int px) {
  RingSpec ring;
  ring.count = count;
  ring.width = px;
  ring.height_px = px;
  return make_camera_ring(ring);
}

// Independent compositing walk for the reference masks: per pixel, march the
// depth-sorted splats front to back accumulating the coverage of the target
// label, then binarize at the coverage threshold.
Mask oracle_gt_mask(const Camera& cam, const GaussianScene& scene, int target_label,
                    double coverage_threshold, const RasterParams& rp) {
  const auto splats = project_splats(cam, scene, rp);
  Mask out(cam.width, cam.height);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      double transmittance = 1.0;
      double coverage = 0.0;
      for (const auto& s : splats) {
        if (transmittance < rp.t_stop) break;
        if (x < s.x0 || x >= s.x1 || y < s.y0 || y >= s.y1) continue;
        const double dx = x - s.u.x();
        const double dy = y - s.u.y();
        const double power = -0.5 * (s.cov_inv(0, 0) * dx * dx + s.cov_inv(1, 1) * dy * dy) -
                             s.cov_inv(0, 1) * dx * dy;
        if (power > 0.0) continue;
        const double alpha = std::min(rp.alpha_clamp, s.opacity * std::exp(power));
        if (alpha < rp.alpha_skip) continue;
        const double w = transmittance * alpha;
        if (scene.gaussians[s.index].label == target_label) coverage += w;
        transmittance *= 1.0 - alpha;
      }
      out.at(x, y) = coverage > coverage_threshold ? 1 : 0;
    }
  }
  return out;
}

struct ResolvedQueries {
  std::vector<QueryEmbedding> embeds;
  std::vector<std::string> ids;
};

ResolvedQueries resolve_smoke(int64_t d) {
  ResolvedQueries out;
  for (const auto& q : smoke_queries()) {
    out.embeds.push_back(resolve_query_embedding(q, d, ""));
    out.ids.push_back(q.id);
  }
  return out;
}

// Plants features so every primitive scores exactly +10 on its own label's
// query and -10 on the others: F_i = U (U^T U)^{-1} c_i with U the stacked
// sentence-sum embeddings and c_i the signed targets. With the value path
// zeroed the refined features equal F, so the scores are exact.
void plant_oracle_features(ReferringModel& model, const GaussianScene& scene,
                           const std::vector<QueryEmbedding>& embeds) {
  const int64_t d = model.F().value.cols();
  Eigen::MatrixXd U(d, 3);
  for (int q = 0; q < 3; ++q) {
    Eigen::VectorXd esum = Eigen::VectorXd::Zero(d);
    for (int64_t j = 0; j < embeds[static_cast<size_t>(q)].E.rows(); ++j)
      for (int64_t k = 0; k < d; ++k) esum[k] += embeds[static_cast<size_t>(q)].E.at(j, k);
    U.col(q) = esum;
  }
  const Eigen::Matrix3d gram = U.transpose() * U;
  for (size_t i = 0; i < scene.gaussians.size(); ++i) {
    Eigen::Vector3d c;
    for (int q = 0; q < 3; ++q)
      c[q] = scene.gaussians[i].label == embeds[static_cast<size_t>(q)].target_label ? 10.0 : -10.0;
    const Eigen::VectorXd f = U * gram.ldlt().solve(c);
    for (int64_t k = 0; k < d; ++k) model.F().value.at(static_cast<int64_t>(i), k) = f[k];
  }
  std::fill(model.Wv().value.data.begin(), model.Wv().value.data.end(), 0.0);
  model.s_out().value.data[0] = 1.0;
  model.b_out().value.data[0] = 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// reference masks
// ---------------------------------------------------------------------------

TEST_CASE("reference masks match an independent per-pixel compositing walk") {
  const GaussianScene scene = three_cluster_scene(12, 6, 21);
  const auto cams = small_ring(4, 16);
  const RasterParams rp;
  for (const auto& cam : cams)
    for (int label = 0; label < 3; ++label) {
      const Mask got = gt_mask(cam, scene, label, 0.5, rp);
      const Mask want = oracle_gt_mask(cam, scene, label, 0.5, rp);
      CHECK(got.data == want.data);
    }
}

TEST_CASE("reference masks respect the coverage threshold monotonically") {
  const GaussianScene scene = three_cluster_scene(20, 0, 4);
  const Camera cam = small_ring(4, 24)[0];
  const Mask strict = gt_mask(cam, scene, 0, 0.8);
  const Mask loose = gt_mask(cam, scene, 0, 0.2);
  for (size_t i = 0; i < strict.data.size(); ++i)
    if (strict.data[i]) CHECK(loose.data[i] == 1);
  CHECK(loose.count() >= strict.count());
}

TEST_CASE("reference masks reject labels absent from the scene") {
  const GaussianScene scene = three_cluster_scene(8, 0, 2);
  const Camera cam = small_ring(4, 16)[0];
  CHECK_THROWS_AS(gt_mask(cam, scene, 7), Error);
  CHECK_THROWS_AS(gt_mask(cam, scene, -1), Error);
}

TEST_CASE("reference masks are thread-count invariant") {
  const GaussianScene scene = three_cluster_scene(15, 8, 9);
  const Camera cam = small_ring(4, 24)[1];
  CHECK(gt_mask(cam, scene, 1, 0.5, {}, 1).data == gt_mask(cam, scene, 1, 0.5, {}, 4).data);
}

// ---------------------------------------------------------------------------
// prediction masks
// ---------------------------------------------------------------------------

TEST_CASE("prediction thresholds bound the mask from both ends") {
  const GaussianScene scene = three_cluster_scene(10, 0, 3);
  const Camera cam = small_ring(4, 16)[0];
  std::vector<double> scores(scene.size(), 5.0);
  // Probabilities are sigmoids, hence strictly inside (0, 1): thresholding at
  // 0 selects everything, at 1 nothing.
  const Mask all = predict_mask(scene, cam, scores, 1.0, 0.0, 0.0);
  const Mask none = predict_mask(scene, cam, scores, 1.0, 0.0, 1.0);
  CHECK(all.count() == all.pixels());
  CHECK(none.count() == 0);
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

namespace {

struct EvalFixture {
  GaussianScene scene;
  std::vector<Camera> cams;
  std::vector<Camera> eval_cams;
  std::vector<int> eval_ids;
  ResolvedQueries queries;

  explicit EvalFixture(int64_t d) : scene(three_cluster_scene(40, 0, 31)), cams(small_ring(8, 32)) {
    std::vector<int> train;
    ring_split(cams.size(), train, eval_ids);
    for (int v : eval_ids) eval_cams.push_back(cams[static_cast<size_t>(v)]);
    queries = resolve_smoke(d);
  }
};

}  // namespace

TEST_CASE("evaluate scores near-perfectly with planted oracle features") {
  EvalFixture fx(16);
  ModelConfig mc;
  mc.d = 16;
  Rng rng(5);
  ReferringModel model(fx.scene.size(), mc, rng);
  plant_oracle_features(model, fx.scene, fx.queries.embeds);

  // The planted scores are exactly +10 on the target's primitives and -10
  // elsewhere, squashed through sigmoid(logit).
  const auto scores = score_field(model, fx.scene, fx.queries.embeds[0], nullptr);
  for (size_t i = 0; i < scores.size(); ++i) {
    const double want = fx.scene.gaussians[i].label == 0 ? 10.0 : -10.0;
    CHECK(std::abs(scores[i] - want) <= 1e-9);
  }

  const EvalReport report = evaluate(model, fx.scene, fx.eval_cams, fx.eval_ids,
                                     fx.queries.embeds, fx.queries.ids, false);
  CHECK(report.miou >= 0.95);

  // Structural invariants of the report.
  REQUIRE(report.query_ids == fx.queries.ids);
  REQUIRE(report.view_ids == fx.eval_ids);
  REQUIRE(report.iou.size() == 3);
  double sum = 0.0;
  int64_t entries = 0;
  for (size_t q = 0; q < report.iou.size(); ++q) {
    REQUIRE(report.iou[q].size() == fx.eval_ids.size());
    double lo = 1e300, hi = -1e300;
    for (double v : report.iou[q]) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      sum += v;
      ++entries;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(std::abs(report.dispersion[q] - (hi - lo)) <= 1e-15);
  }
  CHECK(std::abs(report.miou - sum / static_cast<double>(entries)) <= 1e-12);
  CHECK(report.render_ms_per_view >= 0.0);
}

TEST_CASE("evaluate gives an untrained model a near-zero score") {
  EvalFixture fx(16);
  ModelConfig mc;
  mc.d = 16;
  Rng rng(6);
  ReferringModel model(fx.scene.size(), mc, rng);
  const EvalReport report = evaluate(model, fx.scene, fx.eval_cams, fx.eval_ids,
                                     fx.queries.embeds, fx.queries.ids, false);
  CHECK(report.miou < 0.2);
}

TEST_CASE("a single query and view reduces to one IoU") {
  EvalFixture fx(16);
  ModelConfig mc;
  mc.d = 16;
  Rng rng(7);
  ReferringModel model(fx.scene.size(), mc, rng);
  plant_oracle_features(model, fx.scene, fx.queries.embeds);

  const std::vector<Camera> one_cam{fx.eval_cams[0]};
  const std::vector<int> one_id{fx.eval_ids[0]};
  const std::vector<QueryEmbedding> one_query{fx.queries.embeds[1]};
  const std::vector<std::string> one_qid{fx.queries.ids[1]};
  const EvalReport report =
      evaluate(model, fx.scene, one_cam, one_id, one_query, one_qid, false);
  REQUIRE(report.iou.size() == 1);
  REQUIRE(report.iou[0].size() == 1);
  CHECK(report.miou == report.iou[0][0]);
  CHECK(report.dispersion[0] == 0.0);

  // And that one number equals the manual predict-vs-reference IoU.
  const auto scores = score_field(model, fx.scene, fx.queries.embeds[1], nullptr);
  const Mask pred = predict_mask(fx.scene, one_cam[0], scores, 1.0, 0.0, 0.5);
  const Mask gt = gt_mask(one_cam[0], fx.scene, 1);
  CHECK(report.miou == iou(pred, gt));
}

TEST_CASE("evaluate is thread-count invariant") {
  EvalFixture fx(16);
  ModelConfig mc;
  mc.d = 16;
  Rng rng(8);
  ReferringModel model(fx.scene.size(), mc, rng);
  plant_oracle_features(model, fx.scene, fx.queries.embeds);
  const EvalReport a = evaluate(model, fx.scene, fx.eval_cams, fx.eval_ids, fx.queries.embeds,
                                fx.queries.ids, false, 0.5, {}, 1);
  const EvalReport b = evaluate(model, fx.scene, fx.eval_cams, fx.eval_ids, fx.queries.embeds,
                                fx.queries.ids, false, 0.5, {}, 4);
  CHECK(a.iou == b.iou);
  CHECK(a.miou == b.miou);
}

TEST_CASE("evaluate dumps renderings when asked") {
  EvalFixture fx(16);
  ModelConfig mc;
  mc.d = 16;
  Rng rng(9);
  ReferringModel model(fx.scene.size(), mc, rng);
  plant_oracle_features(model, fx.scene, fx.queries.embeds);

  const std::string dir = "/tmp/carf_eval_test_dump";
  fs::remove_all(dir);
  const std::vector<Camera> one_cam{fx.eval_cams[2]};
  const std::vector<int> one_id{fx.eval_ids[2]};
  const EvalReport report = evaluate(model, fx.scene, one_cam, one_id, fx.queries.embeds,
                                     fx.queries.ids, false, 0.5, {}, 1, dir);
  const std::string stem = "q1_v" + std::to_string(one_id[0]);
  CHECK(fs::exists(fs::path(dir) / (stem + "_prob.pgm")));
  CHECK(fs::exists(fs::path(dir) / (stem + "_prob.f32")));
  const Mask pred = load_mask_pgm((fs::path(dir) / (stem + "_pred.pgm")).string());
  const Mask gt = load_mask_pgm((fs::path(dir) / (stem + "_gt.pgm")).string());
  CHECK(pred.width == 32);
  CHECK(gt.height == 32);
  // The dumped pair must reproduce the reported IoU and the reference mask.
  CHECK(iou(pred, gt) == report.iou[1][0]);
  CHECK(gt.data == gt_mask(one_cam[0], fx.scene, 1).data);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// reports on disk
// ---------------------------------------------------------------------------

TEST_CASE("eval reports serialize to parseable JSON and CSV") {
  EvalReport report;
  report.query_ids = {"q0", "q1"};
  report.view_ids = {1, 3, 5};
  report.iou = {{1.0, 0.5, 0.25}, {0.125, 0.75, 1.0}};
  report.miou = (1.0 + 0.5 + 0.25 + 0.125 + 0.75 + 1.0) / 6.0;
  report.dispersion = {0.75, 0.875};
  report.render_ms_per_view = 2.5;
  report.config_hash = "00c0ffee00c0ffee";

  const std::string jpath = "/tmp/carf_eval_test_report.json";
  const std::string cpath = "/tmp/carf_eval_test_report.csv";
  save_eval_report_json(report, jpath);
  save_eval_report_csv(report, cpath);

  std::ifstream jin(jpath);
  REQUIRE(jin.good());
  nlohmann::json parsed;
  jin >> parsed;
  CHECK(parsed["miou"].get<double>() == report.miou);
  CHECK(parsed["config_hash"].get<std::string>() == report.config_hash);
  CHECK(parsed["view_ids"].size() == 3);
  CHECK(parsed["view_ids"][1].get<int>() == 3);
  REQUIRE(parsed["queries"].size() == 2);
  CHECK(parsed["queries"][0]["id"].get<std::string>() == "q0");
  CHECK(parsed["queries"][1]["dispersion"].get<double>() == 0.875);
  CHECK(parsed["queries"][1]["iou"][2].get<double>() == 1.0);

  std::ifstream cin_(cpath);
  REQUIRE(cin_.good());
  std::string line;
  std::getline(cin_, line);
  CHECK(line == "query_id,view_id,iou");
  int rows = 0;
  std::string first_row;
  while (std::getline(cin_, line) && !line.empty()) {
    if (rows == 0) first_row = line;
    ++rows;
  }
  CHECK(rows == 6);
  CHECK(first_row == "q0,1,1");
  fs::remove(jpath);
  fs::remove(cpath);
}

TEST_CASE("config fingerprints are stable hex and sensitive to every field") {
  const TrainConfig base = desk_preset();
  const std::string j1 = train_config_json(base);
  const std::string h1 = config_hash_hex(j1);
  CHECK(h1.size() == 16);
  CHECK(h1.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(config_hash_hex(j1) == h1);

  TrainConfig tweaked = base;
  tweaked.tau = 11.0;
  CHECK(config_hash_hex(train_config_json(tweaked)) != h1);
  TrainConfig tweaked2 = base;
  tweaked2.seed = base.seed + 1;
  CHECK(config_hash_hex(train_config_json(tweaked2)) != h1);
}
