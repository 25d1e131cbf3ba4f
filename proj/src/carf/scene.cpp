#include "scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "common.hpp"

namespace carf {

using nlohmann::json;

std::vector<int> GaussianScene::labels() const {
  std::set<int> s;
  for (const auto& g : gaussians)
    if (g.label >= 0) s.insert(g.label);
  return {s.begin(), s.end()};
}

Mat3 rotation_matrix(const std::array<double, 4>& q) {
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
}

Mat3 covariance_matrix(const Gaussian& g) {
  const Mat3 r = rotation_matrix(g.rot);
  const Vec3 s2 = g.scale.cwiseProduct(g.scale);
  return r * s2.asDiagonal() * r.transpose();
}

namespace {

// Per-coordinate normal truncated at 4 sigma: keeps every member inside a
// deterministic envelope of its cluster center.
double truncated_normal(Rng& rng, double sigma) {
  for (;;) {
    const double v = rng.normal() * sigma;
    if (std::abs(v) <= 4.0 * sigma) return v;
  }
}

std::array<double, 4> random_unit_quat(Rng& rng) {
  for (;;) {
    std::array<double, 4> q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if (n < 1e-12) continue;
    for (double& v : q) v /= n;
    return q;
  }
}

void fit_bbox(GaussianScene& scene) {
  if (scene.gaussians.empty()) {
    scene.bbox_min = scene.bbox_max = Vec3::Zero();
    return;
  }
  Vec3 lo = scene.gaussians[0].mu, hi = scene.gaussians[0].mu;
  for (const auto& g : scene.gaussians) {
    lo = lo.cwiseMin(g.mu);
    hi = hi.cwiseMax(g.mu);
  }
  scene.bbox_min = lo;
  scene.bbox_max = hi;
}

}  // namespace

GaussianScene generate_scene(const SceneSpec& spec, uint64_t seed) {
  if (spec.clusters.empty() && spec.background_count <= 0)
    throw_validation("scene spec: no clusters and no background requested");
  for (size_t i = 0; i < spec.clusters.size(); ++i) {
    if (spec.clusters[i].count <= 0)
      throw_validation("scene spec: cluster " + std::to_string(i) + " has non-positive count");
    if (spec.clusters[i].extent <= 0.0)
      throw_validation("scene spec: cluster " + std::to_string(i) + " has non-positive extent");
  }
  if (spec.scale_min <= 0.0 || spec.scale_max < spec.scale_min)
    throw_validation("scene spec: bad scale range");

  Rng rng(seed);
  GaussianScene scene;
  scene.seed = seed;

  for (size_t c = 0; c < spec.clusters.size(); ++c) {
    const ClusterSpec& cs = spec.clusters[c];
    for (int k = 0; k < cs.count; ++k) {
      Gaussian g;
      for (int a = 0; a < 3; ++a) g.mu[a] = cs.center[a] + truncated_normal(rng, cs.extent);
      for (int a = 0; a < 3; ++a) g.scale[a] = rng.uniform(spec.scale_min, spec.scale_max);
      g.rot = random_unit_quat(rng);
      g.opacity = rng.uniform(spec.opacity_min, spec.opacity_max);
      g.color = cs.color;
      g.label = static_cast<int>(c);
      scene.gaussians.push_back(g);
    }
  }
  const double hw = spec.background_half_width;
  for (int k = 0; k < spec.background_count; ++k) {
    Gaussian g;
    // Rejection-sample the center against the clearance radius. The draw
    // count is data-dependent but still deterministic for a given spec/seed.
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 10000)
        throw_validation("scene spec: background_clearance leaves too little room for clutter");
      for (int a = 0; a < 3; ++a) g.mu[a] = rng.uniform(-hw, hw);
      bool clear = true;
      for (const ClusterSpec& c : spec.clusters)
        if ((g.mu - c.center).norm() < spec.background_clearance) clear = false;
      if (clear) break;
    }
    for (int a = 0; a < 3; ++a) g.scale[a] = rng.uniform(spec.scale_min, spec.scale_max);
    g.rot = random_unit_quat(rng);
    g.opacity = rng.uniform(spec.opacity_min, spec.opacity_max);
    for (int a = 0; a < 3; ++a) g.color[a] = rng.uniform(0.0, 1.0);
    g.label = -1;
    scene.gaussians.push_back(g);
  }

  fit_bbox(scene);
  return scene;
}

SceneSpec smoke_scene_spec() {
  SceneSpec spec;
  // Cluster pair axes sit >=20 degrees off every ring-camera azimuth (the
  // ring samples every 45 degrees), and heights are staggered, so no camera
  // sees one cluster hiding behind another; every (query, view) evaluation
  // is then well-posed.
  spec.clusters = {
      {Vec3(-0.60, -0.25, -0.15), 0.20, 130, Vec3(0.85, 0.2, 0.2)},
      {Vec3(0.60, 0.25, -0.15), 0.20, 130, Vec3(0.2, 0.85, 0.2)},
      {Vec3(-0.27, 0.65, 0.35), 0.20, 130, Vec3(0.2, 0.3, 0.9)},
  };
  spec.background_count = 110;
  spec.background_half_width = 1.4;
  // Keep clutter out of the labeled blobs: background splats straddling a
  // cluster border would occlude it ambiguously and make the reference masks
  // noisy at exactly the pixels IoU is most sensitive to.
  spec.background_clearance = 0.55;
  // Fairly opaque splats give steep coverage ramps, i.e. crisp mask borders.
  spec.opacity_min = 0.7;
  spec.opacity_max = 0.95;
  return spec;
}

void validate_scene(const GaussianScene& scene, const std::string& context) {
  auto fail = [&](const std::string& ptr, const std::string& msg) {
    throw_validation(context + ": " + ptr + ": " + msg);
  };
  for (size_t i = 0; i < scene.gaussians.size(); ++i) {
    const Gaussian& g = scene.gaussians[i];
    const std::string base = "/gaussians/" + std::to_string(i);
    for (int a = 0; a < 3; ++a) {
      if (!std::isfinite(g.mu[a])) fail(base + "/mu", "non-finite component");
      if (!(g.scale[a] > 0.0)) fail(base + "/scale", "components must be strictly positive");
      if (g.color[a] < 0.0 || g.color[a] > 1.0) fail(base + "/color", "components must lie in [0,1]");
      if (g.mu[a] < scene.bbox_min[a] || g.mu[a] > scene.bbox_max[a])
        fail(base + "/mu", "outside scene bbox");
    }
    const double qn = std::sqrt(g.rot[0] * g.rot[0] + g.rot[1] * g.rot[1] + g.rot[2] * g.rot[2] +
                                g.rot[3] * g.rot[3]);
    if (std::abs(qn - 1.0) > 1e-9) fail(base + "/rot", "quaternion is not unit length");
    if (!(g.opacity >= 0.0 && g.opacity <= 1.0)) fail(base + "/opacity", "must lie in [0,1]");
    if (g.label < -1) fail(base + "/label", "labels are -1 (background) or non-negative ids");
  }
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_vec3(std::string& out, const Vec3& v) {
  out += "[" + fmt17(v[0]) + "," + fmt17(v[1]) + "," + fmt17(v[2]) + "]";
}

double num_at(const json& j, const std::string& ptr, const std::string& context) {
  if (!j.is_number()) throw_validation(context + ": " + ptr + ": expected a number");
  return j.get<double>();
}

Vec3 vec3_at(const json& j, const std::string& ptr, const std::string& context) {
  if (!j.is_array() || j.size() != 3)
    throw_validation(context + ": " + ptr + ": expected an array of 3 numbers");
  Vec3 v;
  for (int a = 0; a < 3; ++a) v[a] = num_at(j[a], ptr + "/" + std::to_string(a), context);
  return v;
}

const json& key_at(const json& j, const char* key, const std::string& ptr,
                   const std::string& context) {
  auto it = j.find(key);
  if (it == j.end())
    throw_validation(context + ": " + ptr + "/" + key + ": required key missing");
  return *it;
}

}  // namespace

void save_scene(const GaussianScene& scene, const std::string& path) {
  validate_scene(scene, "scene save");
  std::string out;
  out.reserve(scene.gaussians.size() * 256 + 256);
  out += "{\n\"seed\": " + std::to_string(scene.seed) + ",\n\"bbox\": {\"min\": ";
  write_vec3(out, scene.bbox_min);
  out += ", \"max\": ";
  write_vec3(out, scene.bbox_max);
  out += "},\n\"gaussians\": [\n";
  for (size_t i = 0; i < scene.gaussians.size(); ++i) {
    const Gaussian& g = scene.gaussians[i];
    out += "{\"mu\": ";
    write_vec3(out, g.mu);
    out += ", \"scale\": ";
    write_vec3(out, g.scale);
    out += ", \"rot\": [" + fmt17(g.rot[0]) + "," + fmt17(g.rot[1]) + "," + fmt17(g.rot[2]) + "," +
           fmt17(g.rot[3]) + "]";
    out += ", \"opacity\": " + fmt17(g.opacity);
    out += ", \"color\": ";
    write_vec3(out, g.color);
    out += ", \"label\": " + std::to_string(g.label) + "}";
    if (i + 1 < scene.gaussians.size()) out += ",";
    out += "\n";
  }
  out += "]\n}\n";

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw_io("scene: cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw_io("scene: write failed: " + path);
}

GaussianScene load_scene(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw_io("scene: cannot open: " + path);
  json root;
  try {
    root = json::parse(f);
  } catch (const json::exception& e) {
    throw_io("scene: JSON parse error in " + path + ": " + e.what());
  }
  const std::string ctx = "scene " + path;
  if (!root.is_object()) throw_validation(ctx + ": /: expected a JSON object");

  GaussianScene scene;
  const json& seed = key_at(root, "seed", "", ctx);
  if (!seed.is_number_unsigned() && !seed.is_number_integer())
    throw_validation(ctx + ": /seed: expected an unsigned integer");
  scene.seed = seed.get<uint64_t>();

  const json& bbox = key_at(root, "bbox", "", ctx);
  scene.bbox_min = vec3_at(key_at(bbox, "min", "/bbox", ctx), "/bbox/min", ctx);
  scene.bbox_max = vec3_at(key_at(bbox, "max", "/bbox", ctx), "/bbox/max", ctx);

  const json& arr = key_at(root, "gaussians", "", ctx);
  if (!arr.is_array()) throw_validation(ctx + ": /gaussians: expected an array");
  scene.gaussians.reserve(arr.size());
  for (size_t i = 0; i < arr.size(); ++i) {
    const std::string base = "/gaussians/" + std::to_string(i);
    const json& jg = arr[i];
    if (!jg.is_object()) throw_validation(ctx + ": " + base + ": expected an object");
    Gaussian g;
    g.mu = vec3_at(key_at(jg, "mu", base, ctx), base + "/mu", ctx);
    g.scale = vec3_at(key_at(jg, "scale", base, ctx), base + "/scale", ctx);
    const json& jr = key_at(jg, "rot", base, ctx);
    if (!jr.is_array() || jr.size() != 4)
      throw_validation(ctx + ": " + base + "/rot: expected an array of 4 numbers (w,x,y,z)");
    for (int a = 0; a < 4; ++a)
      g.rot[static_cast<size_t>(a)] = num_at(jr[a], base + "/rot/" + std::to_string(a), ctx);
    g.opacity = num_at(key_at(jg, "opacity", base, ctx), base + "/opacity", ctx);
    g.color = vec3_at(key_at(jg, "color", base, ctx), base + "/color", ctx);
    const json& jl = key_at(jg, "label", base, ctx);
    if (!jl.is_number_integer())
      throw_validation(ctx + ": " + base + "/label: expected an integer");
    g.label = jl.get<int>();
    scene.gaussians.push_back(g);
  }

  validate_scene(scene, ctx);
  return scene;
}

SceneSpec load_scene_spec(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw_io("scene spec: cannot open: " + path);
  json root;
  try {
    root = json::parse(f);
  } catch (const json::exception& e) {
    throw_io("scene spec: JSON parse error in " + path + ": " + e.what());
  }
  const std::string ctx = "scene spec " + path;
  if (!root.is_object()) throw_validation(ctx + ": /: expected a JSON object");

  SceneSpec spec;
  const json& clusters = key_at(root, "clusters", "", ctx);
  if (!clusters.is_array()) throw_validation(ctx + ": /clusters: expected an array");
  for (size_t i = 0; i < clusters.size(); ++i) {
    const std::string base = "/clusters/" + std::to_string(i);
    const json& jc = clusters[i];
    ClusterSpec cs;
    cs.center = vec3_at(key_at(jc, "center", base, ctx), base + "/center", ctx);
    cs.extent = num_at(key_at(jc, "extent", base, ctx), base + "/extent", ctx);
    cs.count = static_cast<int>(num_at(key_at(jc, "count", base, ctx), base + "/count", ctx));
    if (jc.contains("color")) cs.color = vec3_at(jc["color"], base + "/color", ctx);
    spec.clusters.push_back(cs);
  }
  if (root.contains("background")) {
    const json& bg = root["background"];
    if (bg.contains("count")) spec.background_count = static_cast<int>(num_at(bg["count"], "/background/count", ctx));
    if (bg.contains("half_width"))
      spec.background_half_width = num_at(bg["half_width"], "/background/half_width", ctx);
    if (bg.contains("clearance"))
      spec.background_clearance = num_at(bg["clearance"], "/background/clearance", ctx);
  }
  if (root.contains("scale_range")) {
    const json& sr = root["scale_range"];
    if (!sr.is_array() || sr.size() != 2)
      throw_validation(ctx + ": /scale_range: expected [min,max]");
    spec.scale_min = num_at(sr[0], "/scale_range/0", ctx);
    spec.scale_max = num_at(sr[1], "/scale_range/1", ctx);
  }
  if (root.contains("opacity_range")) {
    const json& orr = root["opacity_range"];
    if (!orr.is_array() || orr.size() != 2)
      throw_validation(ctx + ": /opacity_range: expected [min,max]");
    spec.opacity_min = num_at(orr[0], "/opacity_range/0", ctx);
    spec.opacity_max = num_at(orr[1], "/opacity_range/1", ctx);
  }
  return spec;
}

}  // namespace carf
