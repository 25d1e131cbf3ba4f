#include "camera.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "common.hpp"

namespace carf {

using nlohmann::json;

std::array<double, 16> camera_descriptor(const Camera& cam) {
  std::array<double, 16> c{};
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 3; ++col) c[static_cast<size_t>(r * 3 + col)] = cam.R(r, col);
  for (int a = 0; a < 3; ++a) c[static_cast<size_t>(9 + a)] = cam.t[a];
  c[12] = cam.fx / cam.width;
  c[13] = cam.fy / cam.height;
  c[14] = cam.cx / cam.width;
  c[15] = cam.cy / cam.height;
  return c;
}

ProjectResult project(const Camera& cam, const Vec3& mu) {
  ProjectResult res;
  res.q = cam.R * mu + cam.t;
  const double z = res.q[2];
  if (z <= cam.near) {
    res.culled = true;
    res.J.setZero();
    return res;
  }
  res.u[0] = cam.fx * res.q[0] / z + cam.cx;
  res.u[1] = cam.fy * res.q[1] / z + cam.cy;
  res.J << cam.fx / z, 0.0, -cam.fx * res.q[0] / (z * z),
           0.0, cam.fy / z, -cam.fy * res.q[1] / (z * z);
  return res;
}

std::vector<size_t> visible_set(const Camera& cam, const GaussianScene& scene, double eps_vis) {
  std::vector<size_t> out;
  for (size_t i = 0; i < scene.gaussians.size(); ++i) {
    const Gaussian& g = scene.gaussians[i];
    if (g.opacity < eps_vis) continue;
    const ProjectResult pr = project(cam, g.mu);
    if (pr.culled) continue;
    if (pr.u[0] < 0.0 || pr.u[0] >= cam.width || pr.u[1] < 0.0 || pr.u[1] >= cam.height) continue;
    out.push_back(i);
  }
  return out;
}

double overlap_ratio(const Camera& a, const Camera& b, const GaussianScene& scene,
                     double eps_vis) {
  const auto va = visible_set(a, scene, eps_vis);
  const auto vb = visible_set(b, scene, eps_vis);
  if (va.empty() || vb.empty()) return 0.0;
  std::vector<size_t> inter;
  std::set_intersection(va.begin(), va.end(), vb.begin(), vb.end(), std::back_inserter(inter));
  return static_cast<double>(inter.size()) /
         static_cast<double>(std::min(va.size(), vb.size()));
}

PairSampler::PairSampler(const std::vector<Camera>& cams, const GaussianScene& scene,
                         double min_overlap, std::vector<int> view_indices, double eps_vis)
    : min_overlap_(min_overlap) {
  if (view_indices.empty()) {
    view_indices.resize(cams.size());
    for (size_t i = 0; i < cams.size(); ++i) view_indices[i] = static_cast<int>(i);
  }
  for (int v : view_indices)
    if (v < 0 || static_cast<size_t>(v) >= cams.size())
      throw_validation("pair sampler: view index " + std::to_string(v) + " out of range");
  views_ = std::move(view_indices);

  std::vector<std::vector<size_t>> vis(views_.size());
  for (size_t i = 0; i < views_.size(); ++i)
    vis[i] = visible_set(cams[static_cast<size_t>(views_[i])], scene, eps_vis);

  overlap_.assign(views_.size(), std::vector<double>(views_.size(), 0.0));
  for (size_t i = 0; i < views_.size(); ++i) {
    overlap_[i][i] = vis[i].empty() ? 0.0 : 1.0;
    for (size_t j = i + 1; j < views_.size(); ++j) {
      double ov = 0.0;
      if (!vis[i].empty() && !vis[j].empty()) {
        std::vector<size_t> inter;
        std::set_intersection(vis[i].begin(), vis[i].end(), vis[j].begin(), vis[j].end(),
                              std::back_inserter(inter));
        ov = static_cast<double>(inter.size()) /
             static_cast<double>(std::min(vis[i].size(), vis[j].size()));
      }
      overlap_[i][j] = overlap_[j][i] = ov;
      if (ov >= min_overlap) pairs_.emplace_back(static_cast<int>(i), static_cast<int>(j));
    }
  }
}

double PairSampler::overlap(int view_a, int view_b) const {
  auto pos = [&](int v) {
    for (size_t i = 0; i < views_.size(); ++i)
      if (views_[i] == v) return i;
    throw_validation("pair sampler: view " + std::to_string(v) + " not managed by this sampler");
  };
  return overlap_[pos(view_a)][pos(view_b)];
}

ViewPair PairSampler::sample(Rng& rng) const {
  if (pairs_.empty())
    throw_validation(
        "pair sampler: no admissible view pairs at min_overlap=" + std::to_string(min_overlap_) +
        "; lower min_overlap or provide views with more shared content");
  const auto& pr = pairs_[rng.uniform_int(pairs_.size())];
  const bool flip = rng.uniform_int(2) == 1;
  ViewPair vp;
  vp.a = views_[static_cast<size_t>(flip ? pr.second : pr.first)];
  vp.b = views_[static_cast<size_t>(flip ? pr.first : pr.second)];
  return vp;
}

std::vector<int> PairSampler::sample_views(Rng& rng, int count) const {
  if (count < 1) throw_validation("pair sampler: view count must be >= 1");
  const ViewPair vp = sample(rng);  // always consumed, even for count == 1
  std::vector<int> chosen{vp.a};
  if (count >= 2) chosen.push_back(vp.b);
  while (static_cast<int>(chosen.size()) < count) {
    std::vector<int> candidates;
    for (size_t i = 0; i < views_.size(); ++i) {
      const int v = views_[i];
      if (std::find(chosen.begin(), chosen.end(), v) != chosen.end()) continue;
      if (overlap(vp.a, v) >= min_overlap_) candidates.push_back(v);
    }
    if (candidates.empty())
      throw_validation("pair sampler: not enough views overlapping the anchor view for " +
                       std::to_string(count) + "-view sampling; lower min_overlap");
    chosen.push_back(candidates[rng.uniform_int(candidates.size())]);
  }
  return chosen;
}

ViewPair sample_pair(const std::vector<Camera>& cams, const GaussianScene& scene,
                     double min_overlap, Rng& rng, double eps_vis) {
  return PairSampler(cams, scene, min_overlap, {}, eps_vis).sample(rng);
}

std::vector<Camera> make_camera_ring(const RingSpec& spec) {
  if (spec.count < 1) throw_validation("camera ring: count must be >= 1");
  if (spec.radius <= 0.0) throw_validation("camera ring: radius must be positive");
  if (spec.width < 1 || spec.height_px < 1) throw_validation("camera ring: bad image size");
  if (spec.fov_deg <= 0.0 || spec.fov_deg >= 180.0)
    throw_validation("camera ring: fov must lie in (0, 180)");

  const double fx = (spec.width / 2.0) / std::tan(spec.fov_deg * M_PI / 180.0 / 2.0);
  std::vector<Camera> cams;
  for (int k = 0; k < spec.count; ++k) {
    const double th = spec.phase_deg * M_PI / 180.0 + 2.0 * M_PI * k / spec.count;
    const Vec3 eye = spec.target + Vec3(spec.radius * std::cos(th), spec.height,
                                        spec.radius * std::sin(th));
    Vec3 z = (spec.target - eye).normalized();
    Vec3 up(0.0, 1.0, 0.0);
    if (std::abs(z.dot(up)) > 1.0 - 1e-9) up = Vec3(1.0, 0.0, 0.0);
    const Vec3 x = z.cross(up).normalized();  // y = z × x points down in image space
    const Vec3 y = z.cross(x);

    Camera cam;
    cam.R.row(0) = x;
    cam.R.row(1) = y;
    cam.R.row(2) = z;
    cam.t = -(cam.R * eye);
    cam.fx = cam.fy = fx;
    cam.cx = spec.width / 2.0;
    cam.cy = spec.height_px / 2.0;
    cam.width = spec.width;
    cam.height = spec.height_px;
    cam.near = spec.near;
    cams.push_back(cam);
  }
  return cams;
}

void ring_split(size_t camera_count, std::vector<int>& train, std::vector<int>& test) {
  train.clear();
  test.clear();
  for (size_t i = 0; i < camera_count; ++i)
    (i % 2 == 0 ? train : test).push_back(static_cast<int>(i));
}

void validate_camera(const Camera& cam, const std::string& context) {
  if (!(cam.fx > 0.0) || !(cam.fy > 0.0)) throw_validation(context + ": focal lengths must be positive");
  if (cam.width < 1 || cam.height < 1) throw_validation(context + ": image size must be >= 1x1");
  if (!(cam.near > 0.0)) throw_validation(context + ": near plane must be positive");
  const Mat3 should_be_identity = cam.R * cam.R.transpose();
  if ((should_be_identity - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
    throw_validation(context + ": R is not orthonormal");
  if (cam.R.determinant() < 0.0) throw_validation(context + ": R must be a proper rotation (det +1)");
  for (int a = 0; a < 3; ++a)
    if (!std::isfinite(cam.t[a])) throw_validation(context + ": non-finite translation");
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double num_at(const json& j, const std::string& ptr, const std::string& context) {
  if (!j.is_number()) throw_validation(context + ": " + ptr + ": expected a number");
  return j.get<double>();
}

const json& key_at(const json& j, const char* key, const std::string& ptr,
                   const std::string& context) {
  auto it = j.find(key);
  if (it == j.end()) throw_validation(context + ": " + ptr + "/" + key + ": required key missing");
  return *it;
}

}  // namespace

void save_cameras(const std::vector<Camera>& cams, const std::string& path) {
  for (size_t i = 0; i < cams.size(); ++i)
    validate_camera(cams[i], "cameras save /" + std::to_string(i));
  std::string out = "[\n";
  for (size_t i = 0; i < cams.size(); ++i) {
    const Camera& c = cams[i];
    out += "{\"fx\": " + fmt17(c.fx) + ", \"fy\": " + fmt17(c.fy) + ", \"cx\": " + fmt17(c.cx) +
           ", \"cy\": " + fmt17(c.cy) + ", \"width\": " + std::to_string(c.width) +
           ", \"height\": " + std::to_string(c.height) + ",\n \"R\": [";
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col)
        out += fmt17(c.R(r, col)) + std::string(r == 2 && col == 2 ? "" : ",");
    out += "], \"t\": [" + fmt17(c.t[0]) + "," + fmt17(c.t[1]) + "," + fmt17(c.t[2]) + "]";
    out += ", \"near\": " + fmt17(c.near) + "}";
    if (i + 1 < cams.size()) out += ",";
    out += "\n";
  }
  out += "]\n";
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw_io("cameras: cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw_io("cameras: write failed: " + path);
}

std::vector<Camera> load_cameras(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw_io("cameras: cannot open: " + path);
  json root;
  try {
    root = json::parse(f);
  } catch (const json::exception& e) {
    throw_io("cameras: JSON parse error in " + path + ": " + e.what());
  }
  const std::string ctx = "cameras " + path;
  if (!root.is_array()) throw_validation(ctx + ": /: expected a JSON array of cameras");

  std::vector<Camera> cams;
  for (size_t i = 0; i < root.size(); ++i) {
    const std::string base = "/" + std::to_string(i);
    const json& jc = root[i];
    if (!jc.is_object()) throw_validation(ctx + ": " + base + ": expected an object");
    Camera c;
    c.fx = num_at(key_at(jc, "fx", base, ctx), base + "/fx", ctx);
    c.fy = num_at(key_at(jc, "fy", base, ctx), base + "/fy", ctx);
    c.cx = num_at(key_at(jc, "cx", base, ctx), base + "/cx", ctx);
    c.cy = num_at(key_at(jc, "cy", base, ctx), base + "/cy", ctx);
    c.width = static_cast<int>(num_at(key_at(jc, "width", base, ctx), base + "/width", ctx));
    c.height = static_cast<int>(num_at(key_at(jc, "height", base, ctx), base + "/height", ctx));
    const json& jr = key_at(jc, "R", base, ctx);
    if (!jr.is_array() || jr.size() != 9)
      throw_validation(ctx + ": " + base + "/R: expected an array of 9 numbers (row-major)");
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col)
        c.R(r, col) = num_at(jr[static_cast<size_t>(r * 3 + col)],
                             base + "/R/" + std::to_string(r * 3 + col), ctx);
    const json& jt = key_at(jc, "t", base, ctx);
    if (!jt.is_array() || jt.size() != 3)
      throw_validation(ctx + ": " + base + "/t: expected an array of 3 numbers");
    for (int a = 0; a < 3; ++a) c.t[a] = num_at(jt[static_cast<size_t>(a)], base + "/t", ctx);
    c.near = num_at(key_at(jc, "near", base, ctx), base + "/near", ctx);
    validate_camera(c, ctx + ": " + base);
    cams.push_back(c);
  }
  return cams;
}

RingSpec load_ring_spec(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw_io("ring spec: cannot open: " + path);
  json root;
  try {
    root = json::parse(f);
  } catch (const json::exception& e) {
    throw_io("ring spec: JSON parse error in " + path + ": " + e.what());
  }
  const std::string ctx = "ring spec " + path;
  RingSpec spec;
  auto opt_num = [&](const char* key, double& dst) {
    if (root.contains(key)) dst = num_at(root[key], std::string("/") + key, ctx);
  };
  auto opt_int = [&](const char* key, int& dst) {
    if (root.contains(key)) dst = static_cast<int>(num_at(root[key], std::string("/") + key, ctx));
  };
  opt_int("count", spec.count);
  opt_num("radius", spec.radius);
  opt_num("height", spec.height);
  opt_num("fov_deg", spec.fov_deg);
  opt_int("width", spec.width);
  opt_int("height_px", spec.height_px);
  opt_num("near", spec.near);
  opt_num("phase_deg", spec.phase_deg);
  if (root.contains("target")) {
    const json& jt = root["target"];
    if (!jt.is_array() || jt.size() != 3) throw_validation(ctx + ": /target: expected [x,y,z]");
    for (int a = 0; a < 3; ++a) spec.target[a] = num_at(jt[static_cast<size_t>(a)], "/target", ctx);
  }
  return spec;
}

}  // namespace carf
