#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rng.hpp"

namespace carf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// One anisotropic 3D Gaussian primitive. `rot` is a unit quaternion in
// (w, x, y, z) order; `label` groups primitives into nameable objects, with
// -1 meaning unlabeled background clutter.
struct Gaussian {
  Vec3 mu = Vec3::Zero();
  Vec3 scale = Vec3::Ones();
  std::array<double, 4> rot = {1.0, 0.0, 0.0, 0.0};
  double opacity = 1.0;
  Vec3 color = Vec3::Zero();
  int label = -1;
};

struct GaussianScene {
  uint64_t seed = 0;
  Vec3 bbox_min = Vec3::Zero();
  Vec3 bbox_max = Vec3::Zero();
  std::vector<Gaussian> gaussians;

  size_t size() const { return gaussians.size(); }
  // Distinct non-background labels, ascending.
  std::vector<int> labels() const;
};

Mat3 rotation_matrix(const std::array<double, 4>& rot_wxyz);

// World-space covariance R diag(scale^2) R^T.
Mat3 covariance_matrix(const Gaussian& g);

// Procedural scene description: labeled blobs plus background clutter.
// Cluster k gets label k; member centers are normally distributed around the
// cluster center with per-axis sigma `extent`, truncated at 4 sigma.
struct ClusterSpec {
  Vec3 center = Vec3::Zero();
  double extent = 0.2;
  int count = 100;
  Vec3 color = Vec3(0.5, 0.5, 0.5);
};

struct SceneSpec {
  std::vector<ClusterSpec> clusters;
  int background_count = 0;
  double background_half_width = 1.5;  // clutter uniform in this cube
  // Clutter centers are resampled until at least this far from every cluster
  // center (0 = allowed anywhere, including inside labeled blobs).
  double background_clearance = 0.0;
  double scale_min = 0.02, scale_max = 0.06;
  double opacity_min = 0.6, opacity_max = 0.95;
};

// Deterministic: same (spec, seed) -> identical scene on every platform.
GaussianScene generate_scene(const SceneSpec& spec, uint64_t seed);

// The default desk-sized fixture: three labeled clusters, ~500 primitives.
SceneSpec smoke_scene_spec();

// Throws with a JSON-pointer-style path on any constraint violation.
void validate_scene(const GaussianScene& scene, const std::string& context);

// Canonical float formatting (17 significant digits) so save -> load -> save
// is byte-stable and save/load round-trips values exactly.
void save_scene(const GaussianScene& scene, const std::string& path);
GaussianScene load_scene(const std::string& path);

SceneSpec load_scene_spec(const std::string& path);

}  // namespace carf
