#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rng.hpp"
#include "scene.hpp"

namespace carf {

// Pinhole camera with a world-to-camera rigid transform (row-major R, t) and
// pixel intrinsics. Camera space: x right, y down, z forward; a world point p
// maps to q = R p + t and projects at (fx qx/qz + cx, fy qy/qz + cy).
struct Camera {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  double near = 0.1;
};

// Default opacity floor for visibility bookkeeping: primitives fainter than
// this are ignored when measuring what a view can see.
constexpr double kDefaultVisOpacity = 0.05;

// Flat conditioning vector for the camera-aware branch: the 12 pose numbers
// (row-major R, then t) plus resolution-normalized intrinsics
// (fx/w, fy/h, cx/w, cy/h). 16 entries total.
std::array<double, 16> camera_descriptor(const Camera& cam);

struct ProjectResult {
  Vec3 q = Vec3::Zero();               // camera-space point
  Eigen::Vector2d u{0.0, 0.0};         // pixel coordinates
  Eigen::Matrix<double, 2, 3> J;       // d(u)/d(q) at q
  bool culled = false;                 // behind the near plane
};

ProjectResult project(const Camera& cam, const Vec3& mu);

// Indices (ascending) of primitives whose center projects in-bounds in front
// of the near plane with opacity >= eps_vis.
std::vector<size_t> visible_set(const Camera& cam, const GaussianScene& scene,
                                double eps_vis = kDefaultVisOpacity);

// |V(a) ∩ V(b)| / min(|V(a)|, |V(b)|); 0 when either set is empty.
double overlap_ratio(const Camera& a, const Camera& b, const GaussianScene& scene,
                     double eps_vis = kDefaultVisOpacity);

struct ViewPair {
  int a = -1;
  int b = -1;
};

// Uniform sampling over admissible view pairs (mutual visible-set overlap >=
// min_overlap). Visible sets and the admissible pair list are precomputed
// once; each sample consumes exactly two RNG draws (pair index, orientation),
// so downstream random streams never shift with the draw outcome.
class PairSampler {
 public:
  PairSampler(const std::vector<Camera>& cams, const GaussianScene& scene, double min_overlap,
              std::vector<int> view_indices = {}, double eps_vis = kDefaultVisOpacity);

  ViewPair sample(Rng& rng) const;

  // First `extra + 2` views for multi-view training: an admissible pair, then
  // uniform draws among views that overlap the anchor (first) view.
  std::vector<int> sample_views(Rng& rng, int count) const;

  size_t admissible_pairs() const { return pairs_.size(); }
  double overlap(int view_a, int view_b) const;

 private:
  std::vector<int> views_;                    // original camera indices
  std::vector<std::vector<double>> overlap_;  // [i][j] over views_ positions
  std::vector<std::pair<int, int>> pairs_;    // positions into views_
  double min_overlap_;
};

// One-shot convenience wrapper around PairSampler.
ViewPair sample_pair(const std::vector<Camera>& cams, const GaussianScene& scene,
                     double min_overlap, Rng& rng, double eps_vis = kDefaultVisOpacity);

// Evenly spaced cameras on a horizontal circle, all aimed at `target`.
struct RingSpec {
  int count = 8;
  double radius = 4.0;
  double height = 0.8;
  Vec3 target = Vec3::Zero();
  double fov_deg = 40.0;  // horizontal field of view
  int width = 64;
  int height_px = 64;
  double near = 0.1;
  double phase_deg = 0.0;
};

std::vector<Camera> make_camera_ring(const RingSpec& spec);

// Held-out protocol for ring captures: alternating positions, even indices
// train and odd indices test.
void ring_split(size_t camera_count, std::vector<int>& train, std::vector<int>& test);

void validate_camera(const Camera& cam, const std::string& context);
void save_cameras(const std::vector<Camera>& cams, const std::string& path);
std::vector<Camera> load_cameras(const std::string& path);

RingSpec load_ring_spec(const std::string& path);

}  // namespace carf
