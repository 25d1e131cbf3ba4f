#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <vector>

#include "camera.hpp"
#include "image.hpp"
#include "scene.hpp"
#include "tape.hpp"

namespace carf {

using Mat2 = Eigen::Matrix2d;

// Every numeric convention of the splat renderer in one place.
struct RasterParams {
  double alpha_clamp = 0.99;        // per-splat alpha ceiling
  double alpha_skip = 1.0 / 255.0;  // contributions fainter than this are dropped
  double t_stop = 1e-4;             // stop compositing once transmittance falls below
  double cov_dilation = 0.3;        // screen covariance inflation (keeps footprints >= ~1px)
  double sigma_bbox = 3.0;          // rasterized footprint radius, in standard deviations
};

// A scene Gaussian after perspective projection into one view.
struct Splat2D {
  size_t index = 0;           // index into the scene's primitive array
  double z = 0.0;             // camera-space depth (sort key)
  Eigen::Vector2d u{0, 0};    // projected center, pixels
  Mat2 cov = Mat2::Identity();
  Mat2 cov_inv = Mat2::Identity();
  double opacity = 0.0;
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;  // clipped footprint, half-open pixel ranges
};

// Projects, culls (near plane, opacity floor, empty footprint), dilates the
// screen covariance, and depth-sorts ascending with index as the tie-break.
std::vector<Splat2D> project_splats(const Camera& cam, const GaussianScene& scene,
                                    const RasterParams& params = {});

// Output of scalar compositing plus everything the backward pass needs.
// Pixels sample splat kernels at integer coordinates.
struct RenderedMask {
  int width = 0, height = 0;
  FloatImage logit;       // per-pixel Σ_i w_i m_i
  FloatImage prob;        // squash ? sigmoid(s_out * logit + b_out) : logit
  FloatImage weight_sum;  // per-pixel Σ_i w_i
  FloatImage t_final;     // transmittance after the last processed splat
  bool squash = true;
  double s_out = 1.0, b_out = 0.0;
  size_t score_count = 0;  // length of the score vector that was composited

  // Per-pixel contribution lists, flattened: contribs[offsets[p]..offsets[p+1])
  // holds (primitive index, composited weight w_i) in front-to-back order.
  std::vector<int64_t> offsets;
  std::vector<std::pair<int32_t, double>> contribs;
};

// Front-to-back alpha compositing of per-primitive scalars m over one view.
// m is indexed by primitive index and must cover the whole scene.
RenderedMask composite_scalar(const std::vector<Splat2D>& splats, int width, int height,
                              const std::vector<double>& m, bool squash, double s_out,
                              double b_out, const RasterParams& params = {}, int threads = 1);

struct CompositeGrads {
  std::vector<double> dm;  // d(loss)/d(m_i), indexed like m
  double ds_out = 0.0;
  double db_out = 0.0;
};

// Pulls a per-pixel d(loss)/d(logit) field back onto scores and squash
// parameters. Recovering the squash gradients from a logit-space field
// requires s_out != 0 (the chain passes through z = s_out * logit + b_out).
CompositeGrads composite_scalar_backward(const RenderedMask& rendered,
                                         const FloatImage& dloss_dlogit, int threads = 1);

// Differentiable compositing as a tape node: consumes the score vector node
// (length = scene size) plus rank-0 squash parameter nodes, produces the
// probability map as a flat (height*width) tensor node. The rendered context
// is shared with the caller for inspection.
Tape::NodeId composite_node(Tape& tape, Tape::NodeId m_node, Tape::NodeId s_out_node,
                            Tape::NodeId b_out_node, const std::vector<Splat2D>& splats,
                            int width, int height, const RasterParams& params, int threads,
                            std::shared_ptr<const RenderedMask>* out_rendered = nullptr);

// Per-channel color compositing (no squash); channels composite exactly like
// composite_scalar on the corresponding color component.
struct RenderedRgb {
  FloatImage r, g, b;
  FloatImage weight_sum;
};
RenderedRgb composite_rgb(const std::vector<Splat2D>& splats, int width, int height,
                          const GaussianScene& scene, const RasterParams& params = {},
                          int threads = 1);

// Σ over pixels and channels of squared error against a target image.
double photometric_loss(const RenderedRgb& rendered, const FloatImage& target_r,
                        const FloatImage& target_g, const FloatImage& target_b);

}  // namespace carf
