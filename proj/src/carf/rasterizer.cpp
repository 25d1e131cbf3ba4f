#include "rasterizer.hpp"

#include <algorithm>
#include <cmath>

#include "threading.hpp"

namespace carf {

std::vector<Splat2D> project_splats(const Camera& cam, const GaussianScene& scene,
                                    const RasterParams& params) {
  std::vector<Splat2D> splats;
  splats.reserve(scene.gaussians.size());
  for (size_t i = 0; i < scene.gaussians.size(); ++i) {
    const Gaussian& g = scene.gaussians[i];
    if (g.opacity < params.alpha_skip) continue;  // can never pass the per-pixel skip
    const ProjectResult pr = project(cam, g.mu);
    if (pr.culled) continue;

    const Mat3 sigma_cam = cam.R * covariance_matrix(g) * cam.R.transpose();
    Mat2 cov = pr.J * sigma_cam * pr.J.transpose();
    cov(0, 0) += params.cov_dilation;
    cov(1, 1) += params.cov_dilation;

    const double rx = params.sigma_bbox * std::sqrt(cov(0, 0));
    const double ry = params.sigma_bbox * std::sqrt(cov(1, 1));
    Splat2D s;
    s.x0 = std::max(0, static_cast<int>(std::ceil(pr.u[0] - rx)));
    s.x1 = std::min(cam.width, static_cast<int>(std::floor(pr.u[0] + rx)) + 1);
    s.y0 = std::max(0, static_cast<int>(std::ceil(pr.u[1] - ry)));
    s.y1 = std::min(cam.height, static_cast<int>(std::floor(pr.u[1] + ry)) + 1);
    if (s.x0 >= s.x1 || s.y0 >= s.y1) continue;

    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    if (!(det > 0.0)) continue;  // dilation makes this unreachable for sane inputs
    s.cov = cov;
    s.cov_inv << cov(1, 1) / det, -cov(0, 1) / det, -cov(1, 0) / det, cov(0, 0) / det;
    s.index = i;
    s.z = pr.q[2];
    s.u = pr.u;
    s.opacity = g.opacity;
    splats.push_back(s);
  }
  std::sort(splats.begin(), splats.end(), [](const Splat2D& a, const Splat2D& b) {
    if (a.z != b.z) return a.z < b.z;
    return a.index < b.index;
  });
  return splats;
}

namespace {

// Splat ids per image row, retaining depth order within each row.
std::vector<std::vector<int32_t>> bucket_rows(const std::vector<Splat2D>& splats, int height) {
  std::vector<std::vector<int32_t>> rows(static_cast<size_t>(height));
  for (size_t k = 0; k < splats.size(); ++k)
    for (int y = splats[k].y0; y < splats[k].y1; ++y)
      rows[static_cast<size_t>(y)].push_back(static_cast<int32_t>(k));
  return rows;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

RenderedMask composite_scalar(const std::vector<Splat2D>& splats, int width, int height,
                              const std::vector<double>& m, bool squash, double s_out,
                              double b_out, const RasterParams& params, int threads) {
  if (width < 1 || height < 1) throw_validation("composite: bad image size");
  for (const Splat2D& s : splats)
    if (s.index >= m.size())
      throw_validation("composite: score vector has " + std::to_string(m.size()) +
                       " entries but splats reference primitive " + std::to_string(s.index));

  RenderedMask out;
  out.width = width;
  out.height = height;
  out.logit = FloatImage(width, height);
  out.prob = FloatImage(width, height);
  out.weight_sum = FloatImage(width, height);
  out.t_final = FloatImage(width, height, 1.0);
  out.squash = squash;
  out.s_out = s_out;
  out.b_out = b_out;
  out.score_count = m.size();

  const auto rows = bucket_rows(splats, height);
  const int64_t npx = static_cast<int64_t>(width) * height;
  const int nthreads = resolve_threads(threads);
  const int nchunks = static_cast<int>(std::min<int64_t>(nthreads, npx));

  std::vector<std::vector<std::pair<int32_t, double>>> chunk_contribs(
      static_cast<size_t>(nchunks));
  std::vector<std::vector<int32_t>> chunk_counts(static_cast<size_t>(nchunks));

  parallel_chunks(npx, nthreads, [&](int chunk, int64_t begin, int64_t end) {
    auto& contribs = chunk_contribs[static_cast<size_t>(chunk)];
    auto& counts = chunk_counts[static_cast<size_t>(chunk)];
    counts.reserve(static_cast<size_t>(end - begin));
    for (int64_t p = begin; p < end; ++p) {
      const int x = static_cast<int>(p % width);
      const int y = static_cast<int>(p / width);
      double transmit = 1.0, logit = 0.0, wsum = 0.0;
      int32_t added = 0;
      for (int32_t k : rows[static_cast<size_t>(y)]) {
        if (transmit < params.t_stop) break;
        const Splat2D& s = splats[static_cast<size_t>(k)];
        if (x < s.x0 || x >= s.x1) continue;
        const double dx = x - s.u[0];
        const double dy = y - s.u[1];
        const double power = -0.5 * (s.cov_inv(0, 0) * dx * dx + s.cov_inv(1, 1) * dy * dy) -
                             s.cov_inv(0, 1) * dx * dy;
        if (power > 0.0) continue;
        double alpha = s.opacity * std::exp(power);
        if (alpha > params.alpha_clamp) alpha = params.alpha_clamp;
        if (alpha < params.alpha_skip) continue;
        const double w = transmit * alpha;
        logit += w * m[s.index];
        wsum += w;
        contribs.emplace_back(static_cast<int32_t>(s.index), w);
        ++added;
        transmit *= (1.0 - alpha);
      }
      out.logit.data[static_cast<size_t>(p)] = logit;
      out.weight_sum.data[static_cast<size_t>(p)] = wsum;
      out.t_final.data[static_cast<size_t>(p)] = transmit;
      out.prob.data[static_cast<size_t>(p)] = squash ? sigmoid(s_out * logit + b_out) : logit;
      counts.push_back(added);
    }
  });

  // Stitch per-chunk contribution lists into one flat arena, chunk order.
  size_t total = 0;
  for (const auto& c : chunk_contribs) total += c.size();
  out.contribs.reserve(total);
  out.offsets.assign(static_cast<size_t>(npx) + 1, 0);
  int64_t p = 0;
  for (int c = 0; c < nchunks; ++c) {
    size_t at = out.contribs.size();
    out.contribs.insert(out.contribs.end(), chunk_contribs[static_cast<size_t>(c)].begin(),
                        chunk_contribs[static_cast<size_t>(c)].end());
    for (int32_t cnt : chunk_counts[static_cast<size_t>(c)]) {
      out.offsets[static_cast<size_t>(p)] = static_cast<int64_t>(at);
      at += static_cast<size_t>(cnt);
      ++p;
    }
  }
  out.offsets[static_cast<size_t>(npx)] = static_cast<int64_t>(out.contribs.size());
  return out;
}

namespace {

// Shared pullback core: takes per-pixel d(loss)/dz (z = squash input) and
// d(loss)/dlogit fields; either may be empty when not needed.
CompositeGrads pullback(const RenderedMask& r, const std::vector<double>& dlogit,
                        const std::vector<double>& dz, size_t m_size, int threads) {
  CompositeGrads g;
  g.dm.assign(m_size, 0.0);
  const int64_t npx = static_cast<int64_t>(r.width) * r.height;
  const int nthreads = resolve_threads(threads);
  const int nchunks = static_cast<int>(std::min<int64_t>(nthreads, npx));

  std::vector<std::vector<double>> dm_parts(static_cast<size_t>(nchunks));
  std::vector<double> ds_parts(static_cast<size_t>(nchunks), 0.0);
  std::vector<double> db_parts(static_cast<size_t>(nchunks), 0.0);

  parallel_chunks(npx, nthreads, [&](int chunk, int64_t begin, int64_t end) {
    auto& dm = dm_parts[static_cast<size_t>(chunk)];
    dm.assign(m_size, 0.0);
    double ds = 0.0, db = 0.0;
    for (int64_t p = begin; p < end; ++p) {
      const double dl = dlogit[static_cast<size_t>(p)];
      if (dl != 0.0) {
        for (int64_t c = r.offsets[static_cast<size_t>(p)];
             c < r.offsets[static_cast<size_t>(p) + 1]; ++c) {
          const auto& [idx, w] = r.contribs[static_cast<size_t>(c)];
          dm[static_cast<size_t>(idx)] += w * dl;
        }
      }
      if (!dz.empty()) {
        const double dzp = dz[static_cast<size_t>(p)];
        ds += dzp * r.logit.data[static_cast<size_t>(p)];
        db += dzp;
      }
    }
    ds_parts[static_cast<size_t>(chunk)] = ds;
    db_parts[static_cast<size_t>(chunk)] = db;
  });

  for (int c = 0; c < nchunks; ++c) {
    const auto& dm = dm_parts[static_cast<size_t>(c)];
    for (size_t i = 0; i < m_size; ++i) g.dm[i] += dm[i];
    g.ds_out += ds_parts[static_cast<size_t>(c)];
    g.db_out += db_parts[static_cast<size_t>(c)];
  }
  return g;
}

}  // namespace

CompositeGrads composite_scalar_backward(const RenderedMask& rendered,
                                         const FloatImage& dloss_dlogit, int threads) {
  if (dloss_dlogit.width != rendered.width || dloss_dlogit.height != rendered.height)
    throw_validation("composite backward: gradient field size mismatch");
  const size_t m_size = rendered.score_count;

  if (!rendered.squash) {
    return pullback(rendered, dloss_dlogit.data, {}, m_size, threads);
  }
  if (rendered.s_out == 0.0)
    throw_validation(
        "composite backward: squash gradients from a logit-space field need s_out != 0");
  // dz = dlogit / s_out because dlogit = dz * s_out through z = s*logit + b.
  std::vector<double> dz(dloss_dlogit.data.size());
  for (size_t i = 0; i < dz.size(); ++i) dz[i] = dloss_dlogit.data[i] / rendered.s_out;
  return pullback(rendered, dloss_dlogit.data, dz, m_size, threads);
}

Tape::NodeId composite_node(Tape& tape, Tape::NodeId m_node, Tape::NodeId s_out_node,
                            Tape::NodeId b_out_node, const std::vector<Splat2D>& splats,
                            int width, int height, const RasterParams& params, int threads,
                            std::shared_ptr<const RenderedMask>* out_rendered) {
  const Tensor& m = tape.value(m_node);
  if (m.shape.size() != 1) throw_validation("composite node: score node must be a vector");
  const double s_out = tape.scalar(s_out_node);
  const double b_out = tape.scalar(b_out_node);

  auto rendered = std::make_shared<RenderedMask>(
      composite_scalar(splats, width, height, m.data, true, s_out, b_out, params, threads));
  if (out_rendered) *out_rendered = rendered;

  Tensor value({static_cast<int64_t>(height) * width});
  value.data = rendered->prob.data;

  const int64_t m_size = m.numel();
  return tape.make_node(
      std::move(value), [m_node, s_out_node, b_out_node, rendered, m_size, threads](
                            Tape& t, Tape::NodeId self) {
        const Tensor& gprob = t.grad(self);
        const RenderedMask& r = *rendered;
        const int64_t npx = static_cast<int64_t>(r.width) * r.height;
        std::vector<double> dz(static_cast<size_t>(npx));
        std::vector<double> dlogit(static_cast<size_t>(npx));
        for (int64_t p = 0; p < npx; ++p) {
          const double prob = r.prob.data[static_cast<size_t>(p)];
          const double d = gprob.data[static_cast<size_t>(p)] * prob * (1.0 - prob);
          dz[static_cast<size_t>(p)] = d;
          dlogit[static_cast<size_t>(p)] = d * r.s_out;
        }
        CompositeGrads g = pullback(r, dlogit, dz, static_cast<size_t>(m_size), threads);
        t.accumulate(m_node, g.dm.data(), m_size);
        t.accumulate_at(s_out_node, 0, g.ds_out);
        t.accumulate_at(b_out_node, 0, g.db_out);
      });
}

RenderedRgb composite_rgb(const std::vector<Splat2D>& splats, int width, int height,
                          const GaussianScene& scene, const RasterParams& params, int threads) {
  RenderedRgb out;
  out.r = FloatImage(width, height);
  out.g = FloatImage(width, height);
  out.b = FloatImage(width, height);
  out.weight_sum = FloatImage(width, height);

  const auto rows = bucket_rows(splats, height);
  const int64_t npx = static_cast<int64_t>(width) * height;
  parallel_chunks(npx, threads, [&](int, int64_t begin, int64_t end) {
    for (int64_t p = begin; p < end; ++p) {
      const int x = static_cast<int>(p % width);
      const int y = static_cast<int>(p / width);
      double transmit = 1.0, cr = 0.0, cg = 0.0, cb = 0.0, wsum = 0.0;
      for (int32_t k : rows[static_cast<size_t>(y)]) {
        if (transmit < params.t_stop) break;
        const Splat2D& s = splats[static_cast<size_t>(k)];
        if (x < s.x0 || x >= s.x1) continue;
        const double dx = x - s.u[0];
        const double dy = y - s.u[1];
        const double power = -0.5 * (s.cov_inv(0, 0) * dx * dx + s.cov_inv(1, 1) * dy * dy) -
                             s.cov_inv(0, 1) * dx * dy;
        if (power > 0.0) continue;
        double alpha = s.opacity * std::exp(power);
        if (alpha > params.alpha_clamp) alpha = params.alpha_clamp;
        if (alpha < params.alpha_skip) continue;
        const double w = transmit * alpha;
        const Vec3& col = scene.gaussians[s.index].color;
        cr += w * col[0];
        cg += w * col[1];
        cb += w * col[2];
        wsum += w;
        transmit *= (1.0 - alpha);
      }
      out.r.data[static_cast<size_t>(p)] = cr;
      out.g.data[static_cast<size_t>(p)] = cg;
      out.b.data[static_cast<size_t>(p)] = cb;
      out.weight_sum.data[static_cast<size_t>(p)] = wsum;
    }
  });
  return out;
}

double photometric_loss(const RenderedRgb& rendered, const FloatImage& target_r,
                        const FloatImage& target_g, const FloatImage& target_b) {
  if (target_r.width != rendered.r.width || target_r.height != rendered.r.height ||
      !(target_g.width == target_r.width && target_b.width == target_r.width))
    throw_validation("photometric: target images must match the render size");
  double acc = 0.0;
  for (size_t i = 0; i < rendered.r.data.size(); ++i) {
    const double er = rendered.r.data[i] - target_r.data[i];
    const double eg = rendered.g.data[i] - target_g.data[i];
    const double eb = rendered.b.data[i] - target_b.data[i];
    acc += er * er + eg * eg + eb * eb;
  }
  return acc;
}

}  // namespace carf
