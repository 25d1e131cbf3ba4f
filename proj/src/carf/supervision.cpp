#include "supervision.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>
#include "common.hpp"

namespace carf {

namespace fs = std::filesystem;

double mask_iou(const Mask& a, const Mask& b) {
  if (a.width != b.width || a.height != b.height)
    throw_validation("iou: mask dimensions differ (" + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                     std::to_string(b.height) + ")");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    inter += a.data[i] & b.data[i];
    uni += a.data[i] | b.data[i];
  }
  if (uni == 0) return 1.0;  // two empty masks are identical
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

Mask morph(const Mask& m, int radius, bool take_max) {
  if (radius <= 0) return m;
  Mask out(m.width, m.height);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      uint8_t acc = take_max ? 0 : 1;
      const int y0 = std::max(0, y - radius), y1 = std::min(m.height - 1, y + radius);
      const int x0 = std::max(0, x - radius), x1 = std::min(m.width - 1, x + radius);
      for (int yy = y0; yy <= y1 && acc == (take_max ? 0 : 1); ++yy)
        for (int xx = x0; xx <= x1; ++xx) {
          const uint8_t v = m.at(xx, yy);
          if (take_max ? v != 0 : v == 0) {
            acc = take_max ? 1 : 0;
            break;
          }
        }
      out.at(x, y) = acc;
    }
  }
  return out;
}

void paint_square(Mask& m, int cx, int cy, int radius, uint8_t value) {
  const int y0 = std::max(0, cy - radius), y1 = std::min(m.height - 1, cy + radius);
  const int x0 = std::max(0, cx - radius), x1 = std::min(m.width - 1, cx + radius);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) m.at(x, y) = value;
}

}  // namespace

Mask dilate(const Mask& m, int radius) { return morph(m, radius, true); }
Mask erode(const Mask& m, int radius) { return morph(m, radius, false); }

std::vector<MaskCandidate> synth_candidates(const Mask& gt_mask, int64_t k, double noise_level,
                                            Rng& rng) {
  if (k < 1) throw_validation("synth_candidates: need at least one candidate");
  if (noise_level < 0.0) throw_validation("synth_candidates: noise level must be >= 0");
  if (gt_mask.empty_mask()) throw_validation("synth_candidates: ground-truth mask is empty");

  std::vector<MaskCandidate> out;
  out.reserve(static_cast<size_t>(k));
  for (int64_t c = 0; c < k; ++c) {
    const int radius = static_cast<int>(std::llround(rng.uniform01() * noise_level));
    const bool grow = rng.uniform01() < 0.5;
    const auto blobs = static_cast<int>(std::llround(rng.uniform01() * noise_level));

    Mask cand = morph(gt_mask, radius, grow);
    for (int b = 0; b < blobs; ++b) {
      const int x = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(gt_mask.width)));
      const int y = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(gt_mask.height)));
      const bool insert = rng.uniform01() < 0.5;
      const int br = 1 + static_cast<int>(rng.uniform_int(2));
      paint_square(cand, x, y, br, insert ? 1 : 0);
    }

    const double conf_noise = rng.normal() * 0.05 * noise_level;
    const double conf = std::clamp(mask_iou(cand, gt_mask) + conf_noise, 0.0, 1.0);
    out.push_back(MaskCandidate{std::move(cand), conf});
  }
  return out;
}

PseudoMask select_pseudo_mask(const std::vector<MaskCandidate>& candidates) {
  if (candidates.empty()) throw_validation("select_pseudo_mask: empty candidate list");
  const size_t k = candidates.size();
  for (size_t i = 0; i < k; ++i) {
    const auto& c = candidates[i];
    if (!std::isfinite(c.confidence) || c.confidence < 0.0)
      throw_validation("select_pseudo_mask: candidate " + std::to_string(i) +
                       " has a non-finite or negative confidence");
    if (c.mask.width != candidates[0].mask.width || c.mask.height != candidates[0].mask.height)
      throw_validation("select_pseudo_mask: candidate " + std::to_string(i) +
                       " mask dimensions differ from candidate 0");
  }

  bool any_nonempty = false;
  for (const auto& c : candidates) any_nonempty = any_nonempty || !c.mask.empty_mask();
  if (!any_nonempty)
    throw_validation("select_pseudo_mask: every candidate mask is empty; overlap scores are "
                     "undefined");

  // Pairwise IoU, symmetric; diagonal is 1 by definition.
  std::vector<double> iou(k * k, 1.0);
  bool empty_pair = false;
  for (size_t i = 0; i < k; ++i)
    for (size_t j = i + 1; j < k; ++j) {
      if (candidates[i].mask.empty_mask() && candidates[j].mask.empty_mask()) empty_pair = true;
      const double v = mask_iou(candidates[i].mask, candidates[j].mask);
      iou[i * k + j] = v;
      iou[j * k + i] = v;
    }

  size_t best = 0;
  double best_score = -1.0;
  for (size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (size_t j = 0; j < k; ++j) s += candidates[j].confidence * iou[i * k + j];
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return PseudoMask{candidates[best].mask, static_cast<int64_t>(best), best_score, empty_pair};
}

CorruptionReport corrupt_view_masks(std::vector<Mask>& masks, double fraction, double severity,
                                    Rng& rng) {
  if (fraction < 0.0 || fraction > 1.0)
    throw_validation("corrupt_view_masks: fraction must lie in [0, 1]");
  if (severity < 0.0) throw_validation("corrupt_view_masks: severity must be >= 0");

  const auto v = static_cast<int64_t>(masks.size());
  const auto affected_count = std::min<int64_t>(v, std::llround(fraction * static_cast<double>(v)));

  // Partial Fisher-Yates: the first `affected_count` entries of the shuffled
  // index array are the affected views.
  std::vector<int64_t> order(masks.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  for (int64_t i = 0; i < affected_count; ++i) {
    const auto j = i + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(v - i)));
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  order.resize(static_cast<size_t>(affected_count));
  std::sort(order.begin(), order.end());

  CorruptionReport report;
  report.affected_views = order;
  const int radius = static_cast<int>(std::llround(severity));
  for (int64_t view : order) {
    Mask& m = masks[static_cast<size_t>(view)];
    const bool grow = rng.uniform01() < 0.5;
    Mask damaged = morph(m, radius, grow);
    if (damaged.data == m.data) damaged = morph(m, radius, !grow);
    if (damaged.data != m.data) ++report.changed;
    m = std::move(damaged);
  }
  return report;
}

void save_candidates(const std::vector<MaskCandidate>& candidates, const std::string& dir,
                     const std::string& manifest_name) {
  if (candidates.empty()) throw_validation("save_candidates: empty candidate list");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw_io("save_candidates: cannot create directory '" + dir + "': " + ec.message());

  nlohmann::json manifest;
  manifest["candidates"] = nlohmann::json::array();
  for (size_t i = 0; i < candidates.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "cand_%03zu.pgm", i);
    save_mask_pgm(candidates[i].mask, (fs::path(dir) / name).string());
    manifest["candidates"].push_back({{"file", name}, {"confidence", candidates[i].confidence}});
  }
  const auto manifest_path = (fs::path(dir) / manifest_name).string();
  std::ofstream out(manifest_path);
  if (!out) throw_io("save_candidates: cannot write '" + manifest_path + "'");
  out << manifest.dump(2) << "\n";
  if (!out) throw_io("save_candidates: write failed for '" + manifest_path + "'");
}

std::vector<MaskCandidate> load_candidates(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw_io("load_candidates: cannot open '" + manifest_path + "'");
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw_io("load_candidates: '" + manifest_path + "' is not valid JSON: " + e.what());
  }
  if (!manifest.contains("candidates") || !manifest["candidates"].is_array() ||
      manifest["candidates"].empty())
    throw_validation("load_candidates: manifest needs a non-empty 'candidates' array");

  const auto base = fs::path(manifest_path).parent_path();
  std::vector<MaskCandidate> out;
  for (size_t i = 0; i < manifest["candidates"].size(); ++i) {
    const auto& entry = manifest["candidates"][i];
    if (!entry.contains("file") || !entry["file"].is_string() || !entry.contains("confidence") ||
        !entry["confidence"].is_number())
      throw_validation("load_candidates: candidate " + std::to_string(i) +
                       " needs string 'file' and numeric 'confidence'");
    const double conf = entry["confidence"].get<double>();
    if (!std::isfinite(conf) || conf < 0.0 || conf > 1.0)
      throw_validation("load_candidates: candidate " + std::to_string(i) +
                       " confidence must lie in [0, 1]");
    fs::path file = entry["file"].get<std::string>();
    if (file.is_relative()) file = base / file;
    out.push_back(MaskCandidate{load_mask_pgm(file.string()), conf});
    if (i > 0 && (out[i].mask.width != out[0].mask.width || out[i].mask.height != out[0].mask.height))
      throw_validation("load_candidates: candidate " + std::to_string(i) +
                       " mask dimensions differ from candidate 0");
  }
  return out;
}

}  // namespace carf
