#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "image.hpp"
#include "rng.hpp"

namespace carf {

// One proposed supervision mask with a confidence in [0,1].
struct MaskCandidate {
  Mask mask;
  double confidence = 0.0;
};

// The candidate chosen by confidence-weighted mutual overlap.
struct PseudoMask {
  Mask mask;
  int64_t source_index = -1;
  double score = 0.0;   // winning aggregate Σ_j conf_j · IoU(winner, cand_j)
  bool empty_pair_seen = false;  // an IoU(∅,∅)=1 convention fired during scoring
};

// Intersection-over-union of two same-sized binary masks. Both-empty pairs
// count as identical (IoU 1); empty-vs-nonempty is 0.
double mask_iou(const Mask& a, const Mask& b);

// Chebyshev-ball morphology: every pixel looks at the (2r+1)^2 window around
// it; dilate takes the max, erode the min. r = 0 is the identity.
Mask dilate(const Mask& m, int radius);
Mask erode(const Mask& m, int radius);

// K noisy stand-ins for foundation-model mask proposals: each candidate is the
// ground truth after a random-radius dilate/erode plus random square blob
// insertions/deletions, with confidence = IoU against the ground truth plus
// Gaussian noise, clamped to [0,1]. noise_level 0 reproduces the ground truth
// exactly (confidence exactly 1). Deterministic given the rng state; the draw
// order per candidate is: radius, direction, blob count, then per blob
// (x, y, insert/delete, blob radius), then one confidence-noise normal.
std::vector<MaskCandidate> synth_candidates(const Mask& gt_mask, int64_t k, double noise_level,
                                            Rng& rng);

// Picks the candidate maximizing score(k) = Σ_j conf_j · IoU(M_k, M_j), the
// sum running over all candidates including k itself (IoU(M_k,M_k) = 1).
// Ties break toward the lowest index. All-empty candidate sets are an error.
PseudoMask select_pseudo_mask(const std::vector<MaskCandidate>& candidates);

// View-specific damage: round(fraction * V) views, drawn without replacement,
// get a severity-scaled dilate-or-erode (radius round(severity), coin-flip
// direction; if the chosen direction is a no-op on that mask the other is
// applied). Draw order: the without-replacement selection first, then one
// direction draw per affected view in ascending view order.
struct CorruptionReport {
  std::vector<int64_t> affected_views;  // ascending
  int64_t changed = 0;                  // how many of those masks actually differ now
};
CorruptionReport corrupt_view_masks(std::vector<Mask>& masks, double fraction, double severity,
                                    Rng& rng);

// Candidate-set exchange format: masks as PGM files next to a JSON manifest
// {"candidates":[{"file","confidence"}]}. Relative file entries are resolved
// against the manifest directory.
void save_candidates(const std::vector<MaskCandidate>& candidates, const std::string& dir,
                     const std::string& manifest_name = "manifest.json");
std::vector<MaskCandidate> load_candidates(const std::string& manifest_path);

}  // namespace carf
