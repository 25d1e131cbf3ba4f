#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "carf/common.hpp"
#include "carf/image.hpp"
#include "carf/rng.hpp"
#include "carf/supervision.hpp"

using namespace carf;

namespace {

Mask block_mask(int w, int h, int x0, int y0, int x1, int y1) {
  Mask m(w, h);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) m.at(x, y) = 1;
  return m;
}

Mask random_mask(int w, int h, double density, Rng& rng) {
  Mask m(w, h);
  for (auto& px : m.data) px = rng.uniform01() < density ? 1 : 0;
  return m;
}

// Independent per-pixel IoU: walks every pixel, no bit tricks shared with the
// implementation. Both-empty pairs count as 1.
double oracle_iou(const Mask& a, const Mask& b) {
  REQUIRE(a.width == b.width);
  REQUIRE(a.height == b.height);
  int64_t inter = 0, uni = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      const bool pa = a.at(x, y) != 0, pb = b.at(x, y) != 0;
      if (pa && pb) ++inter;
      if (pa || pb) ++uni;
    }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Mask complement(const Mask& m) {
  Mask out = m;
  for (auto& px : out.data) px = px ? 0 : 1;
  return out;
}

void oracle_paint_square(Mask& m, int cx, int cy, int radius, uint8_t value) {
  for (int y = std::max(0, cy - radius); y <= std::min(m.height - 1, cy + radius); ++y)
    for (int x = std::max(0, cx - radius); x <= std::min(m.width - 1, cx + radius); ++x)
      m.at(x, y) = value;
}

}  // namespace

// ---------------------------------------------------------------------------
// mask_iou
// ---------------------------------------------------------------------------

TEST_CASE("iou of two 2x4 rectangles offset by one row is exactly 1/3") {
  // A covers rows 2-3, B covers rows 3-4, both cols 1-4 of an 8x8 grid:
  // intersection is the shared row (4 px), union is three rows (12 px).
  const Mask a = block_mask(8, 8, 1, 2, 4, 3);
  const Mask b = block_mask(8, 8, 1, 3, 4, 4);
  REQUIRE(a.count() == 8);
  REQUIRE(b.count() == 8);
  CHECK(mask_iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(0).scale(1e-12));
  CHECK(std::abs(mask_iou(a, b) - 1.0 / 3.0) <= 1e-12);
}

TEST_CASE("iou conventions: empty pairs, self, symmetry") {
  const Mask empty(6, 6);
  const Mask blob = block_mask(6, 6, 2, 2, 3, 3);
  CHECK(mask_iou(empty, empty) == 1.0);
  CHECK(mask_iou(empty, blob) == 0.0);
  CHECK(mask_iou(blob, empty) == 0.0);
  CHECK(mask_iou(blob, blob) == 1.0);

  Rng rng(31);
  for (int t = 0; t < 20; ++t) {
    const Mask x = random_mask(9, 7, 0.4, rng);
    const Mask y = random_mask(9, 7, 0.4, rng);
    CHECK(mask_iou(x, y) == mask_iou(y, x));
  }
}

TEST_CASE("iou rejects dimension mismatches") {
  CHECK_THROWS_AS(mask_iou(Mask(4, 4), Mask(4, 5)), Error);
  CHECK_THROWS_AS(mask_iou(Mask(3, 4), Mask(4, 4)), Error);
}

TEST_CASE("iou matches a pixel-enumeration oracle on 1000 random pairs") {
  Rng rng(77);
  for (int t = 0; t < 1000; ++t) {
    const double da = 0.05 + 0.9 * rng.uniform01();
    const double db = 0.05 + 0.9 * rng.uniform01();
    Mask a = random_mask(32, 32, da, rng);
    Mask b = random_mask(32, 32, db, rng);
    if (t % 97 == 0) a = Mask(32, 32);   // sprinkle empty-vs-X cases
    if (t % 193 == 0) b = Mask(32, 32);  // including the occasional empty pair
    CHECK(mask_iou(a, b) == oracle_iou(a, b));
  }
}

// ---------------------------------------------------------------------------
// dilate / erode
// ---------------------------------------------------------------------------

TEST_CASE("radius zero (and negative) morphology is the identity") {
  Rng rng(5);
  const Mask m = random_mask(11, 13, 0.5, rng);
  CHECK(dilate(m, 0).data == m.data);
  CHECK(erode(m, 0).data == m.data);
  CHECK(dilate(m, -3).data == m.data);
  CHECK(erode(m, -3).data == m.data);
}

TEST_CASE("dilating an isolated pixel grows a clamped square") {
  Mask m(7, 7);
  m.at(3, 3) = 1;
  CHECK(dilate(m, 1).data == block_mask(7, 7, 2, 2, 4, 4).data);
  CHECK(dilate(m, 2).data == block_mask(7, 7, 1, 1, 5, 5).data);

  Mask corner(5, 5);
  corner.at(0, 0) = 1;
  CHECK(dilate(corner, 1).data == block_mask(5, 5, 0, 0, 1, 1).data);
}

TEST_CASE("eroding a solid block shrinks it by the radius") {
  const Mask m = block_mask(8, 8, 2, 2, 5, 5);
  CHECK(erode(m, 1).data == block_mask(8, 8, 3, 3, 4, 4).data);
  CHECK(erode(m, 2).count() == 0);

  Mask pixel(5, 5);
  pixel.at(2, 2) = 1;
  CHECK(erode(pixel, 1).count() == 0);
}

TEST_CASE("full and empty masks are fixed points of both operations") {
  const Mask full(6, 4, 1);
  const Mask empty(6, 4);
  CHECK(dilate(full, 2).data == full.data);
  CHECK(erode(full, 2).data == full.data);  // windows clamp at the border
  CHECK(dilate(empty, 2).data == empty.data);
  CHECK(erode(empty, 2).data == empty.data);
}

TEST_CASE("erode is the complement-dual of dilate") {
  Rng rng(71);
  for (int t = 0; t < 50; ++t) {
    const Mask m = random_mask(16, 16, 0.2 + 0.6 * rng.uniform01(), rng);
    const int r = 1 + static_cast<int>(rng.uniform_int(2));
    CHECK(erode(m, r).data == complement(dilate(complement(m), r)).data);
  }
}

TEST_CASE("dilation only adds pixels and erosion only removes them") {
  Rng rng(72);
  for (int t = 0; t < 30; ++t) {
    const Mask m = random_mask(14, 10, 0.4, rng);
    const Mask grown = dilate(m, 1);
    const Mask shrunk = erode(m, 1);
    for (size_t i = 0; i < m.data.size(); ++i) {
      if (m.data[i]) CHECK(grown.data[i] == 1);
      if (!m.data[i]) CHECK(shrunk.data[i] == 0);
    }
  }
}

// ---------------------------------------------------------------------------
// synth_candidates
// ---------------------------------------------------------------------------

TEST_CASE("noise level zero reproduces the ground truth with confidence 1") {
  const Mask gt = block_mask(12, 12, 3, 3, 8, 8);
  Rng rng(100);
  const auto cands = synth_candidates(gt, 4, 0.0, rng);
  REQUIRE(cands.size() == 4);
  for (const auto& c : cands) {
    CHECK(c.mask.data == gt.data);
    CHECK(c.confidence == 1.0);
  }
}

TEST_CASE("candidate synthesis is deterministic for a given rng state") {
  const Mask gt = block_mask(16, 16, 4, 4, 11, 11);
  Rng a(9), b(9);
  const auto ca = synth_candidates(gt, 6, 2.0, a);
  const auto cb = synth_candidates(gt, 6, 2.0, b);
  REQUIRE(ca.size() == cb.size());
  for (size_t i = 0; i < ca.size(); ++i) {
    CHECK(ca[i].mask.data == cb[i].mask.data);
    CHECK(ca[i].confidence == cb[i].confidence);
  }
}

TEST_CASE("confidences stay inside [0, 1] even at high noise") {
  const Mask gt = block_mask(16, 16, 5, 5, 10, 10);
  Rng rng(13);
  const auto cands = synth_candidates(gt, 40, 5.0, rng);
  for (const auto& c : cands) {
    CHECK(c.confidence >= 0.0);
    CHECK(c.confidence <= 1.0);
  }
}

TEST_CASE("candidate synthesis follows its documented draw order") {
  // Replays the advertised per-candidate sequence -- radius, direction, blob
  // count, per-blob (x, y, insert/delete, radius), confidence noise -- on a
  // cloned rng and must land on identical masks and confidences.
  const Mask gt = block_mask(12, 12, 3, 3, 7, 7);
  const double noise = 2.0;
  Rng actual_rng(4242);
  Rng replay(4242);
  const auto cands = synth_candidates(gt, 5, noise, actual_rng);
  REQUIRE(cands.size() == 5);

  for (const auto& cand : cands) {
    const int radius = static_cast<int>(std::llround(replay.uniform01() * noise));
    const bool grow = replay.uniform01() < 0.5;
    const int blobs = static_cast<int>(std::llround(replay.uniform01() * noise));
    Mask expect = grow ? dilate(gt, radius) : erode(gt, radius);
    for (int b = 0; b < blobs; ++b) {
      const int x = static_cast<int>(replay.uniform_int(static_cast<uint64_t>(gt.width)));
      const int y = static_cast<int>(replay.uniform_int(static_cast<uint64_t>(gt.height)));
      const bool insert = replay.uniform01() < 0.5;
      const int br = 1 + static_cast<int>(replay.uniform_int(2));
      oracle_paint_square(expect, x, y, br, insert ? 1 : 0);
    }
    const double conf_noise = replay.normal() * 0.05 * noise;
    const double conf = std::clamp(mask_iou(expect, gt) + conf_noise, 0.0, 1.0);
    CHECK(cand.mask.data == expect.data);
    CHECK(cand.confidence == conf);
  }
  CHECK(actual_rng.state() == replay.state());
}

TEST_CASE("candidate synthesis rejects bad arguments") {
  const Mask gt = block_mask(8, 8, 2, 2, 5, 5);
  Rng rng(1);
  CHECK_THROWS_AS(synth_candidates(gt, 0, 1.0, rng), Error);
  CHECK_THROWS_AS(synth_candidates(gt, 3, -0.5, rng), Error);
  CHECK_THROWS_AS(synth_candidates(Mask(8, 8), 3, 1.0, rng), Error);
}

// ---------------------------------------------------------------------------
// select_pseudo_mask
// ---------------------------------------------------------------------------

TEST_CASE("selection picks the candidate with the best confidence-weighted overlap") {
  // c0: 4x4 block; c1: same block shifted down one row (IoU 0.6 with c0);
  // c2: a 2x2 corner blob touching c0 in one pixel. Scores, by hand:
  //   s0 = 0.9*1 + 0.8*0.6 + 0.2*(1/19)
  //   s1 = 0.9*0.6 + 0.8*1 + 0.2*0
  //   s2 = 0.9*(1/19) + 0.8*0 + 0.2*1
  std::vector<MaskCandidate> cands;
  cands.push_back({block_mask(6, 6, 1, 1, 4, 4), 0.9});
  cands.push_back({block_mask(6, 6, 1, 2, 4, 5), 0.8});
  cands.push_back({block_mask(6, 6, 0, 0, 1, 1), 0.2});

  const PseudoMask sel = select_pseudo_mask(cands);
  CHECK(sel.source_index == 0);
  CHECK(sel.mask.data == cands[0].mask.data);
  CHECK(std::abs(sel.score - (0.9 + 0.8 * 0.6 + 0.2 / 19.0)) <= 1e-12);
  CHECK_FALSE(sel.empty_pair_seen);
}

TEST_CASE("selection ties break toward the lowest index") {
  SUBCASE("identical candidates") {
    const Mask m = block_mask(5, 5, 1, 1, 3, 3);
    const std::vector<MaskCandidate> cands{{m, 0.5}, {m, 0.5}, {m, 0.5}};
    CHECK(select_pseudo_mask(cands).source_index == 0);
  }
  SUBCASE("disjoint equal-mass candidates with equal confidence") {
    const std::vector<MaskCandidate> cands{{block_mask(8, 4, 0, 0, 1, 1), 0.5},
                                           {block_mask(8, 4, 5, 1, 6, 2), 0.5}};
    CHECK(select_pseudo_mask(cands).source_index == 0);
  }
}

TEST_CASE("selection flags sets containing an empty-empty pair") {
  const Mask blob = block_mask(6, 6, 2, 2, 4, 4);
  SUBCASE("two empties raise the flag even when a nonempty wins") {
    const std::vector<MaskCandidate> cands{{Mask(6, 6), 0.1}, {Mask(6, 6), 0.1}, {blob, 0.9}};
    const PseudoMask sel = select_pseudo_mask(cands);
    CHECK(sel.source_index == 2);
    CHECK(sel.empty_pair_seen);
  }
  SUBCASE("a single empty candidate does not") {
    const std::vector<MaskCandidate> cands{{Mask(6, 6), 0.3}, {blob, 0.4}};
    CHECK_FALSE(select_pseudo_mask(cands).empty_pair_seen);
  }
  SUBCASE("an empty winner is legal when backed by an empty-empty majority") {
    const std::vector<MaskCandidate> cands{{Mask(6, 6), 1.0}, {Mask(6, 6), 1.0}, {blob, 0.01}};
    const PseudoMask sel = select_pseudo_mask(cands);
    CHECK(sel.source_index == 0);
    CHECK(sel.mask.count() == 0);
    CHECK(sel.empty_pair_seen);
  }
}

TEST_CASE("selection rejects malformed candidate sets") {
  const Mask blob = block_mask(6, 6, 2, 2, 4, 4);
  CHECK_THROWS_AS(select_pseudo_mask({}), Error);
  CHECK_THROWS_AS(select_pseudo_mask({{Mask(6, 6), 0.5}, {Mask(6, 6), 0.9}}), Error);
  CHECK_THROWS_AS(select_pseudo_mask({{blob, -0.1}}), Error);
  CHECK_THROWS_AS(
      select_pseudo_mask({{blob, std::numeric_limits<double>::quiet_NaN()}}), Error);
  CHECK_THROWS_AS(select_pseudo_mask({{blob, 0.5}, {Mask(7, 6), 0.5}}), Error);
}

TEST_CASE("selection agrees with a brute-force double loop on 1000 random sets") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 1 + static_cast<int>(rng.uniform_int(6));
    std::vector<MaskCandidate> cands;
    bool any_nonempty = false;
    for (int i = 0; i < k; ++i) {
      Mask m(32, 32);
      if (rng.uniform01() > 0.15) {  // ~15% of candidates come up empty
        const double density = 0.05 + 0.5 * rng.uniform01();
        m = random_mask(32, 32, density, rng);
      }
      any_nonempty = any_nonempty || !m.empty_mask();
      cands.push_back({std::move(m), rng.uniform01()});
    }
    if (!any_nonempty) {
      CHECK_THROWS_AS(select_pseudo_mask(cands), Error);
      continue;
    }

    // Brute force: score every candidate against every candidate.
    int best = -1;
    double best_score = -1.0;
    bool empty_pair = false;
    for (int i = 0; i < k; ++i) {
      double s = 0.0;
      for (int j = 0; j < k; ++j) {
        const double v = (i == j) ? 1.0 : oracle_iou(cands[i].mask, cands[j].mask);
        if (i != j && cands[i].mask.empty_mask() && cands[j].mask.empty_mask()) empty_pair = true;
        s += cands[j].confidence * v;
      }
      if (s > best_score) {
        best_score = s;
        best = i;
      }
    }

    const PseudoMask sel = select_pseudo_mask(cands);
    CHECK(sel.source_index == best);
    CHECK(std::abs(sel.score - best_score) <= 1e-12);
    CHECK(sel.empty_pair_seen == empty_pair);
    CHECK(sel.mask.data == cands[static_cast<size_t>(best)].mask.data);
  }
}

// ---------------------------------------------------------------------------
// corrupt_view_masks
// ---------------------------------------------------------------------------

namespace {

std::vector<Mask> view_masks(int v) {
  // Distinct off-center blobs so any dilate/erode genuinely changes them.
  std::vector<Mask> masks;
  for (int i = 0; i < v; ++i) masks.push_back(block_mask(16, 16, 2 + i % 5, 3, 6 + i % 5, 8));
  return masks;
}

}  // namespace

TEST_CASE("fraction zero corrupts nothing and leaves the rng untouched") {
  auto masks = view_masks(6);
  const auto original = masks;
  Rng rng(8);
  const auto before = rng.state();
  const CorruptionReport rep = corrupt_view_masks(masks, 0.0, 2.0, rng);
  CHECK(rep.affected_views.empty());
  CHECK(rep.changed == 0);
  CHECK(rng.state() == before);
  for (size_t i = 0; i < masks.size(); ++i) CHECK(masks[i].data == original[i].data);
}

TEST_CASE("fraction one touches every view") {
  auto masks = view_masks(6);
  Rng rng(8);
  const CorruptionReport rep = corrupt_view_masks(masks, 1.0, 1.0, rng);
  CHECK(rep.affected_views == std::vector<int64_t>{0, 1, 2, 3, 4, 5});
  CHECK(rep.changed == 6);
}

TEST_CASE("the affected count rounds fraction * views to the nearest integer") {
  Rng rng(3);
  auto m4 = view_masks(4);
  CHECK(corrupt_view_masks(m4, 0.3, 1.0, rng).affected_views.size() == 1);  // round(1.2)
  auto m5 = view_masks(5);
  CHECK(corrupt_view_masks(m5, 0.3, 1.0, rng).affected_views.size() == 2);  // round(1.5)
  auto m20 = view_masks(20);
  CHECK(corrupt_view_masks(m20, 0.1, 1.0, rng).affected_views.size() == 2);  // round(2.0)
}

TEST_CASE("affected views are unique, ascending, and the only ones modified") {
  auto masks = view_masks(10);
  const auto original = masks;
  Rng rng(99);
  const CorruptionReport rep = corrupt_view_masks(masks, 0.5, 2.0, rng);
  REQUIRE(rep.affected_views.size() == 5);
  CHECK(std::is_sorted(rep.affected_views.begin(), rep.affected_views.end()));
  const std::set<int64_t> affected(rep.affected_views.begin(), rep.affected_views.end());
  CHECK(affected.size() == rep.affected_views.size());
  for (int64_t v = 0; v < 10; ++v) {
    const bool touched = masks[static_cast<size_t>(v)].data != original[static_cast<size_t>(v)].data;
    CHECK(touched == (affected.count(v) > 0));
  }
  CHECK(rep.changed == 5);
}

TEST_CASE("severity zero reports affected views but changes no pixels") {
  auto masks = view_masks(6);
  const auto original = masks;
  Rng rng(4);
  const CorruptionReport rep = corrupt_view_masks(masks, 0.5, 0.0, rng);
  CHECK(rep.affected_views.size() == 3);
  CHECK(rep.changed == 0);
  for (size_t i = 0; i < masks.size(); ++i) CHECK(masks[i].data == original[i].data);
}

TEST_CASE("direction fallback leaves two-way fixed points untouched") {
  // Full and empty masks are no-ops under both dilate and erode, so even after
  // the fallback to the other direction they must come through unchanged and
  // must not count toward `changed`.
  std::vector<Mask> masks{block_mask(16, 16, 3, 3, 9, 9), Mask(16, 16, 1), Mask(16, 16, 0),
                          block_mask(16, 16, 5, 5, 11, 11)};
  Rng rng(12);
  const CorruptionReport rep = corrupt_view_masks(masks, 1.0, 2.0, rng);
  CHECK(rep.affected_views == std::vector<int64_t>{0, 1, 2, 3});
  CHECK(rep.changed == 2);
  CHECK(masks[1].count() == masks[1].pixels());
  CHECK(masks[2].count() == 0);
}

TEST_CASE("corruption is deterministic for a given rng state") {
  auto a = view_masks(8);
  auto b = view_masks(8);
  Rng ra(55), rb(55);
  const CorruptionReport rep_a = corrupt_view_masks(a, 0.4, 2.0, ra);
  const CorruptionReport rep_b = corrupt_view_masks(b, 0.4, 2.0, rb);
  CHECK(rep_a.affected_views == rep_b.affected_views);
  CHECK(rep_a.changed == rep_b.changed);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].data == b[i].data);
}

TEST_CASE("corruption validates its arguments") {
  auto masks = view_masks(4);
  Rng rng(1);
  CHECK_THROWS_AS(corrupt_view_masks(masks, -0.1, 1.0, rng), Error);
  CHECK_THROWS_AS(corrupt_view_masks(masks, 1.5, 1.0, rng), Error);
  CHECK_THROWS_AS(corrupt_view_masks(masks, 0.5, -1.0, rng), Error);
}

// ---------------------------------------------------------------------------
// candidate manifests on disk
// ---------------------------------------------------------------------------

TEST_CASE("candidate sets survive a save/load round trip") {
  namespace fs = std::filesystem;
  const std::string dir = "/tmp/carf_supervision_test_roundtrip";
  fs::remove_all(dir);

  Rng rng(21);
  const Mask gt = block_mask(24, 20, 6, 5, 17, 14);
  const auto cands = synth_candidates(gt, 5, 1.5, rng);
  save_candidates(cands, dir);
  CHECK(fs::exists(fs::path(dir) / "manifest.json"));
  CHECK(fs::exists(fs::path(dir) / "cand_000.pgm"));

  const auto loaded = load_candidates((fs::path(dir) / "manifest.json").string());
  REQUIRE(loaded.size() == cands.size());
  for (size_t i = 0; i < cands.size(); ++i) {
    CHECK(loaded[i].mask.data == cands[i].mask.data);
    CHECK(loaded[i].confidence == cands[i].confidence);
  }

  // And selection over the loaded set matches selection over the originals.
  const PseudoMask a = select_pseudo_mask(cands);
  const PseudoMask b = select_pseudo_mask(loaded);
  CHECK(a.source_index == b.source_index);
  CHECK(a.score == b.score);
  fs::remove_all(dir);
}

TEST_CASE("candidate loading rejects malformed manifests") {
  namespace fs = std::filesystem;
  const std::string dir = "/tmp/carf_supervision_test_badmanifest";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto write = [&](const std::string& body) {
    std::ofstream((fs::path(dir) / "manifest.json").string()) << body;
  };

  CHECK_THROWS_AS(load_candidates((fs::path(dir) / "nope.json").string()), Error);

  write("{ not json");
  CHECK_THROWS_AS(load_candidates((fs::path(dir) / "manifest.json").string()), Error);

  write(R"({"candidates": []})");
  CHECK_THROWS_AS(load_candidates((fs::path(dir) / "manifest.json").string()), Error);

  save_mask_pgm(block_mask(8, 8, 1, 1, 4, 4), (fs::path(dir) / "m.pgm").string());
  write(R"({"candidates": [{"file": "m.pgm", "confidence": 1.5}]})");
  CHECK_THROWS_AS(load_candidates((fs::path(dir) / "manifest.json").string()), Error);

  write(R"({"candidates": [{"confidence": 0.5}]})");
  CHECK_THROWS_AS(load_candidates((fs::path(dir) / "manifest.json").string()), Error);

  save_mask_pgm(block_mask(9, 8, 1, 1, 4, 4), (fs::path(dir) / "wide.pgm").string());
  write(R"({"candidates": [{"file": "m.pgm", "confidence": 0.5},
                            {"file": "wide.pgm", "confidence": 0.5}]})");
  CHECK_THROWS_AS(load_candidates((fs::path(dir) / "manifest.json").string()), Error);
  fs::remove_all(dir);
}
