#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "carf/common.hpp"
#include "carf/gradcheck.hpp"
#include "carf/image.hpp"
#include "carf/losses.hpp"
#include "carf/rng.hpp"
#include "carf/tape.hpp"

using namespace carf;

namespace {

Mask checkerboard(int w, int h) {
  Mask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(x, y) = static_cast<uint8_t>((x + y) % 2);
  return m;
}

}  // namespace

TEST_CASE("bce of a coin-flip prediction is ln 2") {
  const int w = 8, h = 8;
  Tape tape;
  const auto prob = tape.constant(Tensor({w * h}, std::vector<double>(w * h, 0.5)));
  const auto loss = bce_node(tape, prob, checkerboard(w, h));
  CHECK(tape.scalar(loss) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("bce of a perfect prediction is pinned by the probability clamp") {
  const int w = 4, h = 4;
  const Mask target = checkerboard(w, h);
  Tensor p({w * h});
  for (int i = 0; i < w * h; ++i) p.data[static_cast<size_t>(i)] = target.data[static_cast<size_t>(i)] ? 1.0 : 0.0;
  Tape tape;
  const auto loss = bce_node(tape, tape.constant(std::move(p)), target);
  CHECK(tape.scalar(loss) <= 1.1e-7);
  CHECK(tape.scalar(loss) >= 0.0);
}

TEST_CASE("bce sum reduction is pixels times the mean reduction") {
  const int w = 6, h = 4;
  Rng rng(5);
  Tensor p({w * h});
  for (double& v : p.data) v = rng.uniform(0.05, 0.95);
  const Mask target = checkerboard(w, h);
  Tape t1, t2;
  const double mean = t1.scalar(bce_node(t1, t1.constant(p), target, BceReduction::mean));
  const double sum = t2.scalar(bce_node(t2, t2.constant(p), target, BceReduction::sum));
  CHECK(sum == doctest::Approx(mean * (w * h)).epsilon(1e-12));
}

TEST_CASE("bce matches the textbook formula on random inputs") {
  Rng rng(7);
  const int n = 32;
  Tensor p({n});
  Mask target(8, 4);
  for (int i = 0; i < n; ++i) {
    p.data[static_cast<size_t>(i)] = rng.uniform(0.01, 0.99);
    target.data[static_cast<size_t>(i)] = rng.uniform01() < 0.5 ? 0 : 1;
  }
  double expect = 0.0;
  for (int i = 0; i < n; ++i) {
    const double ph = p.data[static_cast<size_t>(i)];
    expect -= target.data[static_cast<size_t>(i)] ? std::log(ph) : std::log(1.0 - ph);
  }
  expect /= n;
  Tape tape;
  CHECK(tape.scalar(bce_node(tape, tape.constant(p), target)) ==
        doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("bce gradient passes central differences") {
  Rng rng(11);
  const int n = 64;  // an 8x8 map
  ParamStore params;
  Tensor p0({n});
  for (double& v : p0.data) v = rng.uniform(0.1, 0.9);
  auto& p = params.add("p", std::move(p0), ParamGroup::field);
  Mask target(8, 8);
  for (auto& v : target.data) v = rng.uniform01() < 0.5 ? 0 : 1;

  auto loss_fn = [&](bool with_grad) {
    Tape tape;
    const auto node = bce_node(tape, tape.param(p), target);
    if (with_grad) {
      params.zero_grad();
      tape.backward(node);
    }
    return tape.scalar(node);
  };
  const GradCheckReport rep = gradcheck(params, loss_fn, 1e-6, 1e-6);
  CHECK(rep.pass);
}

TEST_CASE("bce clamp flattens the gradient outside its range") {
  ParamStore params;
  auto& p = params.add("p", Tensor({2}, {1e-9, 0.5}), ParamGroup::field);
  Mask target(2, 1);
  target.data = {0, 1};
  Tape tape;
  const auto node = bce_node(tape, tape.param(p), target);
  params.zero_grad();
  tape.backward(node);
  CHECK(p.grad.data[0] == 0.0);  // clamped pixel contributes no gradient
  CHECK(p.grad.data[1] != 0.0);
}

TEST_CASE("bce rejects mismatched sizes") {
  Tape tape;
  const auto prob = tape.constant(Tensor({4}, {0.5, 0.5, 0.5, 0.5}));
  CHECK_THROWS_AS(bce_node(tape, prob, Mask(3, 1)), Error);
}

TEST_CASE("two-view blend: weight one drops the second branch entirely") {
  ParamStore params;
  auto& a = params.add("a", Tensor({}, {0.6}), ParamGroup::field);
  auto& b = params.add("b", Tensor({}, {0.9}), ParamGroup::field);
  Tape tape;
  const auto na = tape.param(a);
  const auto nb = tape.param(b);
  const auto blend = two_view_node(tape, na, nb, 1.0);
  CHECK(tape.scalar(blend) == 0.6);
  params.zero_grad();
  tape.backward(blend);
  CHECK(a.grad.data[0] == 1.0);
  CHECK(b.grad.data[0] == 0.0);
  CHECK_FALSE(tape.live(nb));
}

TEST_CASE("two-view blend averages and stays symmetric") {
  Tape tape;
  const auto la = tape.constant(Tensor({}, {2.0}));
  const auto lb = tape.constant(Tensor({}, {4.0}));
  CHECK(tape.scalar(two_view_node(tape, la, lb, 0.5)) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(tape.scalar(two_view_node(tape, la, lb, 0.25)) ==
        doctest::Approx(tape.scalar(two_view_node(tape, lb, la, 0.75))).epsilon(1e-15));
  CHECK_THROWS_AS(two_view_node(tape, la, lb, 1.5), Error);
}

TEST_CASE("multi-view blend is the uniform average") {
  Tape tape;
  const auto l1 = tape.constant(Tensor({}, {1.0}));
  const auto l2 = tape.constant(Tensor({}, {2.0}));
  const auto l3 = tape.constant(Tensor({}, {6.0}));
  CHECK(tape.scalar(multi_view_node(tape, {l1, l2, l3})) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK_THROWS_AS(multi_view_node(tape, {}), Error);
}

TEST_CASE("contrastive batches normalize sentences and validate the target") {
  Tensor s1({2}, {3.0, 4.0});
  Tensor s2({2}, {1.0, 0.0});
  const ContrastiveBatch batch = ContrastiveBatch::make({s1, s2}, 1);
  CHECK(batch.sentences[0].data[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(batch.sentences[0].data[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(batch.target == 1);
  CHECK_THROWS_AS(ContrastiveBatch::make({s1}, 5), Error);
  CHECK_THROWS_AS(ContrastiveBatch::make({}, 0), Error);
  CHECK_THROWS_AS(ContrastiveBatch::make({Tensor({2}, {0.0, 0.0})}, 0), Error);
}

TEST_CASE("single-sentence contrastive falls back to one minus cosine") {
  // Features chosen so the pooled row is exactly the target direction.
  Tensor f({2, 3}, {2.0, 0.0, 0.0, 4.0, 0.0, 0.0});
  const ContrastiveBatch batch = ContrastiveBatch::make({Tensor({3}, {1.0, 0.0, 0.0})}, 0);
  Tape tape;
  const auto features = tape.constant(f);
  const auto loss = contrastive_node(tape, features, {0, 1}, batch, 0.07);
  CHECK(tape.scalar(loss) == doctest::Approx(0.0).epsilon(1e-12));

  // Orthogonal pooled feature: cosine 0, loss 1.
  Tape tape2;
  const auto f2 = tape2.constant(Tensor({1, 3}, {0.0, 5.0, 0.0}));
  const auto loss2 = contrastive_node(tape2, f2, {0}, batch, 0.07);
  CHECK(tape2.scalar(loss2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("two-sentence contrastive reproduces the softmax fixture") {
  // Pooled feature equals the positive sentence; the negative is orthogonal.
  // With temperature 1 the logits are (1, 0): loss = -log(e / (e + 1)).
  const ContrastiveBatch batch = ContrastiveBatch::make(
      {Tensor({2}, {1.0, 0.0}), Tensor({2}, {0.0, 1.0})}, 0);
  Tape tape;
  const auto features = tape.constant(Tensor({1, 2}, {3.0, 0.0}));
  const auto loss = contrastive_node(tape, features, {0}, batch, 1.0);
  const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(tape.scalar(loss) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(tape.scalar(loss) == doctest::Approx(0.31326168751822286).epsilon(1e-12));
}

TEST_CASE("temperature sharpens the contrastive logits") {
  const ContrastiveBatch batch = ContrastiveBatch::make(
      {Tensor({2}, {1.0, 0.0}), Tensor({2}, {0.0, 1.0})}, 0);
  auto loss_at = [&](double t_con) {
    Tape tape;
    const auto features = tape.constant(Tensor({1, 2}, {1.0, 0.0}));
    return tape.scalar(contrastive_node(tape, features, {0}, batch, t_con));
  };
  CHECK(loss_at(0.07) < loss_at(1.0));  // colder temperature, more confident
}

TEST_CASE("contrastive gradients pass central differences") {
  Rng rng(13);
  ParamStore params;
  Tensor f0({6, 4});
  for (double& v : f0.data) v = rng.uniform(-1.0, 1.0);
  auto& f = params.add("f", std::move(f0), ParamGroup::field);

  std::vector<Tensor> sentences;
  for (int s = 0; s < 3; ++s) {
    Tensor t({4});
    for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
    sentences.push_back(std::move(t));
  }
  const ContrastiveBatch batch = ContrastiveBatch::make(std::move(sentences), 1);
  const std::vector<int64_t> selected = {0, 2, 5};

  auto loss_fn = [&](bool with_grad) {
    Tape tape;
    const auto node = contrastive_node(tape, tape.param(f), selected, batch, 0.07);
    if (with_grad) {
      params.zero_grad();
      tape.backward(node);
    }
    return tape.scalar(node);
  };
  const GradCheckReport rep = gradcheck(params, loss_fn, 1e-6, 1e-5);
  CHECK(rep.pass);

  // Only the selected rows can carry gradient.
  params.zero_grad();
  loss_fn(true);
  for (int64_t r = 0; r < 6; ++r) {
    double rownorm = 0.0;
    for (int64_t c = 0; c < 4; ++c) rownorm += std::abs(f.grad.at(r, c));
    const bool in_selection = r == 0 || r == 2 || r == 5;
    if (in_selection)
      CHECK(rownorm > 0.0);
    else
      CHECK(rownorm == 0.0);
  }
}

TEST_CASE("contrastive validates selection, temperature, and widths") {
  const ContrastiveBatch batch = ContrastiveBatch::make({Tensor({3}, {1.0, 0.0, 0.0})}, 0);
  Tape tape;
  const auto f = tape.constant(Tensor({2, 3}, {1.0, 0.0, 0.0, 0.0, 1.0, 0.0}));
  CHECK_THROWS_AS(contrastive_node(tape, f, {}, batch, 0.07), Error);
  CHECK_THROWS_AS(contrastive_node(tape, f, {0}, batch, 0.0), Error);
  const ContrastiveBatch wrong = ContrastiveBatch::make({Tensor({2}, {1.0, 0.0})}, 0);
  CHECK_THROWS_AS(contrastive_node(tape, f, {0}, wrong, 0.07), Error);
}

TEST_CASE("total loss combines the two terms with their weights") {
  Tape tape;
  const auto lv = tape.constant(Tensor({}, {1.0}));
  const auto lc = tape.constant(Tensor({}, {1.0}));
  CHECK(tape.scalar(total_node(tape, lv, lc, 2.0, 3.0)) == 5.0);

  const auto lv2 = tape.constant(Tensor({}, {0.25}));
  const auto lc2 = tape.constant(Tensor({}, {0.5}));
  CHECK(tape.scalar(total_node(tape, lv2, lc2, 1.0, 1.0)) ==
        doctest::Approx(0.75).epsilon(1e-15));
  CHECK_THROWS_AS(total_node(tape, lv, lc, -1.0, 1.0), Error);
}

TEST_CASE("a zero contrastive weight silences that branch's gradient") {
  ParamStore params;
  auto& x = params.add("x", Tensor({}, {0.3}), ParamGroup::field);
  Tape tape;
  const auto nx = tape.param(x);
  const auto lv = tape.scale(nx, 2.0);
  const auto lc = tape.scale(nx, 10.0);
  const auto total = total_node(tape, lv, lc, 1.0, 0.0);
  params.zero_grad();
  tape.backward(total);
  CHECK(x.grad.data[0] == 2.0);  // only the view term flows back
}

TEST_CASE("pack_scalars gathers values and scatters gradients") {
  ParamStore params;
  auto& a = params.add("a", Tensor({}, {1.0}), ParamGroup::field);
  auto& b = params.add("b", Tensor({}, {2.0}), ParamGroup::field);
  Tape tape;
  const auto na = tape.param(a);
  const auto nb = tape.param(b);
  const auto packed = pack_scalars(tape, {na, nb});
  const Tensor& v = tape.value(packed);
  REQUIRE(v.shape == std::vector<int64_t>{2});
  CHECK(v.data[0] == 1.0);
  CHECK(v.data[1] == 2.0);

  const auto weights = tape.constant(Tensor({2}, {3.0, 5.0}));
  const auto loss = tape.dot(packed, weights);
  params.zero_grad();
  tape.backward(loss);
  CHECK(a.grad.data[0] == 3.0);
  CHECK(b.grad.data[0] == 5.0);
}
