#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "carf/adam.hpp"
#include "carf/common.hpp"
#include "carf/tensor.hpp"

using namespace carf;

TEST_CASE("first step moves by ~lr regardless of gradient magnitude") {
  // With bias correction, step 1 is lr * g / (|g| + eps'): essentially lr.
  ParamStore params;
  auto& x = params.add("x", Tensor({1}, {1.0}), ParamGroup::field);
  AdamConfig cfg;
  cfg.lr_field = 0.1;
  cfg.grad_clip = 0.0;  // disabled
  Adam opt(params, cfg);

  x.grad.data[0] = 2.5;
  const double norm = opt.step();
  CHECK(norm == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(x.value.data[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("learning-rate groups get their own rates") {
  ParamStore params;
  auto& f = params.add("f", Tensor({1}, {0.0}), ParamGroup::field);
  auto& c = params.add("c", Tensor({1}, {0.0}), ParamGroup::cam);
  AdamConfig cfg;
  cfg.lr_field = 0.2;
  cfg.lr_cam = 0.01;
  cfg.grad_clip = 0.0;
  Adam opt(params, cfg);
  f.grad.data[0] = 1.0;
  c.grad.data[0] = 1.0;
  opt.step();
  CHECK(f.value.data[0] == doctest::Approx(-0.2).epsilon(1e-6));
  CHECK(c.value.data[0] == doctest::Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("a quadratic bowl is minimized in 200 steps") {
  ParamStore params;
  auto& x = params.add("x", Tensor({1}, {1.0}), ParamGroup::field);
  AdamConfig cfg;
  cfg.lr_field = 0.05;
  Adam opt(params, cfg);
  for (int i = 0; i < 200; ++i) {
    params.zero_grad();
    x.grad.data[0] = 2.0 * x.value.data[0];  // d/dx of x^2
    opt.step();
  }
  CHECK(std::abs(x.value.data[0]) < 0.05);
}

TEST_CASE("global-norm clipping rescales gradients before the moments") {
  ParamStore params;
  auto& a = params.add("a", Tensor({1}, {0.0}), ParamGroup::field);
  auto& b = params.add("b", Tensor({1}, {0.0}), ParamGroup::field);
  AdamConfig cfg;
  cfg.grad_clip = 1.0;
  Adam opt(params, cfg);
  a.grad.data[0] = 3.0;
  b.grad.data[0] = 4.0;
  const double norm = opt.step();
  CHECK(norm == doctest::Approx(5.0).epsilon(1e-15));  // pre-clip norm reported
  // Post-clip gradients are (0.6, 0.8); first moments are (1-beta1) times that.
  CHECK(opt.first_moments()[0].data[0] == doctest::Approx(0.1 * 0.6).epsilon(1e-12));
  CHECK(opt.first_moments()[1].data[0] == doctest::Approx(0.1 * 0.8).epsilon(1e-12));
}

TEST_CASE("gradients under the clip threshold pass through untouched") {
  ParamStore params;
  auto& a = params.add("a", Tensor({1}, {0.0}), ParamGroup::field);
  AdamConfig cfg;
  cfg.grad_clip = 10.0;
  Adam opt(params, cfg);
  a.grad.data[0] = 0.5;
  opt.step();
  CHECK(opt.first_moments()[0].data[0] == doctest::Approx(0.1 * 0.5).epsilon(1e-12));
}

TEST_CASE("non-finite gradients abort, naming the parameter") {
  ParamStore params;
  auto& a = params.add("the_culprit", Tensor({1}, {0.0}), ParamGroup::field);
  Adam opt(params, AdamConfig{});
  a.grad.data[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    opt.step();
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numeric);
    CHECK(std::string(e.what()).find("the_culprit") != std::string::npos);
  }
}

TEST_CASE("non-trainable parameters stay frozen and out of the norm") {
  ParamStore params;
  auto& a = params.add("a", Tensor({1}, {1.0}), ParamGroup::field);
  auto& frozen = params.add("frozen", Tensor({1}, {1.0}), ParamGroup::field, false);
  Adam opt(params, AdamConfig{});
  a.grad.data[0] = 3.0;
  frozen.grad.data[0] = 4.0;
  const double norm = opt.step();
  CHECK(norm == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(frozen.value.data[0] == 1.0);
  CHECK(a.value.data[0] < 1.0);
}

TEST_CASE("step count continues from a restored value") {
  // The bias-correction factors depend on t; restoring t must reproduce the
  // same update a continuously trained optimizer would take.
  ParamStore p1, p2;
  auto& x1 = p1.add("x", Tensor({1}, {1.0}), ParamGroup::field);
  auto& x2 = p2.add("x", Tensor({1}, {1.0}), ParamGroup::field);
  Adam o1(p1, AdamConfig{});
  Adam o2(p2, AdamConfig{});

  for (int i = 0; i < 3; ++i) {
    x1.grad.data[0] = 1.0 + i;
    o1.step();
  }
  // Clone state into the second optimizer mid-run.
  o2.first_moments() = o1.first_moments();
  o2.second_moments() = o1.second_moments();
  o2.set_step_count(o1.step_count());
  x2.value = x1.value;

  x1.grad.data[0] = 0.5;
  x2.grad.data[0] = 0.5;
  o1.step();
  o2.step();
  CHECK(x1.value.data[0] == x2.value.data[0]);
}
