// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "mpq/optim.hpp"

using namespace mpq;

namespace {
Tensor param(double v, double g) {
  auto t = Tensor::scalar(v, true);
  t.ensure_grad()[0] = g;
  return t;
}
}  // namespace

TEST_CASE("plain step") {
  auto w = param(1.0, 1.0);
  Sgd sgd;
  sgd.add_group({w}, {0.1, 0.0, 0.0, std::nullopt});
  sgd.step();
  CHECK(w.item() == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("momentum recurrence over two steps") {
  auto w = param(1.0, 1.0);
  Sgd sgd;
  sgd.add_group({w}, {0.1, 0.9, 0.0, std::nullopt});
  sgd.step();
  w.ensure_grad()[0] = 1.0;
  sgd.step();
  CHECK(w.item() == doctest::Approx(0.71).epsilon(1e-14));
  CHECK(sgd.momentum_buffer(0, 0)[0] == doctest::Approx(1.9));
}

TEST_CASE("weight decay") {
  auto w = param(1.0, 0.0);
  Sgd sgd;
  sgd.add_group({w}, {0.1, 0.0, 0.01, std::nullopt});
  sgd.step();
  CHECK(w.item() == doctest::Approx(0.999).epsilon(1e-15));
}

TEST_CASE("missing gradient is an error and nothing moves") {
  auto a = param(1.0, 1.0);
  auto b = Tensor::scalar(2.0, true);
  Sgd sgd;
  sgd.add_group({a, b}, {0.1, 0.0, 0.0, std::nullopt});
  CHECK_THROWS_AS(sgd.step(), MissingGradientError);
  CHECK(a.item() == 1.0);
}

TEST_CASE("clamp keeps scales positive") {
  auto s = param(0.01, 10.0);
  Sgd sgd;
  sgd.add_group({s}, {0.1, 0.0, 0.0, 1e-6});
  sgd.step();
  CHECK(s.item() == 1e-6);
}

TEST_CASE("option validation") {
  Sgd sgd;
  CHECK_THROWS(sgd.add_group({param(1, 1)}, {0.0, 0.0, 0.0, std::nullopt}));
  CHECK_THROWS(sgd.add_group({param(1, 1)}, {0.1, 1.0, 0.0, std::nullopt}));
  CHECK_THROWS(sgd.add_group({param(1, 1)}, {0.1, 0.5, -1.0, std::nullopt}));
}

TEST_CASE("lr scale and grad scaling") {
  auto w = param(1.0, 2.0);
  Sgd sgd;
  sgd.add_group({w}, {0.1, 0.0, 0.0, std::nullopt});
  sgd.scale_grads(0.5);
  CHECK(w.grad()[0] == 1.0);
  sgd.step(0.5);
  CHECK(w.item() == doctest::Approx(0.95).epsilon(1e-15));
}
