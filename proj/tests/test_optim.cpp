#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mogo/optim.hpp"
#include "mogo/tensor.hpp"

using namespace mogo;

TEST_CASE("adamw takes a descent step on x^2") {
  Tensor x = Tensor::of({1}, {1.0f}, true);
  std::vector<Tensor> params = {x};
  AdamW opt;
  opt.lr = 0.1f;
  opt.weight_decay = 0.0f;
  sum(mul(x, x)).backward();
  opt.step(params);
  CHECK(x.values()[0] < 1.0f);
  CHECK(opt.step_count == 1);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  Tensor x = Tensor::of({2}, {0.5f, -0.25f}, true);
  std::vector<Tensor> params = {x};
  AdamW opt;
  opt.lr = 0.0f;
  opt.weight_decay = 0.0f;
  sum(mul(x, x)).backward();
  opt.step(params);
  CHECK(x.values()[0] == 0.5f);
  CHECK(x.values()[1] == -0.25f);
}

TEST_CASE("adamw converges to the minimum of a 2-d quadratic") {
  // f(x, y) = (x - 0.3)^2 + 2 (y + 0.6)^2, minimum at (0.3, -0.6)
  Tensor p = Tensor::of({2}, {1.0f, 1.0f}, true);
  std::vector<Tensor> params = {p};
  AdamW opt;
  opt.lr = 0.05f;
  opt.weight_decay = 0.0f;
  Tensor target = Tensor::of({2}, {0.3f, -0.6f});
  Tensor scale = Tensor::of({2}, {1.0f, 2.0f});
  for (int step = 0; step < 200; ++step) {
    Tensor d = sub(p, target);
    Tensor loss = sum(mul(scale, mul(d, d)));
    p.zero_grad();
    loss.backward();
    opt.step(params);
  }
  CHECK(std::fabs(p.values()[0] - 0.3f) < 1e-3);
  CHECK(std::fabs(p.values()[1] + 0.6f) < 1e-3);
}

TEST_CASE("adamw requires gradients") {
  Tensor x = Tensor::of({1}, {1.0f}, false);
  std::vector<Tensor> params = {x};
  AdamW opt;
  CHECK_THROWS(opt.step(params));
}

TEST_CASE("decoupled weight decay shrinks parameters with zero gradient") {
  Tensor x = Tensor::of({1}, {1.0f}, true);
  std::vector<Tensor> params = {x};
  AdamW opt;
  opt.lr = 0.1f;
  opt.weight_decay = 0.5f;
  x.zero_grad();
  opt.step(params);  // grad 0: the only movement comes from decay
  CHECK(x.values()[0] == doctest::Approx(1.0f - 0.1f * 0.5f).epsilon(1e-6));
}

TEST_CASE("cosine schedule endpoints and midpoint") {
  CosineSchedule s{2.5e-5f, 3e-6f, 1000};
  CHECK(cosine_lr(s, 0) == doctest::Approx(2.5e-5).epsilon(1e-6));
  CHECK(cosine_lr(s, 1000) == doctest::Approx(3e-6).epsilon(1e-6));
  CHECK(cosine_lr(s, 500) == doctest::Approx(0.5 * (2.5e-5 + 3e-6)).epsilon(1e-6));
}

TEST_CASE("cosine schedule clamps out-of-range steps to the endpoints") {
  CosineSchedule s{1e-3f, 1e-5f, 100};
  CHECK(cosine_lr(s, -5) == doctest::Approx(1e-3).epsilon(1e-6));
  CHECK(cosine_lr(s, 400) == doctest::Approx(1e-5).epsilon(1e-6));
}

TEST_CASE("gradient clipping caps the global norm") {
  Tensor a = Tensor::of({2}, {3.0f, 4.0f}, true);  // grad norm will be 5
  std::vector<Tensor> params = {a};
  a.grad()[0] = 3.0f;
  a.grad()[1] = 4.0f;
  const float before = clip_grad_norm(params, 1.0f);
  CHECK(before == doctest::Approx(5.0f));
  const float after = std::hypot(a.grad()[0], a.grad()[1]);
  CHECK(after == doctest::Approx(1.0f).epsilon(1e-5));
}
