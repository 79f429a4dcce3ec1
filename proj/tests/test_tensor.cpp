#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "mhflid/ops.hpp"
#include "mhflid/optim.hpp"
#include "mhflid/tensor.hpp"

using namespace mhflid;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor random_tensor(Shape s, std::mt19937_64& rng, bool rg = false) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<real> v(shape_numel(s));
  for (auto& x : v) x = static_cast<real>(d(rng));
  return Tensor(std::move(s), std::move(v), rg);
}

}  // namespace

TEST_CASE("tensor basics") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.dim(1) == 3);
  CHECK_FALSE(t.has_grad());
  Tensor d = t.detach();
  d.mutable_data()[0] = 9;
  CHECK(t.data()[0] == 1);
}

TEST_CASE("matmul") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor eye({2, 2}, {1, 0, 0, 1});
  CHECK(values(ops::matmul(a, eye)) == std::vector<double>{1, 2, 3, 4});
  CHECK(values(ops::matmul(eye, Tensor({2, 1}, {5, 7}))) == std::vector<double>{5, 7});
  CHECK_THROWS_AS(ops::matmul(a, Tensor({3, 1}, {1, 2, 3})), DimensionError);
}

TEST_CASE("conv2d examples") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1), w = Tensor::full({1, 1, 2, 2}, 1);
  CHECK(values(ops::conv2d(x, w, Tensor())) == std::vector<double>(4, 4.0));
  std::mt19937_64 rng(3);
  Tensor r = random_tensor({2, 3, 5, 4}, rng);
  Tensor id = Tensor::zeros({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) id.mutable_data()[c * 3 + c] = 1;
  CHECK(values(ops::conv2d(r, id, Tensor())) == values(r));
  CHECK_THROWS_AS(ops::conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), Tensor()), DimensionError);
}

TEST_CASE("maxpool examples") {
  CHECK(values(ops::maxpool2d(Tensor::full({1, 2, 4, 4}, 2.5), 2, 2)) == std::vector<double>(8, 2.5));
  CHECK(ops::maxpool2d(Tensor({1, 1, 2, 2}, {1, 2, 3, 0}), 2, 2).item() == 3);
  std::mt19937_64 rng(4);
  Tensor r = random_tensor({1, 2, 3, 3}, rng);
  CHECK(values(ops::maxpool2d(r, 1, 1)) == values(r));
}

TEST_CASE("maxpool tie routes gradient to first index") {
  Tensor x({1, 1, 2, 2}, {5, 5, 5, 5}, true);
  ops::sum(ops::maxpool2d(x, 2, 2)).backward();
  CHECK(values(Tensor({4}, std::vector<real>(x.grad().begin(), x.grad().end()))) == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("conv_transpose2d examples") {
  const real v = 1.75;
  Tensor y = ops::conv_transpose2d(Tensor::full({1, 1, 1, 1}, v), Tensor::full({1, 1, 2, 2}, 1), Tensor(), {2, 0});
  CHECK(values(y) == std::vector<double>(4, v));
  Tensor z = ops::conv_transpose2d(Tensor::zeros({2, 3, 5, 6}), Tensor::zeros({3, 4, 2, 2}), Tensor(), {2, 0});
  CHECK(z.shape() == Shape{2, 4, 10, 12});
}

TEST_CASE("relu") {
  Tensor x({3}, {-1, 0, 2}, true);
  Tensor y = ops::relu(x);
  CHECK(values(y) == std::vector<double>{0, 0, 2});
  CHECK(values(ops::relu(y)) == values(y));
  ops::sum(y).backward();
  CHECK(x.grad()[0] == 0);
  CHECK(x.grad()[2] == 1);
}

TEST_CASE("softmax") {
  CHECK(values(ops::softmax(Tensor({1, 2}, {0, 0}))) == std::vector<double>{0.5, 0.5});
  Tensor a({1, 3}, {1, 2, 3});
  const auto p = values(ops::softmax(a));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(p[static_cast<std::size_t>(i)] == doctest::Approx(std::exp(i + 1.0) / z).epsilon(1e-7));
  const auto shifted = values(ops::softmax(Tensor({1, 3}, {11, 12, 13})));
  for (int i = 0; i < 3; ++i) CHECK(shifted[static_cast<std::size_t>(i)] == doctest::Approx(p[static_cast<std::size_t>(i)]).epsilon(1e-6));

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({4, 7}, rng);
    for (auto& v : x.mutable_data()) v *= 10;
    const auto s = values(ops::softmax(x));
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(s[r * 7 + c] > 0.0);
        CHECK(s[r * 7 + c] < 1.0);
        sum += s[r * 7 + c];
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("linear") {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor eye = Tensor::zeros({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.mutable_data()[i * 5] = 1;
  CHECK(values(ops::linear(x, eye, Tensor::zeros({4}))) == values(x));
  Tensor b({2}, {0.5, -1.5});
  CHECK(values(ops::linear(x, Tensor::zeros({2, 4}), b)) == std::vector<double>{0.5, -1.5, 0.5, -1.5, 0.5, -1.5});
  Tensor w = random_tensor({2, 4}, rng);
  const auto y = values(ops::linear(x, w, b));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = b.data()[j];
      for (std::size_t k = 0; k < 4; ++k) acc += double(x.data()[i * 4 + k]) * w.data()[j * 4 + k];
      CHECK(y[i * 2 + j] == doctest::Approx(acc).epsilon(1e-6));
    }
  }
}

TEST_CASE("batchnorm1d") {
  auto state = ops::BatchNormState{Tensor::zeros({3}), Tensor::full({3}, 1)};
  Tensor gamma = Tensor::full({3}, 1), beta = Tensor::zeros({3});
  Tensor flat = ops::batchnorm1d(Tensor::full({4, 3}, 2.0), gamma, beta, state, true);
  for (auto v : flat.data()) CHECK(v == 0);

  std::mt19937_64 rng(7);
  Tensor x = random_tensor({6, 3}, rng);
  Tensor beta2({3}, {0.3, -0.2, 1.0});
  const auto y = values(ops::batchnorm1d(x, gamma, beta2, state, true));
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0;
    for (std::size_t i = 0; i < 6; ++i) m += y[i * 3 + c];
    CHECK(std::abs(m / 6 - beta2.data()[c]) < 1e-5);
  }

  // Eval mode: hand formula on stored statistics.
  auto st = ops::BatchNormState{Tensor({3}, {0.1, -0.4, 2.0}), Tensor({3}, {0.5, 2.0, 1.5})};
  Tensor g({3}, {1.5, 0.5, -1.0}), b({3}, {0.0, 1.0, 0.25});
  const auto e = values(ops::batchnorm1d(x, g, b, st, false));
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double want = g.data()[c] * (x.data()[i * 3 + c] - st.running_mean.data()[c]) /
                              std::sqrt(double(st.running_var.data()[c]) + 1e-5) +
                          b.data()[c];
      CHECK(e[i * 3 + c] == doctest::Approx(want).epsilon(1e-6));
    }
  }
}

TEST_CASE("batchnorm running statistics use momentum 0.1") {
  auto state = ops::BatchNormState{Tensor::zeros({1}), Tensor::full({1}, 1)};
  Tensor x({4, 1}, {1, 2, 3, 4});
  ops::batchnorm1d(x, Tensor::full({1}, 1), Tensor::zeros({1}), state, true);
  CHECK(state.running_mean.item() == doctest::Approx(0.25));
  // unbiased variance of {1,2,3,4} is 5/3
  CHECK(state.running_var.item() == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0));
}

TEST_CASE("backward examples") {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({3, 4}, rng, true);
  ops::sum(ops::softmax(x)).backward();
  for (auto g : x.grad()) CHECK(std::abs(g) < 1e-6);

  Tensor y = random_tensor({5}, rng, true);
  ops::sum(ops::square(y)).backward();
  for (std::size_t i = 0; i < 5; ++i) CHECK(y.grad()[i] == doctest::Approx(2 * y.data()[i]));

  CHECK_THROWS_AS(ops::square(y).backward(), DimensionError);
}

TEST_CASE("frozen parameters receive no gradient") {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({2, 3}, rng);
  Tensor w = random_tensor({4, 3}, rng, true), frozen = random_tensor({2, 4}, rng, false);
  ops::sum(ops::linear(ops::linear(x, w, Tensor()), frozen, Tensor())).backward();
  CHECK(w.has_grad());
  CHECK_FALSE(frozen.has_grad());
}

TEST_CASE("grad mode guard") {
  Tensor w({1}, {2}, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(ops::square(w).requires_grad());
  }
  CHECK(ops::square(w).requires_grad());
}

TEST_CASE("graph visits shared nodes once") {
  Tensor x({1}, {3}, true);
  Tensor y = ops::mul(x, x);
  ops::sum(ops::add(y, y)).backward();  // d/dx 2x^2 = 4x
  CHECK(x.grad()[0] == doctest::Approx(12));
}

TEST_CASE("adam") {
  Tensor p({1}, {0.5}, true);
  Optimizer opt({p}, {OptimizerKind::Adam, 1e-3});
  p.mutable_grad()[0] = 0;
  opt.step();
  CHECK(p.item() == 0.5f);

  Tensor q({1}, {0.5}, true);
  Optimizer o2({q}, {OptimizerKind::Adam, 1e-3});
  q.mutable_grad()[0] = 1;
  o2.step();
  // m_hat = 1, v_hat = 1 -> step = lr * 1 / (1 + eps)
  CHECK(q.item() == doctest::Approx(0.5 - 1e-3).epsilon(1e-6));

  Tensor a({3}, {0.1, 0.2, 0.3}, true), b({3}, {0.1, 0.2, 0.3}, true);
  Optimizer o3({a, b}, {OptimizerKind::Adam, 1e-2});
  for (int s = 0; s < 5; ++s) {
    for (std::size_t i = 0; i < 3; ++i) a.mutable_grad()[i] = b.mutable_grad()[i] = static_cast<real>(0.3 * (i + 1) - s * 0.1);
    o3.step();
  }
  CHECK(values(a) == values(b));
}

TEST_CASE("sgd") {
  Tensor p({2}, {1, 2}, true);
  Optimizer opt({p}, {OptimizerKind::Sgd, 0.5});
  p.mutable_grad()[0] = 2;
  p.mutable_grad()[1] = -2;
  opt.step();
  CHECK(values(p) == std::vector<double>{0, 3});
}
