#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "mhflid/losses.hpp"
#include "mhflid/metrics.hpp"

using namespace mhflid;

namespace {

std::mt19937_64 rng(21);

Tensor random_tensor(Shape s, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<real> v(shape_numel(s));
  for (auto& x : v) x = static_cast<real>(d(rng));
  return Tensor(std::move(s), std::move(v));
}

std::vector<int> random_labels(std::size_t n, int classes) {
  std::uniform_int_distribution<int> d(0, classes - 1);
  std::vector<int> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

std::vector<double> softmax_row(const Tensor& t, std::size_t row, std::size_t c) {
  std::vector<double> p(c);
  double mx = -1e300, z = 0;
  for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, double(t.data()[row * c + j]));
  for (std::size_t j = 0; j < c; ++j) z += (p[j] = std::exp(t.data()[row * c + j] - mx));
  for (auto& x : p) x /= z;
  return p;
}

// One-hot probabilities [N x C x H x W] of a hard mask.
Tensor one_hot(const std::vector<int>& mask, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  Tensor t = Tensor::zeros({n, c, h, w});
  auto d = t.mutable_data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < h * w; ++i) d[(s * c + std::size_t(mask[s * h * w + i])) * h * w + i] = 1;
  return t;
}

}  // namespace

TEST_CASE("cross entropy of uniform logits is ln C") {
  Tensor logits = Tensor::zeros({5, 4});
  std::vector<int> labels{0, 1, 2, 3, 1};
  CHECK(std::abs(ops::cross_entropy(logits, labels).item() - std::log(4.0)) < 1e-6);
}

TEST_CASE("cross entropy with a huge aligned logit is near zero") {
  Tensor logits({2, 3}, {50, 0, 0, 0, 0, 50});
  std::vector<int> labels{0, 2};
  CHECK(ops::cross_entropy(logits, labels).item() < 1e-6);
}

TEST_CASE("cross entropy matches the direct formula") {
  Tensor logits = random_tensor({7, 5}, 2.0);
  auto labels = random_labels(7, 5);
  double want = 0;
  for (std::size_t i = 0; i < 7; ++i) want -= std::log(softmax_row(logits, i, 5)[std::size_t(labels[i])]) / 7.0;
  CHECK(ops::cross_entropy(logits, labels).item() == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("kl of identical logits is zero") {
  Tensor x = random_tensor({6, 4}, 3.0);
  CHECK(std::abs(ops::kl_loss(x, x.detach()).item()) < 1e-6);
  CHECK(std::abs(ops::kl_loss(x, x.detach(), ops::KlVariant::Appendix).item()) < 1e-6);
  Tensor seg = random_tensor({2, 3, 4, 4});
  CHECK(std::abs(ops::kl_loss(seg, seg.detach()).item()) < 1e-6);
}

TEST_CASE("kl is non-negative on random pairs") {
  for (int t = 0; t < 50; ++t) {
    Tensor a = random_tensor({3, 6}, 2.0), b = random_tensor({3, 6}, 2.0);
    CHECK(ops::kl_loss(a, b).item() >= -1e-7);
  }
}

TEST_CASE("kl hand value") {
  // Teacher p = (0.5, 0.5), student q = (0.9, 0.1).
  Tensor student({1, 2}, {real(std::log(0.9)), real(std::log(0.1))});
  Tensor teacher({1, 2}, {0, 0});
  const double want = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
  CHECK(want == doctest::Approx(0.5108256).epsilon(1e-6));
  CHECK(ops::kl_loss(student, teacher).item() == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("kl matches the direct formula per pixel") {
  Tensor s = random_tensor({2, 3, 2, 2}), t = random_tensor({2, 3, 2, 2});
  double want = 0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t px = 0; px < 4; ++px) {
      double zs = 0, zt = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        zs += std::exp(s.data()[(n * 3 + c) * 4 + px]);
        zt += std::exp(t.data()[(n * 3 + c) * 4 + px]);
      }
      for (std::size_t c = 0; c < 3; ++c) {
        const double p = std::exp(t.data()[(n * 3 + c) * 4 + px]) / zt, q = std::exp(s.data()[(n * 3 + c) * 4 + px]) / zs;
        want += p * std::log(p / q) / 8.0;
      }
    }
  CHECK(ops::kl_loss(s, t).item() == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("dice coefficient hand cases") {
  std::vector<int> pred{1, 1, 1, 1, 0, 0}, truth{1, 1, 0, 0, 0, 0};
  CHECK(metrics::dice_coefficient(pred, truth) == doctest::Approx(2.0 * 2 / (4 + 2)));
  CHECK(metrics::dice_coefficient(truth, truth) == 1.0);
  std::vector<int> other{0, 0, 1, 1, 0, 0};
  CHECK(metrics::dice_coefficient(truth, other) == 0.0);
}

TEST_CASE("dice loss is one minus dice on hard masks") {
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 3, h = 5, w = 6;
    auto truth = random_labels(n * h * w, 2), pred = random_labels(n * h * w, 2);
    if (t == 0) pred = truth;
    const double loss = ops::dice_loss(one_hot(pred, n, 2, h, w), truth).item();
    CHECK(std::abs(loss - (1.0 - metrics::mean_dice(pred, truth, n, 2))) < 1e-5);
  }
}

TEST_CASE("dice loss matches the soft formula") {
  Tensor probs = ops::softmax(random_tensor({2, 3, 3, 3}), 1);
  auto labels = random_labels(2 * 9, 3);
  double want = 0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 1; c < 3; ++c) {
      double inter = 0, ps = 0, ts = 0;
      for (std::size_t i = 0; i < 9; ++i) {
        const double p = probs.data()[(n * 3 + c) * 9 + i], tv = labels[n * 9 + i] == int(c);
        inter += p * tv, ps += p, ts += tv;
      }
      want += (1.0 - (2 * inter + 1e-6) / (ps + ts + 1e-6)) / 4.0;
    }
  CHECK(ops::dice_loss(probs, labels).item() == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("accuracy and macro f1 hand cases") {
  std::vector<int> preds{0, 1, 1}, labels{0, 1, 0};
  CHECK(metrics::accuracy(preds, labels) == doctest::Approx(2.0 / 3.0));
  CHECK(metrics::macro_f1(preds, labels, 2) == doctest::Approx(2.0 / 3.0));
  CHECK(metrics::accuracy(labels, labels) == 1.0);
  CHECK(metrics::macro_f1(labels, labels, 2) == 1.0);
  std::vector<int> wrong{1, 0, 1};
  CHECK(metrics::accuracy(wrong, labels) == 0.0);
  // Only class 0 present and always predicted: F1 = (1 + 0 + 0) / 3.
  std::vector<int> zeros{0, 0, 0, 0};
  CHECK(metrics::macro_f1(zeros, zeros, 3) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("metrics match a confusion count oracle on random cases") {
  int mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    const int classes = 2 + t % 5;
    const std::size_t n = 1 + std::size_t(t % 37);
    auto preds = random_labels(n, classes), labels = random_labels(n, classes);
    std::vector<long> tp(std::size_t(classes), 0), fp(std::size_t(classes), 0), fn(std::size_t(classes), 0);
    long correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (preds[i] == labels[i]) ++correct, ++tp[std::size_t(preds[i])];
      else ++fp[std::size_t(preds[i])], ++fn[std::size_t(labels[i])];
    }
    double f1 = 0;
    for (int c = 0; c < classes; ++c) {
      const long denom = 2 * tp[std::size_t(c)] + fp[std::size_t(c)] + fn[std::size_t(c)];
      f1 += denom == 0 ? 0.0 : 2.0 * double(tp[std::size_t(c)]) / double(denom);
    }
    f1 /= classes;
    const double acc = double(correct) / double(n);
    if (metrics::accuracy(preds, labels) != acc) ++mismatches;
    if (std::abs(metrics::macro_f1(preds, labels, std::size_t(classes)) - f1) > 1e-12) ++mismatches;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("argmax over the class axis") {
  Tensor logits({2, 3}, {0.1f, 0.9f, 0.2f, 2, -1, 1});
  CHECK(metrics::argmax_classes(logits) == std::vector<int>{1, 0});
  Tensor seg({1, 2, 1, 2}, {1, 0, 0, 1});
  CHECK(metrics::argmax_classes(seg) == std::vector<int>{0, 1});
}

TEST_CASE("disentanglement hand cases") {
  std::vector<double> eye{1, 0, 0, 0, 1, 0};
  CHECK(metrics::disentanglement(eye, 2, 3) == doctest::Approx(0.0));
  std::vector<double> same{3, 4, 3, 4};
  CHECK(metrics::disentanglement(same, 2, 2) == doctest::Approx(std::sqrt(2.0)));
  std::vector<double> a{1, 2, 0, 0, 1, 1, 3, 0, 1}, b{0, 1, 1, 3, 0, 1, 1, 2, 0};
  CHECK(metrics::disentanglement(a, 3, 3) == doctest::Approx(metrics::disentanglement(b, 3, 3)));
}

TEST_CASE("injection objective composes its terms") {
  Tensor local = random_tensor({4, 3}), mes = random_tensor({4, 3});
  auto labels = random_labels(4, 3);
  LossWeights w;
  auto terms = injection_objective(local, mes, labels, Task::Classification, w);
  const double want = 0.9 * ops::cross_entropy(local, labels).item() + 0.1 * ops::cross_entropy(mes, labels).item();
  CHECK(terms.total.item() == doctest::Approx(want).epsilon(1e-6));
  w.messenger_injection = 0;
  CHECK(injection_objective(local, mes, labels, Task::Classification, w).total.item() ==
        doctest::Approx(0.9 * ops::cross_entropy(local, labels).item()).epsilon(1e-6));
  w.local_injection = 0;
  CHECK(injection_objective(local, mes, labels, Task::Classification, w).total.item() == 0.0);
}

TEST_CASE("distillation objective composes its terms and never reaches the local logits") {
  Tensor mes = random_tensor({4, 3}), local = random_tensor({4, 3});
  mes.set_requires_grad(true);
  local.set_requires_grad(true);
  auto labels = random_labels(4, 3);
  LossWeights w;
  auto terms = distillation_objective(mes, local, labels, Task::Classification, w);
  const double want =
      0.9 * ops::cross_entropy(mes, labels).item() + 0.1 * ops::kl_loss(mes, local.detach()).item();
  CHECK(terms.total.item() == doctest::Approx(want).epsilon(1e-6));
  terms.total.backward();
  CHECK(mes.has_grad());
  CHECK_FALSE(local.has_grad());
  auto same = distillation_objective(mes, mes, labels, Task::Classification, w);
  CHECK(std::abs(same.second.item()) < 1e-6);
  w.consistency_distillation = 0;
  CHECK(distillation_objective(mes, local, labels, Task::Classification, w).total.item() ==
        doctest::Approx(0.9 * ops::cross_entropy(mes, labels).item()).epsilon(1e-6));
}

TEST_CASE("segmentation task loss is dice on softmax probabilities") {
  Tensor logits = random_tensor({2, 2, 4, 4});
  auto labels = random_labels(32, 2);
  CHECK(task_loss(logits, labels, Task::Segmentation).item() ==
        doctest::Approx(ops::dice_loss(ops::softmax(logits, 1), labels).item()));
}

TEST_CASE("negative loss weights are rejected") {
  LossWeights w;
  w.consistency_distillation = -0.1;
  CHECK_THROWS(w.validate());
}
