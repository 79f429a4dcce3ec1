#include "mhflid/metrics.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mhflid::metrics {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw std::invalid_argument("confusion matrix needs at least one class");
}

ConfusionMatrix::ConfusionMatrix(std::span<const int> preds, std::span<const int> labels, std::size_t classes)
    : ConfusionMatrix(classes) {
  if (preds.size() != labels.size()) throw std::invalid_argument("prediction and label counts differ");
  for (std::size_t i = 0; i < preds.size(); ++i) add(labels[i], preds[i]);
}

void ConfusionMatrix::add(int truth, int pred) {
  if (truth < 0 || pred < 0 || static_cast<std::size_t>(truth) >= classes_ || static_cast<std::size_t>(pred) >= classes_) {
    throw std::out_of_range("class id outside confusion matrix");
  }
  ++counts_[static_cast<std::size_t>(truth) * classes_ + static_cast<std::size_t>(pred)];
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

double ConfusionMatrix::accuracy() const {
  const auto n = total();
  if (n == 0) return 0.0;
  std::uint64_t correct = 0;
  for (std::size_t c = 0; c < classes_; ++c) correct += at(c, c);
  return static_cast<double>(correct) / static_cast<double>(n);
}

double ConfusionMatrix::f1(std::size_t cls) const {
  std::uint64_t predicted = 0, actual = 0;
  for (std::size_t k = 0; k < classes_; ++k) {
    predicted += at(k, cls);
    actual += at(cls, k);
  }
  const auto tp = at(cls, cls);
  // 2tp / (2tp + fp + fn) equals 2PR/(P+R) whenever P+R > 0.
  const auto denom = predicted + actual;
  if (tp == 0 || denom == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double ConfusionMatrix::macro_f1() const {
  double s = 0.0;
  for (std::size_t c = 0; c < classes_; ++c) s += f1(c);
  return s / static_cast<double>(classes_);
}

double accuracy(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw std::invalid_argument("prediction and label counts differ");
  if (preds.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double macro_f1(std::span<const int> preds, std::span<const int> labels, std::size_t classes) {
  return ConfusionMatrix(preds, labels, classes).macro_f1();
}

std::vector<int> argmax_classes(const Tensor& logits) {
  if (logits.rank() != 2 && logits.rank() != 4) throw DimensionError("argmax_classes expects [N x C] or [N x C x H x W]");
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  const std::size_t plane = logits.rank() == 4 ? logits.dim(2) * logits.dim(3) : 1;
  const auto d = logits.data();
  std::vector<int> out(n * plane);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t p = 0; p < plane; ++p) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (d[(s * classes + c) * plane + p] > d[(s * classes + best) * plane + p]) best = c;
      }
      out[s * plane + p] = static_cast<int>(best);
    }
  }
  return out;
}

double dice_coefficient(std::span<const int> pred_mask, std::span<const int> true_mask) {
  if (pred_mask.size() != true_mask.size()) throw std::invalid_argument("mask sizes differ");
  std::size_t inter = 0, p = 0, t = 0;
  for (std::size_t i = 0; i < pred_mask.size(); ++i) {
    const bool a = pred_mask[i] != 0, b = true_mask[i] != 0;
    inter += a && b;
    p += a;
    t += b;
  }
  if (p + t == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + t);
}

double mean_dice(std::span<const int> preds, std::span<const int> labels, std::size_t samples, std::size_t classes) {
  if (preds.size() != labels.size() || samples == 0 || preds.size() % samples != 0) {
    throw std::invalid_argument("mean_dice: inconsistent sizes");
  }
  if (classes < 2) throw std::invalid_argument("mean_dice needs a foreground class");
  const std::size_t plane = preds.size() / samples;
  std::vector<int> a(plane), b(plane);
  double total = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t c = 1; c < classes; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        a[i] = preds[s * plane + i] == static_cast<int>(c);
        b[i] = labels[s * plane + i] == static_cast<int>(c);
      }
      total += dice_coefficient(a, b);
    }
  }
  return total / static_cast<double>(samples * (classes - 1));
}

double disentanglement(std::span<const double> basis, std::size_t rows, std::size_t cols) {
  if (basis.size() != rows * cols || rows == 0) throw std::invalid_argument("disentanglement: bad basis shape");
  std::vector<double> b(basis.begin(), basis.end());
  for (std::size_t r = 0; r < rows; ++r) {
    double norm = 0.0;
    for (std::size_t c = 0; c < cols; ++c) norm += b[r * cols + c] * b[r * cols + c];
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) b[r * cols + c] /= norm;
  }
  double fro = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < rows; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += b[i * cols + c] * b[j * cols + c];
      const double e = dot - (i == j ? 1.0 : 0.0);
      fro += e * e;
    }
  }
  return std::sqrt(fro);
}

}  // namespace mhflid::metrics
