#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mhflid/tensor.hpp"

namespace mhflid::metrics {

/// Counts indexed [true][predicted].
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);
  ConfusionMatrix(std::span<const int> preds, std::span<const int> labels, std::size_t classes);

  void add(int truth, int pred);
  std::size_t classes() const { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }
  std::uint64_t total() const;

  double accuracy() const;
  /// F1 of one class; 0 when precision + recall is 0.
  double f1(std::size_t cls) const;
  double macro_f1() const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

double accuracy(std::span<const int> preds, std::span<const int> labels);
double macro_f1(std::span<const int> preds, std::span<const int> labels, std::size_t classes);

/// Per-position argmax over the class axis of [N x C] or [N x C x H x W] logits.
std::vector<int> argmax_classes(const Tensor& logits);

/// 2|A n B| / (|A| + |B|) over binary masks (non-zero = set); 1.0 when both are empty.
double dice_coefficient(std::span<const int> pred_mask, std::span<const int> true_mask);
/// Mean over samples and foreground classes 1..C-1 of the per-class Dice.
double mean_dice(std::span<const int> preds, std::span<const int> labels, std::size_t samples, std::size_t classes);

/// || B B^T - I ||_F after L2-normalizing the rows of `basis` ([rows x cols], row-major).
double disentanglement(std::span<const double> basis, std::size_t rows, std::size_t cols);

}  // namespace mhflid::metrics
