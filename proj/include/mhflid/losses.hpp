#pragma once

#include <span>

#include "mhflid/model.hpp"
#include "mhflid/ops.hpp"

namespace mhflid {

struct LossWeights {
  double local_injection = 0.9;      // weight of the local-model term during injection
  double messenger_injection = 0.1;  // weight of the receiver-path messenger term
  double messenger_distillation = 0.9;
  double consistency_distillation = 0.1;  // weight of the KL term

  void validate() const;
};

/// Cross-entropy for classification; soft Dice on softmax probabilities for segmentation.
Tensor task_loss(const Tensor& logits, std::span<const int> labels, Task task);

struct ObjectiveTerms {
  Tensor total;
  Tensor first;   // supervised term (local during injection, messenger during distillation)
  Tensor second;  // messenger term during injection, KL term during distillation
};

/// lambda_l * L(local, y) + lambda_m * L(messenger, y).
ObjectiveTerms injection_objective(const Tensor& local_logits, const Tensor& messenger_logits,
                                   std::span<const int> labels, Task task, const LossWeights& weights);

/// lambda_m * L(messenger, y) + lambda_con * KL(local || messenger). The local
/// logits are detached before use.
ObjectiveTerms distillation_objective(const Tensor& messenger_logits, const Tensor& local_logits,
                                      std::span<const int> labels, Task task, const LossWeights& weights,
                                      ops::KlVariant variant = ops::KlVariant::Standard);

}  // namespace mhflid
