#include "mhflid/losses.hpp"

#include <stdexcept>

namespace mhflid {

void LossWeights::validate() const {
  for (double w : {local_injection, messenger_injection, messenger_distillation, consistency_distillation}) {
    if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
  }
}

Tensor task_loss(const Tensor& logits, std::span<const int> labels, Task task) {
  if (task == Task::Classification) return ops::cross_entropy(logits, labels);
  return ops::dice_loss(ops::softmax(logits, 1), labels);
}

namespace {

Tensor weighted_sum(double wa, const Tensor& a, double wb, const Tensor& b) {
  return ops::add(ops::scale(a, static_cast<real>(wa)), ops::scale(b, static_cast<real>(wb)));
}

}  // namespace

ObjectiveTerms injection_objective(const Tensor& local_logits, const Tensor& messenger_logits,
                                   std::span<const int> labels, Task task, const LossWeights& weights) {
  Tensor local = task_loss(local_logits, labels, task);
  Tensor messenger = task_loss(messenger_logits, labels, task);
  return {weighted_sum(weights.local_injection, local, weights.messenger_injection, messenger), local, messenger};
}

ObjectiveTerms distillation_objective(const Tensor& messenger_logits, const Tensor& local_logits,
                                      std::span<const int> labels, Task task, const LossWeights& weights,
                                      ops::KlVariant variant) {
  Tensor supervised = task_loss(messenger_logits, labels, task);
  Tensor kl = ops::kl_loss(messenger_logits, local_logits.detach(), variant);
  return {weighted_sum(weights.messenger_distillation, supervised, weights.consistency_distillation, kl), supervised, kl};
}

}  // namespace mhflid
