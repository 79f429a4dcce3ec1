#pragma once

#include <string>
#include <vector>

#include "mhflid/tensor.hpp"

namespace mhflid {

/// A named tensor owned by a model. Buffers (e.g. batch-norm running
/// statistics) are parameters with `trainable == false`; they are serialized
/// and aggregated but never optimized.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

enum class OptimizerKind { Adam, Sgd };

struct OptimizerOptions {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction (or plain SGD) over a fixed list of tensors.
/// Moments live here, indexed like the tensor list.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(std::vector<Tensor> params, OptimizerOptions opts);

  void zero_grad();
  /// Tensors without a gradient are skipped.
  void step();
  void reset_state();

  const OptimizerOptions& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }
  long steps() const { return step_; }

 private:
  std::vector<Tensor> params_;
  OptimizerOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  long step_ = 0;
};

}  // namespace mhflid
