#include "mhflid/optim.hpp"

#include <cmath>

namespace mhflid {

Optimizer::Optimizer(std::vector<Tensor> params, OptimizerOptions opts) : params_(std::move(params)), opts_(opts) {
  reset_state();
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Optimizer::reset_state() {
  step_ = 0;
  m_.assign(params_.size(), {});
  v_.assign(params_.size(), {});
}

void Optimizer::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    auto data = p.mutable_data();
    auto grad = p.grad();
    if (opts_.kind == OptimizerKind::Sgd) {
      for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<real>(data[i] - opts_.lr * grad[i]);
      continue;
    }
    auto& m = m_[k];
    auto& v = v_[k];
    if (m.empty()) {
      m.assign(data.size(), 0.0);
      v.assign(data.size(), 0.0);
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      data[i] = static_cast<real>(data[i] - opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps));
    }
  }
}

}  // namespace mhflid
