#include <cmath>
#include <string>

#include "mhflid/ops.hpp"

namespace mhflid::ops {

using detail::Node;

Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool training) {
  if (x.rank() != 2) throw DimensionError("batchnorm1d expects [N x C]");
  const std::size_t n = x.dim(0), c = x.dim(1);
  for (const Tensor* t : {&gamma, &beta, static_cast<const Tensor*>(&state.running_mean), static_cast<const Tensor*>(&state.running_var)}) {
    if (t->rank() != 1 || t->dim(0) != c) throw DimensionError("batchnorm1d: parameter size mismatch");
  }
  if (training && n < 2) throw DimensionError("batchnorm1d: training mode needs at least 2 samples");

  std::vector<double> mean(c), inv_std(c);
  const auto src = x.data();
  if (training) {
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += src[i * c + j];
      const double mu = s / static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) ss += (src[i * c + j] - mu) * (src[i * c + j] - mu);
      const double var = ss / static_cast<double>(n);
      mean[j] = mu;
      inv_std[j] = 1.0 / std::sqrt(var + state.eps);
      rm[j] = static_cast<real>((1.0 - state.momentum) * rm[j] + state.momentum * mu);
      rv[j] = static_cast<real>((1.0 - state.momentum) * rv[j] + state.momentum * ss / static_cast<double>(n - 1));
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      mean[j] = state.running_mean.data()[j];
      inv_std[j] = 1.0 / std::sqrt(static_cast<double>(state.running_var.data()[j]) + state.eps);
    }
  }

  std::vector<real> xhat(n * c), out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (src[i * c + j] - mean[j]) * inv_std[j];
      xhat[i * c + j] = static_cast<real>(h);
      out[i * c + j] = static_cast<real>(gamma.data()[j] * h + beta.data()[j]);
    }
  }
  return Tensor::make_result(
      {n, c}, std::move(out), {x, gamma, beta},
      [n, c, training, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
        auto& X = *self.inputs[0];
        auto& G = *self.inputs[1];
        auto& B = *self.inputs[2];
        const real* dy = self.grad.data();
        for (std::size_t j = 0; j < c; ++j) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            sum_dy += dy[i * c + j];
            sum_dy_xhat += static_cast<double>(dy[i * c + j]) * xhat[i * c + j];
          }
          if (G.requires_grad) G.ensure_grad()[j] += static_cast<real>(sum_dy_xhat);
          if (B.requires_grad) B.ensure_grad()[j] += static_cast<real>(sum_dy);
          if (!X.requires_grad) continue;
          auto& gx = X.ensure_grad();
          const double gam = G.data[j];
          if (training) {
            const double nn = static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
              const double dxhat = dy[i * c + j] * gam;
              gx[i * c + j] += static_cast<real>(inv_std[j] / nn *
                                                 (nn * dxhat - gam * sum_dy - xhat[i * c + j] * gam * sum_dy_xhat));
            }
          } else {
            for (std::size_t i = 0; i < n; ++i) gx[i * c + j] += static_cast<real>(dy[i * c + j] * gam * inv_std[j]);
          }
        }
      });
}

namespace {

// Channel axis 1 with spatial positions folded: [N x C] or [N x C x H x W].
struct ClassLayout {
  std::size_t batch, classes, plane;
  std::size_t positions() const { return batch * plane; }
  std::size_t index(std::size_t pos, std::size_t cls) const {
    const std::size_t n = pos / plane, p = pos % plane;
    return (n * classes + cls) * plane + p;
  }
};

ClassLayout class_layout(const Tensor& logits, const char* op) {
  if (logits.rank() != 2 && logits.rank() != 4) {
    throw DimensionError(std::string(op) + " expects [N x C] or [N x C x H x W] logits");
  }
  ClassLayout l{logits.dim(0), logits.dim(1), 1};
  if (logits.rank() == 4) l.plane = logits.dim(2) * logits.dim(3);
  return l;
}

void softmax_at(const real* data, const ClassLayout& l, std::size_t pos, std::vector<double>& prob, std::vector<double>& logp) {
  double mx = data[l.index(pos, 0)];
  for (std::size_t c = 1; c < l.classes; ++c) mx = std::max(mx, static_cast<double>(data[l.index(pos, c)]));
  double z = 0.0;
  for (std::size_t c = 0; c < l.classes; ++c) z += std::exp(data[l.index(pos, c)] - mx);
  const double lz = std::log(z);
  for (std::size_t c = 0; c < l.classes; ++c) {
    logp[c] = data[l.index(pos, c)] - mx - lz;
    prob[c] = std::exp(logp[c]);
  }
}

void check_labels(std::span<const int> labels, std::size_t expected, std::size_t classes, const char* op) {
  if (labels.size() != expected) {
    throw DimensionError(std::string(op) + ": expected " + std::to_string(expected) + " labels, got " +
                         std::to_string(labels.size()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw std::out_of_range(std::string(op) + ": label out of range");
  }
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const auto l = class_layout(logits, "cross_entropy");
  check_labels(labels, l.positions(), l.classes, "cross_entropy");
  const std::size_t count = l.positions();
  std::vector<real> grad(logits.numel());
  std::vector<double> prob(l.classes), logp(l.classes);
  double total = 0.0;
  for (std::size_t pos = 0; pos < count; ++pos) {
    softmax_at(logits.data().data(), l, pos, prob, logp);
    const auto y = static_cast<std::size_t>(labels[pos]);
    total -= logp[y];
    for (std::size_t c = 0; c < l.classes; ++c) {
      grad[l.index(pos, c)] = static_cast<real>((prob[c] - (c == y ? 1.0 : 0.0)) / static_cast<double>(count));
    }
  }
  return Tensor::make_result({1}, {static_cast<real>(total / static_cast<double>(count))}, {logits},
                             [grad = std::move(grad)](Node& self) {
                               auto& g = self.inputs[0]->ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * grad[i];
                             });
}

Tensor kl_loss(const Tensor& student_logits, const Tensor& teacher_logits, KlVariant variant) {
  if (student_logits.shape() != teacher_logits.shape()) {
    throw DimensionError("kl_loss: shape mismatch " + shape_str(student_logits.shape()) + " vs " +
                         shape_str(teacher_logits.shape()));
  }
  const auto l = class_layout(student_logits, "kl_loss");
  const std::size_t count = l.positions();
  std::vector<real> grad(student_logits.numel());
  std::vector<double> p(l.classes), logp(l.classes), q(l.classes), logq(l.classes);
  double total = 0.0;
  for (std::size_t pos = 0; pos < count; ++pos) {
    softmax_at(teacher_logits.data().data(), l, pos, p, logp);
    softmax_at(student_logits.data().data(), l, pos, q, logq);
    if (variant == KlVariant::Standard) {
      for (std::size_t c = 0; c < l.classes; ++c) {
        total += p[c] * (logp[c] - logq[c]);
        grad[l.index(pos, c)] = static_cast<real>((q[c] - p[c]) / static_cast<double>(count));
      }
    } else {
      double entropy_q = 0.0;
      for (std::size_t c = 0; c < l.classes; ++c) {
        total += p[c] * logp[c] - q[c] * logq[c];
        entropy_q -= q[c] * logq[c];
      }
      for (std::size_t c = 0; c < l.classes; ++c) {
        grad[l.index(pos, c)] = static_cast<real>(-q[c] * (logq[c] + entropy_q) / static_cast<double>(count));
      }
    }
  }
  return Tensor::make_result({1}, {static_cast<real>(total / static_cast<double>(count))}, {student_logits},
                             [grad = std::move(grad)](Node& self) {
                               auto& g = self.inputs[0]->ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * grad[i];
                             });
}

Tensor dice_loss(const Tensor& probs, std::span<const int> labels, double eps) {
  if (probs.rank() != 4) throw DimensionError("dice_loss expects [N x C x H x W] probabilities");
  const std::size_t n = probs.dim(0), classes = probs.dim(1), plane = probs.dim(2) * probs.dim(3);
  if (classes < 2) throw DimensionError("dice_loss needs a background and at least one foreground class");
  check_labels(labels, n * plane, classes, "dice_loss");
  const double count = static_cast<double>(n * (classes - 1));
  std::vector<real> grad(probs.numel(), real(0));
  double total = 0.0;
  const auto src = probs.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t c = 1; c < classes; ++c) {
      const real* pc = src.data() + (s * classes + c) * plane;
      const int* y = labels.data() + s * plane;
      double inter = 0.0, sum_p = 0.0, sum_t = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        const double t = y[i] == static_cast<int>(c) ? 1.0 : 0.0;
        inter += pc[i] * t;
        sum_p += pc[i];
        sum_t += t;
      }
      const double num = 2.0 * inter + eps, den = sum_p + sum_t + eps;
      total += 1.0 - num / den;
      real* gc = grad.data() + (s * classes + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double t = y[i] == static_cast<int>(c) ? 1.0 : 0.0;
        gc[i] = static_cast<real>(-(2.0 * t * den - num) / (den * den) / count);
      }
    }
  }
  return Tensor::make_result({1}, {static_cast<real>(total / count)}, {probs}, [grad = std::move(grad)](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * grad[i];
  });
}

}  // namespace mhflid::ops
