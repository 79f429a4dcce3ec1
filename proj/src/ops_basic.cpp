#include <algorithm>
#include <cmath>

#include "gemm.hpp"
#include "mhflid/ops.hpp"

namespace mhflid::ops {

using detail::Node;

namespace {

bool wants_grad(const Node& self, std::size_t i) {
  return i < self.inputs.size() && self.inputs[i] && self.inputs[i]->requires_grad;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  int r = static_cast<int>(rank);
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw DimensionError("axis out of range");
  return static_cast<std::size_t>(a);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto ra = a.rank(), rb = b.rank();
  if (!((ra == 2 && rb == 2) || (ra == 3 && rb == 3))) {
    throw DimensionError("matmul expects two rank-2 or two rank-3 tensors, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const bool batched = ra == 3;
  const std::size_t batch = batched ? a.dim(0) : 1;
  if (batched && b.dim(0) != batch) throw DimensionError("matmul: batch sizes differ");
  const std::size_t m = a.dim(ra - 2), k = a.dim(ra - 1), n = b.dim(rb - 1);
  if (b.dim(rb - 2) != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
  }
  std::vector<real> out(batch * m * n);
  for (std::size_t t = 0; t < batch; ++t) {
    detail::gemm(false, false, m, n, k, a.data().data() + t * m * k, b.data().data() + t * k * n,
                 out.data() + t * m * n, false);
  }
  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  return Tensor::make_result(std::move(shape), std::move(out), {a, b}, [batch, m, n, k](Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    for (std::size_t t = 0; t < batch; ++t) {
      const real* g = self.grad.data() + t * m * n;
      if (A.requires_grad) {
        detail::gemm(false, true, m, k, n, g, B.data.data() + t * k * n, A.ensure_grad().data() + t * m * k, true);
      }
      if (B.requires_grad) {
        detail::gemm(true, false, k, n, m, A.data.data() + t * m * k, g, B.ensure_grad().data() + t * k * n, true);
      }
    }
  });
}

Tensor transpose(const Tensor& x) {
  const auto r = x.rank();
  if (r != 2 && r != 3) throw DimensionError("transpose expects rank 2 or 3");
  const std::size_t batch = r == 3 ? x.dim(0) : 1;
  const std::size_t rows = x.dim(r - 2), cols = x.dim(r - 1);
  std::vector<real> out(x.numel());
  const auto src = x.data();
  for (std::size_t t = 0; t < batch; ++t) {
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) out[t * rows * cols + j * rows + i] = src[t * rows * cols + i * cols + j];
    }
  }
  Shape shape = r == 3 ? Shape{batch, cols, rows} : Shape{cols, rows};
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [batch, rows, cols](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t t = 0; t < batch; ++t) {
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
          g[t * rows * cols + i * cols + j] += self.grad[t * rows * cols + j * rows + i];
        }
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t s = 0; s < 2; ++s) {
      if (!wants_grad(self, s)) continue;
      auto& g = self.inputs[s]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (wants_grad(self, 0)) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.data[i];
    }
    if (B.requires_grad) {
      auto& g = B.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.data[i];
    }
  });
}

Tensor scale(const Tensor& x, real factor) {
  std::vector<real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [factor](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor square(const Tensor& x) { return mul(x, x); }

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (auto v : x.data()) acc += v;
  return Tensor::make_result({1}, {static_cast<real>(acc)}, {x}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), real(1) / static_cast<real>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<real> out(x.data().begin(), x.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("flatten expects a batch dimension");
  return reshape(x, {x.dim(0), x.numel() / x.dim(0)});
}

Tensor relu(const Tensor& x) {
  std::vector<real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > real(0) ? x.data()[i] : real(0);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in.data[i] > real(0)) g[i] += self.grad[i];
    }
  });
}

namespace {

struct AxisLayout {
  std::size_t outer, len, inner;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
  AxisLayout l{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const auto l = axis_layout(x.shape(), normalize_axis(axis, x.rank()));
  std::vector<real> out(x.numel());
  const auto src = x.data();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      double mx = src[base];
      for (std::size_t c = 1; c < l.len; ++c) mx = std::max(mx, static_cast<double>(src[base + c * l.inner]));
      double z = 0.0;
      for (std::size_t c = 0; c < l.len; ++c) z += std::exp(src[base + c * l.inner] - mx);
      for (std::size_t c = 0; c < l.len; ++c) {
        out[base + c * l.inner] = static_cast<real>(std::exp(src[base + c * l.inner] - mx) / z);
      }
    }
  }
  auto result = Tensor::make_result(x.shape(), std::move(out), {x}, {});
  if (result.requires_grad()) {
    // The backward pass needs the output values, so it is attached after construction.
    detail::Node* self_ptr = result.node();
    self_ptr->backward = [l](Node& self) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t in = 0; in < l.inner; ++in) {
          const std::size_t base = o * l.len * l.inner + in;
          double dot = 0.0;
          for (std::size_t c = 0; c < l.len; ++c) {
            dot += static_cast<double>(self.grad[base + c * l.inner]) * self.data[base + c * l.inner];
          }
          for (std::size_t c = 0; c < l.len; ++c) {
            const auto i = base + c * l.inner;
            g[i] += static_cast<real>(self.data[i] * (self.grad[i] - dot));
          }
        }
      }
    };
  }
  return result;
}

Tensor log_softmax(const Tensor& x, int axis) {
  const auto l = axis_layout(x.shape(), normalize_axis(axis, x.rank()));
  std::vector<real> out(x.numel());
  const auto src = x.data();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      double mx = src[base];
      for (std::size_t c = 1; c < l.len; ++c) mx = std::max(mx, static_cast<double>(src[base + c * l.inner]));
      double z = 0.0;
      for (std::size_t c = 0; c < l.len; ++c) z += std::exp(src[base + c * l.inner] - mx);
      const double lz = std::log(z) + mx;
      for (std::size_t c = 0; c < l.len; ++c) out[base + c * l.inner] = static_cast<real>(src[base + c * l.inner] - lz);
    }
  }
  auto result = Tensor::make_result(x.shape(), std::move(out), {x}, {});
  if (result.requires_grad()) {
    result.node()->backward = [l](Node& self) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t in = 0; in < l.inner; ++in) {
          const std::size_t base = o * l.len * l.inner + in;
          double gs = 0.0;
          for (std::size_t c = 0; c < l.len; ++c) gs += self.grad[base + c * l.inner];
          for (std::size_t c = 0; c < l.len; ++c) {
            const auto i = base + c * l.inner;
            g[i] += static_cast<real>(self.grad[i] - std::exp(static_cast<double>(self.data[i])) * gs);
          }
        }
      }
    };
  }
  return result;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) throw DimensionError("linear: weight must be [d_out x d_in]");
  const std::size_t d_out = weight.dim(0), d_in = weight.dim(1);
  if (x.rank() < 1 || x.shape().back() != d_in) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not end in " + std::to_string(d_in));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != d_out)) {
    throw DimensionError("linear: bias must be [d_out]");
  }
  const std::size_t rows = x.numel() / d_in;
  std::vector<real> out(rows * d_out);
  detail::gemm(false, true, rows, d_out, d_in, x.data().data(), weight.data().data(), out.data(), false);
  if (bias.defined()) {
    const auto b = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < d_out; ++j) out[r * d_out + j] += b[j];
    }
  }
  Shape shape = x.shape();
  shape.back() = d_out;
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(std::move(shape), std::move(out), std::move(inputs), [rows, d_in, d_out](Node& self) {
    auto& X = *self.inputs[0];
    auto& W = *self.inputs[1];
    const real* g = self.grad.data();
    if (X.requires_grad) detail::gemm(false, false, rows, d_in, d_out, g, W.data.data(), X.ensure_grad().data(), true);
    if (W.requires_grad) detail::gemm(true, false, d_out, d_in, rows, g, X.data.data(), W.ensure_grad().data(), true);
    if (wants_grad(self, 2)) {
      auto& gb = self.inputs[2]->ensure_grad();
      for (std::size_t j = 0; j < d_out; ++j) {
        double acc = 0.0;
        for (std::size_t r = 0; r < rows; ++r) acc += g[r * d_out + j];
        gb[j] += static_cast<real>(acc);
      }
    }
  });
}

Tensor features_to_tokens(const Tensor& feat) {
  if (feat.rank() != 4) throw DimensionError("features_to_tokens expects [N x C x H x W]");
  const std::size_t n = feat.dim(0), c = feat.dim(1), hw = feat.dim(2) * feat.dim(3);
  std::vector<real> out(feat.numel());
  const auto src = feat.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t t = 0; t < hw; ++t) out[(s * hw + t) * c + ch] = src[(s * c + ch) * hw + t];
    }
  }
  return Tensor::make_result({n, hw, c}, std::move(out), {feat}, [n, c, hw](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t t = 0; t < hw; ++t) g[(s * c + ch) * hw + t] += self.grad[(s * hw + t) * c + ch];
      }
    }
  });
}

Tensor tokens_to_features(const Tensor& tokens, std::size_t height, std::size_t width) {
  if (tokens.rank() != 3 || tokens.dim(1) != height * width) {
    throw DimensionError("tokens_to_features: " + shape_str(tokens.shape()) + " does not hold a " +
                         std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  const std::size_t n = tokens.dim(0), c = tokens.dim(2), hw = height * width;
  std::vector<real> out(tokens.numel());
  const auto src = tokens.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t t = 0; t < hw; ++t) out[(s * c + ch) * hw + t] = src[(s * hw + t) * c + ch];
    }
  }
  return Tensor::make_result({n, c, height, width}, std::move(out), {tokens}, [n, c, hw](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t t = 0; t < hw; ++t) g[(s * hw + t) * c + ch] += self.grad[(s * c + ch) * hw + t];
      }
    }
  });
}

Tensor mean_tokens(const Tensor& tokens) {
  if (tokens.rank() != 3) throw DimensionError("mean_tokens expects [N x T x C]");
  const std::size_t n = tokens.dim(0), t = tokens.dim(1), c = tokens.dim(2);
  std::vector<real> out(n * c);
  const auto src = tokens.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::size_t k = 0; k < t; ++k) acc += src[(s * t + k) * c + ch];
      out[s * c + ch] = static_cast<real>(acc / static_cast<double>(t));
    }
  }
  return Tensor::make_result({n, c}, std::move(out), {tokens}, [n, t, c](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const real inv = real(1) / static_cast<real>(t);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t k = 0; k < t; ++k) {
        for (std::size_t ch = 0; ch < c; ++ch) g[(s * t + k) * c + ch] += self.grad[s * c + ch] * inv;
      }
    }
  });
}

Tensor repeat_tokens(const Tensor& x, std::size_t count) {
  if (x.rank() != 2) throw DimensionError("repeat_tokens expects [N x C]");
  const std::size_t n = x.dim(0), c = x.dim(1);
  std::vector<real> out(n * count * c);
  const auto src = x.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t k = 0; k < count; ++k) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(s * c), c, out.begin() + static_cast<std::ptrdiff_t>((s * count + k) * c));
    }
  }
  return Tensor::make_result({n, count, c}, std::move(out), {x}, [n, count, c](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t k = 0; k < count; ++k) acc += self.grad[(s * count + k) * c + ch];
        g[s * c + ch] += static_cast<real>(acc);
      }
    }
  });
}

}  // namespace mhflid::ops
