#include <limits>

#include "gemm.hpp"
#include "mhflid/ops.hpp"

namespace mhflid::ops {

using detail::Node;

namespace {

struct Geometry {
  std::size_t channels, height, width;
  std::size_t kh, kw, stride, padding;
  std::size_t out_h, out_w;
};

// cols[(c*kh + i)*kw + j][oy*out_w + ox] = src[c][oy*s - p + i][ox*s - p + j] (0 outside).
void im2col(const real* src, const Geometry& g, real* cols) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        real* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.padding);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.padding);
            const bool inside = y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(g.height) &&
                                x < static_cast<std::ptrdiff_t>(g.width);
            row[oy * g.out_w + ox] = inside ? src[(c * g.height + static_cast<std::size_t>(y)) * g.width + static_cast<std::size_t>(x)] : real(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back into dst.
void col2im(const real* cols, const Geometry& g, real* dst) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const real* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.padding);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.padding);
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) continue;
            dst[(c * g.height + static_cast<std::size_t>(y)) * g.width + static_cast<std::size_t>(x)] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

void check_bias(const Tensor& bias, std::size_t channels, const char* op) {
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != channels)) {
    throw DimensionError(std::string(op) + ": bias must have " + std::to_string(channels) + " entries");
  }
}

void add_bias_grad(Node& self, std::size_t index, std::size_t batch, std::size_t channels, std::size_t plane) {
  if (index >= self.inputs.size() || !self.inputs[index]->requires_grad) return;
  auto& gb = self.inputs[index]->ensure_grad();
  for (std::size_t o = 0; o < channels; ++o) {
    double acc = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const real* g = self.grad.data() + (n * channels + o) * plane;
      for (std::size_t p = 0; p < plane; ++p) acc += g[p];
    }
    gb[o] += static_cast<real>(acc);
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opts) {
  if (x.rank() != 4 || weight.rank() != 4) throw DimensionError("conv2d expects [N x C x H x W] input and [O x C x kh x kw] weight");
  if (opts.stride == 0) throw DimensionError("conv2d: stride must be positive");
  const std::size_t batch = x.dim(0), out_c = weight.dim(0);
  Geometry g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), weight.dim(3), opts.stride, opts.padding, 0, 0};
  if (weight.dim(1) != g.channels) {
    throw DimensionError("conv2d: input has " + std::to_string(g.channels) + " channels, weight expects " +
                         std::to_string(weight.dim(1)));
  }
  if (g.kh > g.height + 2 * g.padding || g.kw > g.width + 2 * g.padding) {
    throw DimensionError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  }
  check_bias(bias, out_c, "conv2d");
  g.out_h = (g.height + 2 * g.padding - g.kh) / g.stride + 1;
  g.out_w = (g.width + 2 * g.padding - g.kw) / g.stride + 1;

  const std::size_t ckk = g.channels * g.kh * g.kw, plane = g.out_h * g.out_w;
  const std::size_t in_size = g.channels * g.height * g.width;
  std::vector<real> cols(batch * ckk * plane);
  std::vector<real> out(batch * out_c * plane);
  for (std::size_t n = 0; n < batch; ++n) {
    real* c = cols.data() + n * ckk * plane;
    im2col(x.data().data() + n * in_size, g, c);
    real* o = out.data() + n * out_c * plane;
    detail::gemm(false, false, out_c, plane, ckk, weight.data().data(), c, o, false);
    if (bias.defined()) {
      for (std::size_t oc = 0; oc < out_c; ++oc) {
        const real b = bias.data()[oc];
        for (std::size_t p = 0; p < plane; ++p) o[oc * plane + p] += b;
      }
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  const bool keep_cols = grad_enabled() && weight.requires_grad();
  auto saved = std::make_shared<std::vector<real>>(keep_cols ? std::move(cols) : std::vector<real>{});
  return Tensor::make_result(
      {batch, out_c, g.out_h, g.out_w}, std::move(out), std::move(inputs),
      [g, batch, out_c, ckk, plane, in_size, saved](Node& self) {
        auto& X = *self.inputs[0];
        auto& W = *self.inputs[1];
        std::vector<real> dcols(ckk * plane);
        for (std::size_t n = 0; n < batch; ++n) {
          const real* go = self.grad.data() + n * out_c * plane;
          if (W.requires_grad) {
            detail::gemm(false, true, out_c, ckk, plane, go, saved->data() + n * ckk * plane, W.ensure_grad().data(), true);
          }
          if (X.requires_grad) {
            detail::gemm(true, false, ckk, plane, out_c, W.data.data(), go, dcols.data(), false);
            col2im(dcols.data(), g, X.ensure_grad().data() + n * in_size);
          }
        }
        add_bias_grad(self, 2, batch, out_c, plane);
      });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opts) {
  if (x.rank() != 4 || weight.rank() != 4) {
    throw DimensionError("conv_transpose2d expects [N x C x H x W] input and [C_in x C_out x kh x kw] weight");
  }
  if (opts.stride == 0) throw DimensionError("conv_transpose2d: stride must be positive");
  const std::size_t batch = x.dim(0), in_c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (weight.dim(0) != in_c) throw DimensionError("conv_transpose2d: channel mismatch");
  const std::size_t out_c = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t full_h = (h - 1) * opts.stride + kh, full_w = (w - 1) * opts.stride + kw;
  if (full_h <= 2 * opts.padding || full_w <= 2 * opts.padding) throw DimensionError("conv_transpose2d: padding too large");
  // Output geometry seen as the input of the adjoint convolution.
  Geometry g{out_c, full_h - 2 * opts.padding, full_w - 2 * opts.padding, kh, kw, opts.stride, opts.padding, h, w};
  check_bias(bias, out_c, "conv_transpose2d");

  const std::size_t ckk = out_c * kh * kw, plane = h * w, out_size = out_c * g.height * g.width;
  std::vector<real> out(batch * out_size, real(0));
  std::vector<real> cols(ckk * plane);
  for (std::size_t n = 0; n < batch; ++n) {
    detail::gemm(true, false, ckk, plane, in_c, weight.data().data(), x.data().data() + n * in_c * plane, cols.data(), false);
    real* o = out.data() + n * out_size;
    col2im(cols.data(), g, o);
    if (bias.defined()) {
      const std::size_t op = g.height * g.width;
      for (std::size_t oc = 0; oc < out_c; ++oc) {
        const real b = bias.data()[oc];
        for (std::size_t p = 0; p < op; ++p) o[oc * op + p] += b;
      }
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(
      {batch, out_c, g.height, g.width}, std::move(out), std::move(inputs),
      [g, batch, in_c, out_c, ckk, plane, out_size](Node& self) {
        auto& X = *self.inputs[0];
        auto& W = *self.inputs[1];
        std::vector<real> dcols(ckk * plane);
        for (std::size_t n = 0; n < batch; ++n) {
          im2col(self.grad.data() + n * out_size, g, dcols.data());
          if (X.requires_grad) {
            detail::gemm(false, false, in_c, plane, ckk, W.data.data(), dcols.data(), X.ensure_grad().data() + n * in_c * plane, true);
          }
          if (W.requires_grad) {
            detail::gemm(false, true, in_c, ckk, plane, X.data.data() + n * in_c * plane, dcols.data(), W.ensure_grad().data(), true);
          }
        }
        add_bias_grad(self, 2, batch, out_c, g.height * g.width);
      });
}

Tensor maxpool2d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (x.rank() != 4) throw DimensionError("maxpool2d expects [N x C x H x W]");
  if (kernel == 0 || stride == 0) throw DimensionError("maxpool2d: kernel and stride must be positive");
  if (2 * padding > kernel) throw DimensionError("maxpool2d: padding must be at most half the kernel");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kernel > h + 2 * padding || kernel > w + 2 * padding) {
    throw DimensionError("maxpool2d: kernel larger than padded input " + shape_str(x.shape()));
  }
  const std::size_t oh = (h + 2 * padding - kernel) / stride + 1, ow = (w + 2 * padding - kernel) / stride + 1;
  std::vector<real> out(planes * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto src = x.data();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        real best = -std::numeric_limits<real>::infinity();
        std::size_t best_i = std::numeric_limits<std::size_t>::max();
        for (std::size_t i = 0; i < kernel; ++i) {
          const auto y = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(padding);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t j = 0; j < kernel; ++j) {
            const auto xx = static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(padding);
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t idx = (pl * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(xx);
            if (best_i == std::numeric_limits<std::size_t>::max() || src[idx] > best) {
              best = src[idx];
              best_i = idx;
            }
          }
        }
        const std::size_t o = (pl * oh + oy) * ow + ox;
        out[o] = best;
        argmax[o] = best_i;
      }
    }
  }
  return Tensor::make_result({x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                             [argmax = std::move(argmax)](Node& self) {
                               auto& g = self.inputs[0]->ensure_grad();
                               for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
                             });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("global_avg_pool expects [N x C x H x W]");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<real> out(n * c);
  const auto src = x.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += src[i * plane + p];
    out[i] = static_cast<real>(acc / static_cast<double>(plane));
  }
  return Tensor::make_result({n, c}, std::move(out), {x}, [plane](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const real inv = real(1) / static_cast<real>(plane);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      for (std::size_t p = 0; p < plane; ++p) g[i * plane + p] += self.grad[i] * inv;
    }
  });
}

}  // namespace mhflid::ops
