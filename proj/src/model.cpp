#include "mhflid/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace mhflid {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::MaxPool2d: return "maxpool2d";
    case LayerKind::ConvTranspose2d: return "conv_transpose2d";
    case LayerKind::Linear: return "linear";
    case LayerKind::Relu: return "relu";
    case LayerKind::BatchNorm1d: return "batchnorm1d";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::GlobalAvgPool: return "global_avg_pool";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto k : {LayerKind::Conv2d, LayerKind::MaxPool2d, LayerKind::ConvTranspose2d, LayerKind::Linear,
                 LayerKind::Relu, LayerKind::BatchNorm1d, LayerKind::Flatten, LayerKind::GlobalAvgPool}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown layer kind '" + name + "'");
}

std::string to_string(Task task) { return task == Task::Classification ? "classification" : "segmentation"; }

Task task_from_string(const std::string& name) {
  if (name == "classification") return Task::Classification;
  if (name == "segmentation") return Task::Segmentation;
  throw std::invalid_argument("unknown task '" + name + "'");
}

LayerSpec LayerSpec::conv(std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding) {
  return {LayerKind::Conv2d, out, kernel, stride, padding, true};
}
LayerSpec LayerSpec::conv_transpose(std::size_t out, std::size_t kernel, std::size_t stride) {
  return {LayerKind::ConvTranspose2d, out, kernel, stride, 0, true};
}
LayerSpec LayerSpec::maxpool(std::size_t kernel, std::size_t stride, std::size_t padding) {
  return {LayerKind::MaxPool2d, 0, kernel, stride, padding, false};
}
LayerSpec LayerSpec::linear(std::size_t out) { return {LayerKind::Linear, out, 1, 1, 0, true}; }
LayerSpec LayerSpec::relu() { return {LayerKind::Relu, 0, 1, 1, 0, false}; }
LayerSpec LayerSpec::batchnorm() { return {LayerKind::BatchNorm1d, 0, 1, 1, 0, false}; }
LayerSpec LayerSpec::flatten() { return {LayerKind::Flatten, 0, 1, 1, 0, false}; }
LayerSpec LayerSpec::global_avg_pool() { return {LayerKind::GlobalAvgPool, 0, 1, 1, 0, false}; }

namespace {

struct FlowShape {
  bool spatial = true;
  std::size_t c = 0, h = 0, w = 0;  // spatial
  std::size_t features = 0;         // flat
};

std::size_t resolve_out(const LayerSpec& l, const ModelSpec& spec) {
  return l.out == LayerSpec::kNumClasses ? spec.num_classes : l.out;
}

std::string where(const char* part, std::size_t i) { return std::string(part) + "." + std::to_string(i); }

FlowShape advance(const FlowShape& in, const LayerSpec& l, const ModelSpec& spec, const std::string& at) {
  FlowShape s = in;
  auto need_spatial = [&] {
    if (!in.spatial) throw DimensionError(at + ": " + to_string(l.kind) + " needs a spatial input");
  };
  switch (l.kind) {
    case LayerKind::Conv2d: {
      need_spatial();
      if (l.stride == 0 || l.kernel == 0) throw DimensionError(at + ": kernel and stride must be positive");
      if (l.kernel > in.h + 2 * l.padding || l.kernel > in.w + 2 * l.padding) {
        throw DimensionError(at + ": kernel larger than padded input");
      }
      s.c = resolve_out(l, spec);
      s.h = (in.h + 2 * l.padding - l.kernel) / l.stride + 1;
      s.w = (in.w + 2 * l.padding - l.kernel) / l.stride + 1;
      break;
    }
    case LayerKind::ConvTranspose2d: {
      need_spatial();
      if (l.stride == 0 || l.kernel == 0) throw DimensionError(at + ": kernel and stride must be positive");
      s.c = resolve_out(l, spec);
      s.h = (in.h - 1) * l.stride + l.kernel - 2 * l.padding;
      s.w = (in.w - 1) * l.stride + l.kernel - 2 * l.padding;
      break;
    }
    case LayerKind::MaxPool2d: {
      need_spatial();
      if (l.stride == 0 || l.kernel == 0 || 2 * l.padding > l.kernel) throw DimensionError(at + ": invalid pooling");
      if (l.kernel > in.h + 2 * l.padding || l.kernel > in.w + 2 * l.padding) {
        throw DimensionError(at + ": pooling window larger than padded input");
      }
      s.h = (in.h + 2 * l.padding - l.kernel) / l.stride + 1;
      s.w = (in.w + 2 * l.padding - l.kernel) / l.stride + 1;
      break;
    }
    case LayerKind::Linear: {
      if (in.spatial) throw DimensionError(at + ": linear needs a flat input (add flatten or global_avg_pool)");
      s.features = resolve_out(l, spec);
      break;
    }
    case LayerKind::BatchNorm1d:
      if (in.spatial) throw DimensionError(at + ": batchnorm1d needs a flat input");
      break;
    case LayerKind::Relu:
      break;
    case LayerKind::Flatten:
      need_spatial();
      s.spatial = false;
      s.features = in.c * in.h * in.w;
      break;
    case LayerKind::GlobalAvgPool:
      need_spatial();
      s.spatial = false;
      s.features = in.c;
      break;
  }
  if (s.spatial && (s.c == 0 || s.h == 0 || s.w == 0)) throw DimensionError(at + ": collapses to an empty shape");
  if (!s.spatial && s.features == 0) throw DimensionError(at + ": zero features");
  return s;
}

FlowShape body_flow(const ModelSpec& spec) {
  FlowShape s{true, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2], 0};
  if (s.c == 0 || s.h == 0 || s.w == 0) throw DimensionError(spec.name + ": empty input shape");
  for (std::size_t i = 0; i < spec.body.size(); ++i) s = advance(s, spec.body[i], spec, where("body", i));
  if (!s.spatial) throw DimensionError(spec.name + ": body must end with a spatial feature map");
  return s;
}

}  // namespace

std::array<std::size_t, 3> body_output_shape(const ModelSpec& spec) {
  auto s = body_flow(spec);
  return {s.c, s.h, s.w};
}

void check_spec(const ModelSpec& spec) {
  if (spec.num_classes < 2) throw DimensionError(spec.name + ": need at least 2 classes");
  if (spec.body.empty() || spec.head.empty()) throw DimensionError(spec.name + ": body and head must be non-empty");
  auto s = body_flow(spec);
  for (std::size_t i = 0; i < spec.head.size(); ++i) s = advance(s, spec.head[i], spec, where("head", i));
  if (spec.task == Task::Classification) {
    if (s.spatial || s.features != spec.num_classes) {
      throw DimensionError(spec.name + ": classification head must end in num_classes logits");
    }
  } else {
    if (!s.spatial || s.c != spec.num_classes || s.h != spec.input_shape[1] || s.w != spec.input_shape[2]) {
      throw DimensionError(spec.name + ": segmentation head must end in per-pixel num_classes logits at input resolution");
    }
  }
}

Model Model::build(const ModelSpec& spec, std::uint64_t seed) {
  check_spec(spec);
  Model m;
  m.spec_ = spec;
  std::mt19937_64 rng(seed);

  auto add_param = [&m](std::string name, Shape shape, bool trainable) {
    m.params_.push_back({std::move(name), Tensor::zeros(std::move(shape), trainable), trainable});
    return static_cast<int>(m.params_.size() - 1);
  };
  auto he_uniform = [&rng](Tensor& t, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.mutable_data()) v = static_cast<real>(dist(rng));
  };

  auto build_part = [&](const std::vector<LayerSpec>& specs, const char* part, FlowShape s, std::vector<Layer>& out) {
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const auto& ls = specs[i];
      const auto prefix = where(part, i) + ".";
      Layer layer{ls};
      const auto next = advance(s, ls, spec, where(part, i));
      switch (ls.kind) {
        case LayerKind::Conv2d: {
          layer.weight = add_param(prefix + "weight", {next.c, s.c, ls.kernel, ls.kernel}, true);
          he_uniform(m.params_[layer.weight].tensor, s.c * ls.kernel * ls.kernel);
          if (ls.bias) layer.bias = add_param(prefix + "bias", {next.c}, true);
          break;
        }
        case LayerKind::ConvTranspose2d: {
          layer.weight = add_param(prefix + "weight", {s.c, next.c, ls.kernel, ls.kernel}, true);
          const std::size_t overlap = std::max<std::size_t>(1, (ls.kernel * ls.kernel) / (ls.stride * ls.stride));
          he_uniform(m.params_[layer.weight].tensor, s.c * overlap);
          if (ls.bias) layer.bias = add_param(prefix + "bias", {next.c}, true);
          break;
        }
        case LayerKind::Linear: {
          layer.weight = add_param(prefix + "weight", {next.features, s.features}, true);
          he_uniform(m.params_[layer.weight].tensor, s.features);
          if (ls.bias) layer.bias = add_param(prefix + "bias", {next.features}, true);
          break;
        }
        case LayerKind::BatchNorm1d: {
          layer.weight = add_param(prefix + "weight", {s.features}, true);
          for (auto& v : m.params_[layer.weight].tensor.mutable_data()) v = real(1);
          layer.bias = add_param(prefix + "bias", {s.features}, true);
          layer.running_mean = add_param(prefix + "running_mean", {s.features}, false);
          layer.running_var = add_param(prefix + "running_var", {s.features}, false);
          for (auto& v : m.params_[layer.running_var].tensor.mutable_data()) v = real(1);
          break;
        }
        default:
          break;
      }
      out.push_back(layer);
      s = next;
    }
    return s;
  };

  auto s = build_part(spec.body, "body", FlowShape{true, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2], 0}, m.body_);
  m.body_shape_ = {s.c, s.h, s.w};
  build_part(spec.head, "head", s, m.head_);
  return m;
}

Tensor Model::run(std::vector<Layer>& layers, Tensor x) {
  auto param = [this](int idx) { return idx >= 0 ? params_[static_cast<std::size_t>(idx)].tensor : Tensor(); };
  for (auto& layer : layers) {
    const auto& ls = layer.spec;
    switch (ls.kind) {
      case LayerKind::Conv2d:
        x = ops::conv2d(x, param(layer.weight), param(layer.bias), {ls.stride, ls.padding});
        break;
      case LayerKind::ConvTranspose2d:
        x = ops::conv_transpose2d(x, param(layer.weight), param(layer.bias), {ls.stride, ls.padding});
        break;
      case LayerKind::MaxPool2d:
        x = ops::maxpool2d(x, ls.kernel, ls.stride, ls.padding);
        break;
      case LayerKind::Linear:
        x = ops::linear(x, param(layer.weight), param(layer.bias));
        break;
      case LayerKind::Relu:
        x = ops::relu(x);
        break;
      case LayerKind::BatchNorm1d: {
        ops::BatchNormState state{param(layer.running_mean), param(layer.running_var)};
        x = ops::batchnorm1d(x, param(layer.weight), param(layer.bias), state, training_);
        break;
      }
      case LayerKind::Flatten:
        x = ops::flatten(x);
        break;
      case LayerKind::GlobalAvgPool:
        x = ops::global_avg_pool(x);
        break;
    }
  }
  return x;
}

Tensor Model::forward_body(const Tensor& x) {
  const auto& in = spec_.input_shape;
  if (x.rank() != 4 || x.dim(1) != in[0] || x.dim(2) != in[1] || x.dim(3) != in[2]) {
    throw DimensionError(spec_.name + ": expected input [N x " + std::to_string(in[0]) + " x " + std::to_string(in[1]) +
                         " x " + std::to_string(in[2]) + "], got " + shape_str(x.shape()));
  }
  return run(body_, x);
}

Tensor Model::forward_head(const Tensor& features) { return run(head_, features); }

Tensor Model::forward_head_tokens(const Tensor& tokens, std::size_t height, std::size_t width) {
  return forward_head(ops::tokens_to_features(tokens, height, width));
}

const Parameter& Model::parameter(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range(spec_.name + ": no parameter named '" + name + "'");
}

std::vector<Tensor> Model::trainable_tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) {
    if (p.trainable) out.push_back(p.tensor);
  }
  return out;
}

void Model::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& p : params_) {
    if (p.trainable) {
      p.tensor.set_requires_grad(!frozen);
      if (frozen) p.tensor.clear_grad();
    }
  }
}

void Model::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += p.tensor.numel();
  }
  return n;
}

std::vector<std::vector<real>> Model::values() const {
  std::vector<std::vector<real>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

void Model::load_values(const std::vector<std::vector<real>>& values) {
  if (values.size() != params_.size()) throw std::invalid_argument(spec_.name + ": parameter count mismatch on load");
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto dst = params_[i].tensor.mutable_data();
    if (values[i].size() != dst.size()) throw std::invalid_argument(spec_.name + ": size mismatch for " + params_[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

}  // namespace mhflid
