#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mhflid/ops.hpp"
#include "mhflid/optim.hpp"
#include "mhflid/tensor.hpp"

namespace mhflid {

enum class Task { Classification, Segmentation };

enum class LayerKind { Conv2d, MaxPool2d, ConvTranspose2d, Linear, Relu, BatchNorm1d, Flatten, GlobalAvgPool };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);
std::string to_string(Task task);
Task task_from_string(const std::string& name);

struct LayerSpec {
  /// `out` value meaning "the model's num_classes".
  static constexpr std::size_t kNumClasses = 0;

  LayerKind kind = LayerKind::Relu;
  std::size_t out = 0;  // channels (conv) or features (linear)
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool bias = true;

  static LayerSpec conv(std::size_t out, std::size_t kernel, std::size_t stride = 1, std::size_t padding = 0);
  static LayerSpec conv_transpose(std::size_t out, std::size_t kernel, std::size_t stride);
  static LayerSpec maxpool(std::size_t kernel, std::size_t stride, std::size_t padding = 0);
  static LayerSpec linear(std::size_t out);
  static LayerSpec relu();
  static LayerSpec batchnorm();
  static LayerSpec flatten();
  static LayerSpec global_avg_pool();
};

/// Input shape is (channels, height, width) of one sample.
struct ModelSpec {
  std::string name;
  Task task = Task::Classification;
  std::array<std::size_t, 3> input_shape{3, 16, 16};
  std::size_t num_classes = 2;
  std::vector<LayerSpec> body;
  std::vector<LayerSpec> head;
};

/// Per-sample shape after the body: (channels, height, width).
std::array<std::size_t, 3> body_output_shape(const ModelSpec& spec);

/// Checks shape compatibility of every layer and the body/head contract.
/// Throws DimensionError describing the first violation.
void check_spec(const ModelSpec& spec);

/// Sequential body + head network. Parameter names are "body.<i>.<field>" and
/// "head.<i>.<field>" where <i> is the layer position. Models own their tensors
/// and are move-only.
class Model {
 public:
  static Model build(const ModelSpec& spec, std::uint64_t seed);

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelSpec& spec() const { return spec_; }

  Tensor forward_body(const Tensor& x);
  Tensor forward_head(const Tensor& features);
  Tensor forward(const Tensor& x) { return forward_head(forward_body(x)); }
  /// Runs the head on [N x T x C] tokens laid out on a height x width grid.
  Tensor forward_head_tokens(const Tensor& tokens, std::size_t height, std::size_t width);

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  const Parameter& parameter(const std::string& name) const;
  std::vector<Tensor> trainable_tensors() const;

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  /// A frozen model's trainable tensors stop requiring grad.
  void set_frozen(bool frozen);
  bool frozen() const { return frozen_; }
  void zero_grad();

  /// Number of trainable scalars (weights, biases, batch-norm affine terms).
  std::size_t param_count() const;
  std::array<std::size_t, 3> body_output_shape() const { return body_shape_; }

  /// Deep copy of all parameter values, in parameter order.
  std::vector<std::vector<real>> values() const;
  void load_values(const std::vector<std::vector<real>>& values);

 private:
  struct Layer {
    LayerSpec spec;
    int weight = -1, bias = -1, running_mean = -1, running_var = -1;
  };

  Model() = default;
  Tensor run(std::vector<Layer>& layers, Tensor x);

  ModelSpec spec_;
  std::vector<Layer> body_, head_;
  std::vector<Parameter> params_;
  std::array<std::size_t, 3> body_shape_{};
  bool training_ = true;
  bool frozen_ = false;
};

}  // namespace mhflid
