#include "mhflid/zoo.hpp"

#include <stdexcept>

namespace mhflid::zoo {

namespace {

using L = LayerSpec;

std::vector<std::size_t> pick(const std::vector<std::size_t>& given, std::vector<std::size_t> defaults,
                              const std::string& family) {
  if (given.empty()) return defaults;
  if (given.size() != defaults.size()) {
    throw std::invalid_argument(family + " expects " + std::to_string(defaults.size()) + " widths");
  }
  return given;
}

ModelSpec tiny_convnet(std::size_t blocks, std::array<std::size_t, 3> input, std::size_t classes,
                       const FamilyOptions& opt) {
  static const std::vector<std::vector<std::size_t>> kWidths{
      {16, 32}, {16, 24, 32}, {12, 24, 32, 32}, {8, 16, 24, 32, 32}};
  static const std::size_t kHidden[] = {320, 320, 288, 288};
  const std::string name = "TinyConvNet-" + std::to_string(blocks);
  const auto widths = pick(opt.widths, kWidths[blocks - 2], name);

  ModelSpec spec{name, Task::Classification, input, classes, {}, {}};
  std::size_t side = std::min(input[1], input[2]);
  for (std::size_t b = 0; b < blocks; ++b) {
    spec.body.push_back(L::conv(widths[b], 3, 1, 1));
    spec.body.push_back(L::relu());
    if (side > 4) {
      spec.body.push_back(L::maxpool(2, 2));
      side /= 2;
    }
  }
  spec.head = {L::flatten(), L::linear(opt.hidden ? opt.hidden : kHidden[blocks - 2]), L::relu(),
               L::linear(L::kNumClasses)};
  return spec;
}

ModelSpec tiny_unet(std::array<std::size_t, 3> input, std::size_t classes, const FamilyOptions& opt) {
  const auto w = pick(opt.widths, {16, 32, 64, 64, 192}, "TinyUNet");
  ModelSpec spec{"TinyUNet", Task::Segmentation, input, classes, {}, {}};
  for (std::size_t i = 0; i < 4; ++i) {
    spec.body.insert(spec.body.end(), {L::conv(w[i], 3, 1, 1), L::relu(), L::maxpool(2, 2)});
  }
  spec.body.insert(spec.body.end(), {L::conv(w[4], 3, 1, 1), L::relu()});
  spec.head = {L::conv_transpose(w[3], 2, 2), L::relu(), L::conv_transpose(w[1], 2, 2), L::relu(),
               L::conv_transpose(w[0], 2, 2), L::relu(), L::conv_transpose(L::kNumClasses, 2, 2)};
  return spec;
}

ModelSpec tiny_fcn(std::array<std::size_t, 3> input, std::size_t classes, const FamilyOptions& opt) {
  const auto w = pick(opt.widths, {16, 32, 64, 128, 192}, "TinyFCN");
  ModelSpec spec{"TinyFCN", Task::Segmentation, input, classes, {}, {}};
  for (std::size_t i = 0; i < 4; ++i) spec.body.insert(spec.body.end(), {L::conv(w[i], 3, 2, 1), L::relu()});
  spec.body.insert(spec.body.end(), {L::conv(w[4], 1, 1, 0), L::relu()});
  spec.head = {L::conv_transpose(L::kNumClasses, 16, 16)};
  return spec;
}

ModelSpec tiny_encdec(std::array<std::size_t, 3> input, std::size_t classes, const FamilyOptions& opt) {
  const auto w = pick(opt.widths, {16, 32, 64, 128, 64}, "TinyEncDec");
  ModelSpec spec{"TinyEncDec", Task::Segmentation, input, classes, {}, {}};
  spec.body = {L::conv(w[0], 5, 1, 2), L::relu(), L::maxpool(2, 2), L::conv(w[1], 5, 1, 2), L::relu(), L::maxpool(2, 2),
               L::conv(w[2], 3, 1, 1), L::relu(), L::maxpool(2, 2), L::conv(w[3], 3, 1, 1), L::relu(), L::maxpool(2, 2)};
  spec.head = {L::conv_transpose(w[4], 4, 4), L::relu(), L::conv_transpose(L::kNumClasses, 4, 4)};
  return spec;
}

ModelSpec tiny_deep_encdec(std::array<std::size_t, 3> input, std::size_t classes, const FamilyOptions& opt) {
  const auto w = pick(opt.widths, {16, 32, 64, 96, 128}, "TinyDeepEncDec");
  ModelSpec spec{"TinyDeepEncDec", Task::Segmentation, input, classes, {}, {}};
  spec.body = {L::conv(w[0], 3, 1, 1), L::relu(), L::conv(w[0], 3, 1, 1), L::relu(), L::maxpool(2, 2),
               L::conv(w[1], 3, 1, 1), L::relu(), L::conv(w[1], 3, 1, 1), L::relu(), L::maxpool(2, 2),
               L::conv(w[2], 3, 1, 1), L::relu(), L::maxpool(2, 2),
               L::conv(w[3], 3, 1, 1), L::relu(), L::maxpool(2, 2),
               L::conv(w[4], 3, 1, 1), L::relu()};
  spec.head = {L::conv_transpose(w[1], 2, 2), L::relu(), L::conv_transpose(w[0], 2, 2), L::relu(),
               L::conv_transpose(w[0], 2, 2), L::relu(), L::conv_transpose(L::kNumClasses, 2, 2)};
  return spec;
}

}  // namespace

ModelSpec family_spec(const std::string& family, Task task, std::array<std::size_t, 3> input_shape,
                      std::size_t num_classes, const FamilyOptions& options) {
  ModelSpec spec;
  const std::string prefix = "TinyConvNet-";
  if (family.rfind(prefix, 0) == 0) {
    const auto suffix = family.substr(prefix.size());
    if (suffix.size() != 1 || suffix[0] < '2' || suffix[0] > '5') {
      throw std::invalid_argument("TinyConvNet depth must be 2..5, got '" + family + "'");
    }
    spec = tiny_convnet(static_cast<std::size_t>(suffix[0] - '0'), input_shape, num_classes, options);
  } else if (family == "TinyUNet") {
    spec = tiny_unet(input_shape, num_classes, options);
  } else if (family == "TinyFCN") {
    spec = tiny_fcn(input_shape, num_classes, options);
  } else if (family == "TinyEncDec") {
    spec = tiny_encdec(input_shape, num_classes, options);
  } else if (family == "TinyDeepEncDec") {
    spec = tiny_deep_encdec(input_shape, num_classes, options);
  } else {
    throw std::invalid_argument("unknown model family '" + family + "'");
  }
  if (spec.task != task) {
    throw std::invalid_argument(family + " is a " + to_string(spec.task) + " family, config task is " + to_string(task));
  }
  check_spec(spec);
  return spec;
}

std::vector<std::string> family_names(Task task) {
  if (task == Task::Classification) return {"TinyConvNet-2", "TinyConvNet-3", "TinyConvNet-4", "TinyConvNet-5"};
  return {"TinyUNet", "TinyFCN", "TinyEncDec", "TinyDeepEncDec"};
}

MessengerWidths MessengerWidths::defaults(Task task) {
  if (task == Task::Classification) return {{16, 16, 32}, 32};
  return {{16, 16, 16, 32}, 16};
}

ModelSpec messenger_spec(Task task, std::array<std::size_t, 3> input_shape, std::size_t num_classes,
                         const MessengerWidths& widths) {
  ModelSpec spec{"Messenger", task, input_shape, num_classes, {}, {}};
  const auto& w = widths.conv;
  if (task == Task::Classification) {
    if (w.size() != 3) throw std::invalid_argument("classification messenger needs 3 conv widths");
    spec.body = {L::conv(w[0], 3, 2, 1), L::relu(), L::maxpool(3, 2, 1), L::conv(w[1], 5, 2, 2), L::relu(),
                 L::maxpool(3, 2, 1), L::conv(w[2], 7, 2, 3), L::relu()};
    spec.head = {L::global_avg_pool(), L::linear(widths.head), L::batchnorm(), L::relu(), L::linear(L::kNumClasses)};
  } else {
    if (w.size() != 4) throw std::invalid_argument("segmentation messenger needs 4 conv widths");
    const std::size_t kernels[] = {3, 5, 7, 7};
    for (std::size_t i = 0; i < 4; ++i) {
      spec.body.insert(spec.body.end(), {L::conv(w[i], kernels[i], 1, kernels[i] / 2), L::relu(), L::maxpool(3, 2, 1)});
    }
    for (std::size_t i = 0; i < 3; ++i) spec.head.insert(spec.head.end(), {L::conv_transpose(widths.head, 2, 2), L::relu()});
    spec.head.push_back(L::conv_transpose(L::kNumClasses, 2, 2));
  }
  check_spec(spec);
  return spec;
}

}  // namespace mhflid::zoo
