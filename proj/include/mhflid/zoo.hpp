#pragma once

#include <string>
#include <vector>

#include "mhflid/model.hpp"

namespace mhflid::zoo {

/// Optional width overrides for a named family. Empty means family defaults.
struct FamilyOptions {
  std::vector<std::size_t> widths;
  std::size_t hidden = 0;
};

/// Local model families:
///   classification: "TinyConvNet-2" .. "TinyConvNet-5"
///   segmentation:   "TinyUNet", "TinyFCN", "TinyEncDec", "TinyDeepEncDec"
/// Segmentation bodies downsample by 16, matching the segmentation messenger.
ModelSpec family_spec(const std::string& family, Task task, std::array<std::size_t, 3> input_shape,
                      std::size_t num_classes, const FamilyOptions& options = {});
std::vector<std::string> family_names(Task task);

struct MessengerWidths {
  /// Body conv widths: 3 entries (classification) or 4 (segmentation).
  std::vector<std::size_t> conv;
  /// Classification head hidden width / segmentation up-sampling width.
  std::size_t head = 0;

  static MessengerWidths defaults(Task task);
};

/// Classification: conv3-pool3-conv5-pool3-conv7 body, every layer stride 2;
/// head global-avg-pool, linear, batchnorm1d, relu, linear.
/// Segmentation: conv3/5/7/7 (stride 1) each followed by maxpool 3 stride 2;
/// head four stride-2 2x2 transposed convs.
ModelSpec messenger_spec(Task task, std::array<std::size_t, 3> input_shape, std::size_t num_classes,
                         const MessengerWidths& widths);

}  // namespace mhflid::zoo
