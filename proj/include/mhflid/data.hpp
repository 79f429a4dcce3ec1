#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mhflid/model.hpp"
#include "mhflid/tensor.hpp"

namespace mhflid::data {

/// Labels hold one class id per sample (classification) or per pixel
/// (segmentation, sample-major). `groups` is the per-sample attribute that
/// partitioners skew on: the class for classification, the acquisition style
/// for segmentation.
struct Dataset {
  std::string name;
  Task task = Task::Classification;
  std::size_t num_classes = 0;
  std::size_t num_groups = 0;
  Tensor inputs;  // [N x C x H x W]
  std::vector<int> labels;
  std::vector<int> groups;

  std::size_t size() const { return inputs.defined() ? inputs.dim(0) : 0; }
  std::array<std::size_t, 3> sample_shape() const { return {inputs.dim(1), inputs.dim(2), inputs.dim(3)}; }
  std::size_t labels_per_sample() const;
  void check() const;
};

struct Batch {
  Tensor inputs;
  std::vector<int> labels;
  std::size_t size() const { return inputs.dim(0); }
};

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);
Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices);
Batch whole(const Dataset& ds);

/// Shuffled minibatch index lists over [0, n). A trailing batch of one sample
/// joins the previous batch (batch normalization needs two samples).
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng);

struct ClassificationOptions {
  std::size_t channels = 3;
  double noise = 0.9;
};

/// Class-conditional textured blobs: each class owns a template of Gaussian
/// blobs plus an oriented sinusoid; samples jitter the template's gain and
/// offset and add Gaussian pixel noise. Labels are balanced within one.
Dataset gen_classification(std::size_t num_classes, std::size_t n, std::size_t image_size, std::uint64_t seed,
                           const ClassificationOptions& options = {});

/// Random ellipse foreground (class 1) on background (class 0) with one of
/// four acquisition styles per image.
Dataset gen_segmentation(std::size_t n, std::size_t image_size, std::uint64_t seed, std::size_t channels = 3);

struct ClientSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
using Partition = std::vector<ClientSplit>;

struct DirichletOptions {
  double train_fraction = 0.8;
  std::size_t min_per_split = 8;
  std::size_t max_attempts = 1000;
};

/// Label-skew partition: for each group, client shares are drawn from Dir(alpha).
/// Draws that leave any client split below `min_per_split` are rejected and redrawn.
Partition dirichlet_partition(const Dataset& ds, std::size_t num_clients, double alpha, std::uint64_t seed,
                              const DirichletOptions& options = {});

/// Per-client counts [client][group] of a partition's train + test indices.
std::vector<std::vector<std::size_t>> group_counts(const Dataset& ds, const Partition& partition);

struct ClientData {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> source_train;  // indices into the source dataset
  std::vector<std::size_t> source_test;
  std::size_t factor = 1;
};

std::vector<ClientData> materialize(const Dataset& ds, const Partition& partition);

/// Splits the pool into disjoint equal-size, equally label-distributed client
/// pools; client k is downsampled by factors[k] and split 7:3 per class.
std::vector<ClientData> resolution_partition(const Dataset& ds, const std::vector<std::size_t>& factors,
                                             std::uint64_t seed, double train_fraction = 0.7);

/// Block-average downsampling by an integer factor (2x2 average per halving).
Dataset downsample(const Dataset& ds, std::size_t factor);
/// Resizes [N x C x H x W] by integer block averaging (shrink) or nearest replication (grow).
Tensor resize_inputs(const Tensor& x, std::size_t height, std::size_t width);

/// Raw little-endian tensors plus manifest.json.
void export_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset import_dataset(const std::filesystem::path& dir);

}  // namespace mhflid::data
