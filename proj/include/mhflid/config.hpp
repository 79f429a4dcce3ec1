#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mhflid/protocol.hpp"
#include "mhflid/zoo.hpp"

namespace mhflid {

struct ClientConfig {
  std::string model;  // family name from the zoo
  zoo::FamilyOptions options;
};

struct DataConfig {
  std::size_t num_classes = 3;
  std::size_t samples = 600;
  std::size_t image_size = 16;
  std::size_t channels = 3;
  double noise = 0.9;
};

enum class PartitionKind { Dirichlet, Resolution };

struct PartitionConfig {
  PartitionKind kind = PartitionKind::Dirichlet;
  double alpha = 0.3;
  std::vector<std::size_t> factors{1, 2, 4, 8};
  double train_fraction = 0.8;  // resolution partitions default to 0.7
};

struct ExperimentConfig {
  std::string name = "experiment";
  Task task = Task::Classification;
  Method method = Method::MhPflid;
  std::uint64_t seed = 1;
  std::string output_dir = "runs/experiment";
  DataConfig data;
  PartitionConfig partition;
  std::vector<ClientConfig> clients;
  zoo::MessengerWidths messenger = zoo::MessengerWidths::defaults(Task::Classification);
  ProtocolOptions protocol;
  std::size_t checkpoint_every = 5;
  bool record_wall_time = false;
};

/// Parses and validates; unknown keys anywhere raise std::invalid_argument.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);

/// Per-client input shape (channels, height, width) after partitioning.
std::array<std::size_t, 3> client_input_shape(const ExperimentConfig& config, std::size_t client);
ModelSpec client_spec(const ExperimentConfig& config, std::size_t client);
ModelSpec messenger_spec(const ExperimentConfig& config);

struct Diagnostics {
  std::vector<std::string> lines;
  bool ok = true;
};

/// Shape audits of every spec, messenger pairing and the lightness bound.
Diagnostics validate(const ExperimentConfig& config);

}  // namespace mhflid
