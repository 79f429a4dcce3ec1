#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mhflid/config.hpp"
#include "mhflid/protocol.hpp"

namespace mhflid {

/// Deterministic sub-seed for a named stream of the experiment seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct Federation {
  data::Dataset pool;
  std::vector<ClientState> clients;
  MessengerSnapshot initial;  // server-built messenger broadcast before round 1
};

/// Generates data, partitions it and builds every client with identical messenger replicas.
Federation build_federation(const ExperimentConfig& config);

struct DistillationRow {
  std::uint32_t round;
  int client_id;
  double injection_before, injection_after;
  double kl_before, kl_after;
};

struct RunResult {
  std::vector<MetricsRecord> records;  // every (round, client, split), round 0 = before training
  std::vector<MetricsRecord> finals;   // last-round test record per client
  std::vector<std::vector<double>> cross_eval;  // [model client][data client], acc or Dice
  std::vector<std::pair<std::uint32_t, double>> disentanglement;
  std::vector<DistillationRow> distillation;
  std::vector<std::pair<std::uint32_t, double>> round_ms;
  MessengerSnapshot final_messenger;
};

using Logger = std::function<void(const std::string&)>;

/// Runs the configured method. When `out_dir` is non-empty, writes metrics.csv,
/// summary.json, cross_eval.csv, config.resolved.json, timing.csv and, for
/// MH-pFLID, disentanglement.csv, distillation.csv and checkpoints/.
RunResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir = {},
                         const Logger& log = {});

/// || B B^T - I ||_F on the messenger body's final conv weights ([out x fan-in]).
double messenger_disentanglement(const MessengerSnapshot& snapshot);

/// Six significant digits, "nan" for NaN.
std::string format_value(double v);
std::string metrics_csv(const std::vector<MetricsRecord>& records, bool with_wall_time);

/// Side-by-side per-client finals and "Average" of run directories, with
/// deltas against the first. Throws if a directory or its summary is missing.
std::string compare(const std::vector<std::filesystem::path>& run_dirs);

}  // namespace mhflid
