#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "mhflid/data.hpp"
#include "mhflid/fusion.hpp"
#include "mhflid/losses.hpp"
#include "mhflid/model.hpp"
#include "mhflid/optim.hpp"
#include "mhflid/snapshot.hpp"

namespace mhflid {

struct RoundPlan {
  std::size_t rounds = 100;
  std::size_t epochs_injection = 4;
  std::size_t epochs_distillation = 1;
  std::size_t batch_size = 8;
  double lr_injection = 1e-4;
  double lr_distillation = 1e-5;
  OptimizerKind optimizer = OptimizerKind::Adam;
  bool reset_messenger_optimizer = false;

  void validate() const;
};

struct AblationSwitches {
  bool aggregate_head = true;
  bool aggregate_body = true;
  bool use_receiver = true;
  bool use_transmitter = true;  // false -> feature-add fallback
};

struct ProtocolOptions {
  RoundPlan plan;
  LossWeights weights;
  AblationSwitches switches;
  AggregationMode aggregation = AggregationMode::Uniform;
  ops::KlVariant kl_variant = ops::KlVariant::Standard;
  std::size_t probe_size = 32;
  /// Worker cap; 0 means MHFLID_THREADS or the hardware count.
  std::size_t threads = 0;
};

struct ClientState {
  int id = 0;
  Model local;
  Fusion receiver;
  Fusion transmitter;
  Model messenger;
  data::ClientData data;
  /// Training inputs resized to the messenger's input shape (shares labels with data.train).
  data::Dataset messenger_train;
  Optimizer injection_opt;     // local body + head, receiver
  Optimizer distillation_opt;  // messenger body + head, transmitter
  std::mt19937_64 rng;

  std::size_t train_size() const { return data.train.size(); }
};

/// Builds a client around an already constructed messenger replica.
ClientState make_client(int id, const ModelSpec& local_spec, Model messenger, data::ClientData data,
                        const RoundPlan& plan, std::uint64_t seed);

/// Checks that a local spec can be fused with the messenger spec.
void check_pairing(const ModelSpec& local_spec, const ModelSpec& messenger_spec);

struct StageLog {
  std::vector<double> epoch_loss;  // mean total objective per epoch
  std::size_t steps = 0;
  /// Objective on the probe batch (injection: total; distillation: KL term), eval mode.
  double probe_before = std::numeric_limits<double>::quiet_NaN();
  double probe_after = std::numeric_limits<double>::quiet_NaN();
};

/// Step 1: messenger frozen; trains local body, head and receiver on the injection objective.
StageLog injection_stage(ClientState& client, const ProtocolOptions& options);
/// Step 2: local model frozen; trains messenger and transmitter on the distillation objective.
StageLog distillation_stage(ClientState& client, const ProtocolOptions& options);

/// Objectives on one batch in eval mode without recording a graph.
ObjectiveTerms injection_terms(ClientState& client, const data::Batch& local_batch, const data::Batch& messenger_batch,
                               const ProtocolOptions& options);
ObjectiveTerms distillation_terms(ClientState& client, const data::Batch& local_batch,
                                  const data::Batch& messenger_batch, const ProtocolOptions& options);

/// Step 3.
MessengerSnapshot upload(const ClientState& client, std::uint32_t round);
/// Step 5. Parts whose aggregation is switched off keep the client's own values.
void download(ClientState& client, const MessengerSnapshot& snapshot, const ProtocolOptions& options);

struct RoundResult {
  std::vector<StageLog> injection;
  std::vector<StageLog> distillation;
  MessengerSnapshot global;
};

/// Steps 1-5 for every client. Stages run concurrently across clients;
/// aggregation waits for all uploads.
RoundResult run_round(std::vector<ClientState>& clients, const ProtocolOptions& options, std::uint32_t round);

/// One round of a baseline: each client trains its local model for
/// epochs_injection epochs on the task loss (the local-model update budget of
/// MH-pFLID); FedAvg then
/// averages all local parameters into every client.
enum class Method { MhPflid, FedAvg, LocalOnly };
std::string to_string(Method method);
Method method_from_string(const std::string& name);
std::vector<StageLog> baseline_round(std::vector<ClientState>& clients, const ProtocolOptions& options, Method method);

struct MetricsRecord {
  std::uint32_t round = 0;
  int client_id = 0;
  std::string split;
  double loss = 0.0;
  double acc = 0.0;
  double mf1 = 0.0;
  double dice = std::numeric_limits<double>::quiet_NaN();  // segmentation only
  double wall_ms = 0.0;
};

enum class Split { Train, Test };

/// Local model only. With `foreign`, evaluates this client's model on the
/// foreign client's partition, resized to this model's input shape.
MetricsRecord evaluate(ClientState& client, Split split, const ClientState* foreign = nullptr);

/// Worker count used by run_round.
std::size_t worker_count(std::size_t requested, std::size_t clients);

/// Runs fn(i) for i in [0, n) on at most `workers` threads; rethrows the first failure.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace mhflid
