#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "mhflid/protocol.hpp"

namespace mhflid {

void RoundPlan::validate() const {
  if (rounds == 0 || epochs_injection == 0 || epochs_distillation == 0 || batch_size == 0) {
    throw std::invalid_argument("round plan counts must be positive");
  }
  if (batch_size < 2) throw std::invalid_argument("batch_size must be at least 2 (batch normalization)");
  if (!(lr_injection > 0.0) || !(lr_distillation > 0.0)) throw std::invalid_argument("learning rates must be positive");
}

std::string to_string(Method method) {
  switch (method) {
    case Method::MhPflid:
      return "mhpflid";
    case Method::FedAvg:
      return "fedavg";
    case Method::LocalOnly:
      return "local";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  if (name == "mhpflid") return Method::MhPflid;
  if (name == "fedavg") return Method::FedAvg;
  if (name == "local") return Method::LocalOnly;
  throw std::invalid_argument("unknown method '" + name + "' (expected mhpflid, fedavg or local)");
}

std::size_t worker_count(std::size_t requested, std::size_t clients) {
  std::size_t n = requested;
  if (n == 0) {
    if (const char* env = std::getenv("MHFLID_THREADS")) {
      char* end = nullptr;
      const long v = std::strtol(env, &end, 10);
      if (end != env && v > 0) n = static_cast<std::size_t>(v);
    }
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return std::clamp<std::size_t>(n, 1, std::max<std::size_t>(clients, 1));
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(workers, n); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

RoundResult run_round(std::vector<ClientState>& clients, const ProtocolOptions& options, std::uint32_t round) {
  if (clients.empty()) throw std::invalid_argument("run_round needs clients");
  RoundResult result;
  result.injection.resize(clients.size());
  result.distillation.resize(clients.size());
  std::vector<MessengerSnapshot> uploads(clients.size());
  parallel_for(clients.size(), worker_count(options.threads, clients.size()), [&](std::size_t k) {
    result.injection[k] = injection_stage(clients[k], options);
    result.distillation[k] = distillation_stage(clients[k], options);
    uploads[k] = upload(clients[k], round);
  });
  // Barrier: every upload exists before the server aggregates.
  result.global = aggregate(uploads, options.aggregation, options.switches.aggregate_body, options.switches.aggregate_head);
  result.global.round = round;
  for (auto& c : clients) download(c, result.global, options);
  return result;
}

namespace {

StageLog train_local(ClientState& c, const ProtocolOptions& options) {
  const auto& plan = options.plan;
  StageLog log;
  c.local.set_frozen(false);
  c.local.set_training(true);
  c.injection_opt.set_lr(plan.lr_injection);
  const std::size_t n = c.train_size();
  for (std::size_t epoch = 0; epoch < plan.epochs_injection; ++epoch) {
    double total = 0.0;
    for (const auto& idx : data::epoch_batches(n, plan.batch_size, c.rng)) {
      const auto batch = data::make_batch(c.data.train, idx);
      c.injection_opt.zero_grad();
      const Tensor loss = task_loss(c.local.forward(batch.inputs), batch.labels, c.local.spec().task);
      loss.backward();
      c.injection_opt.step();
      total += loss.item() * static_cast<double>(idx.size());
      ++log.steps;
    }
    log.epoch_loss.push_back(total / static_cast<double>(n));
  }
  return log;
}

void average_local_models(std::vector<ClientState>& clients, AggregationMode mode) {
  for (const auto& c : clients) {
    if (c.local.spec().name != clients.front().local.spec().name ||
        c.local.parameters().size() != clients.front().local.parameters().size()) {
      throw ProtocolError("FedAvg requires every client to share one model spec");
    }
  }
  std::vector<double> weights(clients.size(), 1.0 / static_cast<double>(clients.size()));
  if (mode == AggregationMode::DataWeighted) {
    double total = 0.0;
    for (const auto& c : clients) total += static_cast<double>(c.train_size());
    for (std::size_t k = 0; k < clients.size(); ++k) weights[k] = static_cast<double>(clients[k].train_size()) / total;
  }
  auto& ref = clients.front().local.parameters();
  for (std::size_t p = 0; p < ref.size(); ++p) {
    std::vector<real> avg(ref[p].tensor.numel());
    for (std::size_t j = 0; j < avg.size(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < clients.size(); ++k) acc += weights[k] * clients[k].local.parameters()[p].tensor.data()[j];
      avg[j] = static_cast<real>(acc);
    }
    for (auto& c : clients) {
      auto dst = c.local.parameters()[p].tensor.mutable_data();
      std::copy(avg.begin(), avg.end(), dst.begin());
    }
  }
}

}  // namespace

std::vector<StageLog> baseline_round(std::vector<ClientState>& clients, const ProtocolOptions& options, Method method) {
  if (method == Method::MhPflid) throw std::invalid_argument("baseline_round: not a baseline method");
  std::vector<StageLog> logs(clients.size());
  parallel_for(clients.size(), worker_count(options.threads, clients.size()),
               [&](std::size_t k) { logs[k] = train_local(clients[k], options); });
  if (method == Method::FedAvg) average_local_models(clients, options.aggregation);
  return logs;
}

}  // namespace mhflid
