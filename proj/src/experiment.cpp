#include "mhflid/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mhflid/metrics.hpp"

namespace mhflid {

using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + stream * 0xBF58476D1CE4E5B9ULL + 0x94D049BB133111EBULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

enum Stream : std::uint64_t { kData = 1, kPartition = 2, kMessenger = 3, kClient = 100 };

}  // namespace

Federation build_federation(const ExperimentConfig& config) {
  Federation f;
  const auto& d = config.data;
  if (config.task == Task::Classification) {
    f.pool = data::gen_classification(d.num_classes, d.samples, d.image_size, derive_seed(config.seed, kData),
                                      {d.channels, d.noise});
  } else {
    f.pool = data::gen_segmentation(d.samples, d.image_size, derive_seed(config.seed, kData), d.channels);
  }
  std::vector<data::ClientData> parts;
  if (config.partition.kind == PartitionKind::Dirichlet) {
    data::DirichletOptions opts;
    opts.train_fraction = config.partition.train_fraction;
    opts.min_per_split = config.protocol.plan.batch_size;
    parts = data::materialize(f.pool, data::dirichlet_partition(f.pool, config.clients.size(), config.partition.alpha,
                                                                derive_seed(config.seed, kPartition), opts));
  } else {
    parts = data::resolution_partition(f.pool, config.partition.factors, derive_seed(config.seed, kPartition),
                                       config.partition.train_fraction);
  }

  const auto ms = messenger_spec(config);
  Model server = Model::build(ms, derive_seed(config.seed, kMessenger));
  f.initial = take_snapshot(server, 0, -1, 0);
  for (std::size_t k = 0; k < config.clients.size(); ++k) {
    Model replica = Model::build(ms, derive_seed(config.seed, kMessenger));
    load_snapshot(replica, f.initial);
    f.clients.push_back(make_client(static_cast<int>(k), client_spec(config, k), std::move(replica), std::move(parts[k]),
                                    config.protocol.plan, derive_seed(config.seed, kClient + k)));
  }
  return f;
}

double messenger_disentanglement(const MessengerSnapshot& snapshot) {
  const SnapshotEntry* last = nullptr;
  for (const auto& e : snapshot.entries) {
    if (e.name.rfind("messenger.body.", 0) == 0 && e.shape.size() == 4) last = &e;
  }
  if (!last) throw ProtocolError("messenger snapshot has no body conv weights");
  const std::size_t rows = last->shape[0], cols = last->data.size() / rows;
  const std::vector<double> b(last->data.begin(), last->data.end());
  return metrics::disentanglement(b, rows, cols);
}

std::string format_value(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string metrics_csv(const std::vector<MetricsRecord>& records, bool with_wall_time) {
  std::ostringstream os;
  os << "round,client_id,split,loss,acc,mf1,dice,wall_ms\n";
  for (const auto& r : records) {
    os << r.round << ',' << r.client_id << ',' << r.split << ',' << format_value(r.loss) << ',' << format_value(r.acc)
       << ',' << format_value(r.mf1) << ',' << format_value(r.dice) << ','
       << format_value(with_wall_time ? r.wall_ms : 0.0) << '\n';
  }
  return os.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

json nullable(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

json summary_json(const ExperimentConfig& config, const RunResult& r) {
  json clients = json::array();
  double loss = 0, acc = 0, mf1 = 0, dice = 0;
  for (const auto& f : r.finals) {
    clients.push_back({{"client_id", f.client_id},
                       {"model", config.clients[static_cast<std::size_t>(f.client_id)].model},
                       {"loss", f.loss},
                       {"acc", f.acc},
                       {"mf1", f.mf1},
                       {"dice", nullable(f.dice)}});
    loss += f.loss;
    acc += f.acc;
    mf1 += f.mf1;
    dice += f.dice;
  }
  const double n = static_cast<double>(r.finals.size());
  return json{{"name", config.name},
              {"method", to_string(config.method)},
              {"task", to_string(config.task)},
              {"seed", config.seed},
              {"rounds", config.protocol.plan.rounds},
              {"cross_eval_metric", config.task == Task::Classification ? "acc" : "dice"},
              {"clients", clients},
              {"average", {{"loss", loss / n}, {"acc", acc / n}, {"mf1", mf1 / n}, {"dice", nullable(dice / n)}}}};
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir, const Logger& log) {
  const bool write = !out_dir.empty();
  if (write) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "config.resolved.json", to_json(config).dump(2) + "\n");
  }
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };

  Federation fed = build_federation(config);
  auto& clients = fed.clients;
  const bool mh = config.method == Method::MhPflid;
  const auto& plan = config.protocol.plan;
  RunResult result;
  result.final_messenger = fed.initial;

  auto eval_round = [&](std::uint32_t round) {
    for (auto& c : clients) {
      for (auto split : {Split::Train, Split::Test}) {
        auto rec = evaluate(c, split);
        rec.round = round;
        result.records.push_back(rec);
      }
    }
  };
  eval_round(0);
  if (mh) result.disentanglement.emplace_back(0, messenger_disentanglement(fed.initial));
  if (write && mh) std::filesystem::create_directories(out_dir / "checkpoints");

  for (std::uint32_t round = 1; round <= plan.rounds; ++round) {
    const auto start = std::chrono::steady_clock::now();
    if (mh) {
      auto rr = run_round(clients, config.protocol, round);
      for (std::size_t k = 0; k < clients.size(); ++k) {
        result.distillation.push_back({round, clients[k].id, rr.injection[k].probe_before, rr.injection[k].probe_after,
                                       rr.distillation[k].probe_before, rr.distillation[k].probe_after});
      }
      result.disentanglement.emplace_back(round, messenger_disentanglement(rr.global));
      result.final_messenger = rr.global;
      if (write && (round % std::max<std::size_t>(config.checkpoint_every, 1) == 0 || round == plan.rounds)) {
        char name[48];
        std::snprintf(name, sizeof name, "messenger_r%04u.bin", round);
        save_snapshot(rr.global, out_dir / "checkpoints" / name);
      }
    } else {
      baseline_round(clients, config.protocol, config.method);
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.round_ms.emplace_back(round, ms);
    eval_round(round);

    double acc = 0.0;
    for (auto it = result.records.end() - static_cast<std::ptrdiff_t>(2 * clients.size()); it != result.records.end(); ++it) {
      if (it->split == "test") acc += config.task == Task::Classification ? it->acc : it->dice;
    }
    say("round " + std::to_string(round) + "/" + std::to_string(plan.rounds) + " mean test " +
        (config.task == Task::Classification ? "acc " : "dice ") + format_value(acc / static_cast<double>(clients.size())) +
        " (" + format_value(ms) + " ms)");
  }

  for (const auto& r : result.records) {
    if (r.round == plan.rounds && r.split == "test") result.finals.push_back(r);
  }
  result.cross_eval.assign(clients.size(), std::vector<double>(clients.size()));
  for (std::size_t i = 0; i < clients.size(); ++i) {
    for (std::size_t j = 0; j < clients.size(); ++j) {
      const auto rec = evaluate(clients[i], Split::Test, i == j ? nullptr : &clients[j]);
      result.cross_eval[i][j] = config.task == Task::Classification ? rec.acc : rec.dice;
    }
  }

  if (write) {
    write_text(out_dir / "metrics.csv", metrics_csv(result.records, config.record_wall_time));
    write_text(out_dir / "summary.json", summary_json(config, result).dump(2) + "\n");
    std::ostringstream ce;
    ce << "model_client";
    for (std::size_t j = 0; j < clients.size(); ++j) ce << ',' << j;
    ce << '\n';
    for (std::size_t i = 0; i < clients.size(); ++i) {
      ce << i;
      for (double v : result.cross_eval[i]) ce << ',' << format_value(v);
      ce << '\n';
    }
    write_text(out_dir / "cross_eval.csv", ce.str());
    std::ostringstream tm;
    tm << "round,wall_ms\n";
    for (const auto& [round, ms] : result.round_ms) tm << round << ',' << format_value(ms) << '\n';
    write_text(out_dir / "timing.csv", tm.str());
    if (mh) {
      std::ostringstream de;
      de << "round,e\n";
      for (const auto& [round, e] : result.disentanglement) de << round << ',' << format_value(e) << '\n';
      write_text(out_dir / "disentanglement.csv", de.str());
      std::ostringstream di;
      di << "round,client_id,injection_before,injection_after,kl_before,kl_after\n";
      for (const auto& r : result.distillation) {
        di << r.round << ',' << r.client_id << ',' << format_value(r.injection_before) << ','
           << format_value(r.injection_after) << ',' << format_value(r.kl_before) << ',' << format_value(r.kl_after)
           << '\n';
      }
      write_text(out_dir / "distillation.csv", di.str());
    }
  }
  return result;
}

}  // namespace mhflid
