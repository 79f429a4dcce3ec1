#include "mhflid/config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <stdexcept>

namespace mhflid {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw std::invalid_argument(where + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config key '") + key + "': " + e.what());
  }
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

ops::KlVariant kl_from_string(const std::string& s) {
  if (s == "standard") return ops::KlVariant::Standard;
  if (s == "appendix") return ops::KlVariant::Appendix;
  throw std::invalid_argument("unknown kl_variant '" + s + "'");
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  check_keys(j, "config",
             {"name", "task", "method", "seed", "output_dir", "data", "partitioner", "clients", "messenger", "plan",
              "loss_weights", "ablation", "aggregation", "kl_variant", "probe_size", "threads", "checkpoint_every",
              "record_wall_time"});
  ExperimentConfig c;
  read(j, "name", c.name);
  if (j.contains("task")) c.task = task_from_string(j.at("task").get<std::string>());
  if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
  read(j, "seed", c.seed);
  read(j, "output_dir", c.output_dir);
  c.messenger = zoo::MessengerWidths::defaults(c.task);
  if (c.task == Task::Segmentation) c.data.num_classes = 2;

  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, "data", {"num_classes", "samples", "image_size", "channels", "noise"});
    read(d, "num_classes", c.data.num_classes);
    read(d, "samples", c.data.samples);
    read(d, "image_size", c.data.image_size);
    read(d, "channels", c.data.channels);
    read(d, "noise", c.data.noise);
  }
  if (j.contains("partitioner")) {
    const auto& p = j.at("partitioner");
    check_keys(p, "partitioner", {"kind", "alpha", "factors", "train_fraction"});
    const auto kind = p.value("kind", std::string("dirichlet"));
    if (kind == "dirichlet") {
      c.partition.kind = PartitionKind::Dirichlet;
    } else if (kind == "resolution") {
      c.partition.kind = PartitionKind::Resolution;
      c.partition.train_fraction = 0.7;
    } else {
      throw std::invalid_argument("partitioner: unknown kind '" + kind + "'");
    }
    read(p, "alpha", c.partition.alpha);
    read(p, "factors", c.partition.factors);
    read(p, "train_fraction", c.partition.train_fraction);
  }
  if (j.contains("clients")) {
    const auto& list = j.at("clients");
    if (!list.is_array()) throw std::invalid_argument("clients: expected an array");
    for (const auto& e : list) {
      check_keys(e, "clients[]", {"model", "widths", "hidden"});
      ClientConfig cc;
      if (!e.contains("model")) throw std::invalid_argument("clients[]: missing 'model'");
      read(e, "model", cc.model);
      read(e, "widths", cc.options.widths);
      read(e, "hidden", cc.options.hidden);
      c.clients.push_back(cc);
    }
  }
  if (j.contains("messenger")) {
    const auto& m = j.at("messenger");
    check_keys(m, "messenger", {"conv", "head"});
    read(m, "conv", c.messenger.conv);
    read(m, "head", c.messenger.head);
  }
  auto& plan = c.protocol.plan;
  if (j.contains("plan")) {
    const auto& p = j.at("plan");
    check_keys(p, "plan",
               {"rounds", "epochs_injection", "epochs_distillation", "batch_size", "lr_injection", "lr_distillation",
                "optimizer", "reset_messenger_optimizer"});
    read(p, "rounds", plan.rounds);
    read(p, "epochs_injection", plan.epochs_injection);
    read(p, "epochs_distillation", plan.epochs_distillation);
    read(p, "batch_size", plan.batch_size);
    read(p, "lr_injection", plan.lr_injection);
    read(p, "lr_distillation", plan.lr_distillation);
    if (p.contains("optimizer")) plan.optimizer = optimizer_from_string(p.at("optimizer").get<std::string>());
    read(p, "reset_messenger_optimizer", plan.reset_messenger_optimizer);
  }
  auto& w = c.protocol.weights;
  if (j.contains("loss_weights")) {
    const auto& l = j.at("loss_weights");
    check_keys(l, "loss_weights",
               {"local_injection", "messenger_injection", "messenger_distillation", "consistency_distillation"});
    read(l, "local_injection", w.local_injection);
    read(l, "messenger_injection", w.messenger_injection);
    read(l, "messenger_distillation", w.messenger_distillation);
    read(l, "consistency_distillation", w.consistency_distillation);
  }
  auto& sw = c.protocol.switches;
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    check_keys(a, "ablation", {"aggregate_head", "aggregate_body", "use_receiver", "use_transmitter"});
    read(a, "aggregate_head", sw.aggregate_head);
    read(a, "aggregate_body", sw.aggregate_body);
    read(a, "use_receiver", sw.use_receiver);
    read(a, "use_transmitter", sw.use_transmitter);
  }
  if (j.contains("aggregation")) c.protocol.aggregation = aggregation_mode_from_string(j.at("aggregation").get<std::string>());
  if (j.contains("kl_variant")) c.protocol.kl_variant = kl_from_string(j.at("kl_variant").get<std::string>());
  read(j, "probe_size", c.protocol.probe_size);
  read(j, "threads", c.protocol.threads);
  read(j, "checkpoint_every", c.checkpoint_every);
  read(j, "record_wall_time", c.record_wall_time);

  // Structural checks that need no allocation.
  plan.validate();
  w.validate();
  if (c.clients.empty()) throw std::invalid_argument("config: at least one client is required");
  if (c.data.num_classes < 2) throw std::invalid_argument("data.num_classes must be at least 2");
  if (c.data.samples == 0 || c.data.channels == 0 || c.data.image_size == 0) {
    throw std::invalid_argument("data sizes must be positive");
  }
  if (!(c.data.noise >= 0.0)) throw std::invalid_argument("data.noise must be non-negative");
  if (!(c.partition.train_fraction > 0.0 && c.partition.train_fraction < 1.0)) {
    throw std::invalid_argument("partitioner.train_fraction must be in (0, 1)");
  }
  if (c.protocol.probe_size < 2) throw std::invalid_argument("probe_size must be at least 2");
  if (c.task == Task::Segmentation) {
    if (c.data.num_classes != 2) throw std::invalid_argument("segmentation data is binary (num_classes = 2)");
    if (c.partition.kind != PartitionKind::Dirichlet) {
      throw std::invalid_argument("resolution partitioning supports classification only");
    }
  }
  if (c.partition.kind == PartitionKind::Dirichlet) {
    if (!(c.partition.alpha > 0.0)) throw std::invalid_argument("partitioner.alpha must be positive");
  } else {
    if (c.partition.factors.size() != c.clients.size()) {
      throw std::invalid_argument("resolution partitioner needs one factor per client");
    }
    for (auto f : c.partition.factors) {
      if (f == 0 || c.data.image_size % f != 0) {
        throw std::invalid_argument("resolution factor " + std::to_string(f) + " does not divide image_size");
      }
    }
  }
  if (c.method == Method::FedAvg) {
    for (const auto& cc : c.clients) {
      if (cc.model != c.clients.front().model || cc.options.widths != c.clients.front().options.widths ||
          cc.options.hidden != c.clients.front().options.hidden) {
        throw std::invalid_argument("fedavg requires every client to use the same model");
      }
    }
    if (c.partition.kind == PartitionKind::Resolution) throw std::invalid_argument("fedavg needs equal input sizes");
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
  json clients = json::array();
  for (const auto& cc : c.clients) {
    json e{{"model", cc.model}};
    if (!cc.options.widths.empty()) e["widths"] = cc.options.widths;
    if (cc.options.hidden) e["hidden"] = cc.options.hidden;
    clients.push_back(e);
  }
  json partitioner{{"kind", c.partition.kind == PartitionKind::Dirichlet ? "dirichlet" : "resolution"},
                   {"train_fraction", c.partition.train_fraction}};
  if (c.partition.kind == PartitionKind::Dirichlet) {
    partitioner["alpha"] = c.partition.alpha;
  } else {
    partitioner["factors"] = c.partition.factors;
  }
  const auto& p = c.protocol;
  return json{
      {"name", c.name},
      {"task", to_string(c.task)},
      {"method", to_string(c.method)},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"data",
       {{"num_classes", c.data.num_classes},
        {"samples", c.data.samples},
        {"image_size", c.data.image_size},
        {"channels", c.data.channels},
        {"noise", c.data.noise}}},
      {"partitioner", partitioner},
      {"clients", clients},
      {"messenger", {{"conv", c.messenger.conv}, {"head", c.messenger.head}}},
      {"plan",
       {{"rounds", p.plan.rounds},
        {"epochs_injection", p.plan.epochs_injection},
        {"epochs_distillation", p.plan.epochs_distillation},
        {"batch_size", p.plan.batch_size},
        {"lr_injection", p.plan.lr_injection},
        {"lr_distillation", p.plan.lr_distillation},
        {"optimizer", p.plan.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
        {"reset_messenger_optimizer", p.plan.reset_messenger_optimizer}}},
      {"loss_weights",
       {{"local_injection", p.weights.local_injection},
        {"messenger_injection", p.weights.messenger_injection},
        {"messenger_distillation", p.weights.messenger_distillation},
        {"consistency_distillation", p.weights.consistency_distillation}}},
      {"ablation",
       {{"aggregate_head", p.switches.aggregate_head},
        {"aggregate_body", p.switches.aggregate_body},
        {"use_receiver", p.switches.use_receiver},
        {"use_transmitter", p.switches.use_transmitter}}},
      {"aggregation", to_string(p.aggregation)},
      {"kl_variant", p.kl_variant == ops::KlVariant::Standard ? "standard" : "appendix"},
      {"probe_size", p.probe_size},
      {"threads", p.threads},
      {"checkpoint_every", c.checkpoint_every},
      {"record_wall_time", c.record_wall_time},
  };
}

std::array<std::size_t, 3> client_input_shape(const ExperimentConfig& c, std::size_t client) {
  std::size_t side = c.data.image_size;
  if (c.partition.kind == PartitionKind::Resolution) side /= c.partition.factors.at(client);
  return {c.data.channels, side, side};
}

ModelSpec client_spec(const ExperimentConfig& c, std::size_t client) {
  const auto& cc = c.clients.at(client);
  return zoo::family_spec(cc.model, c.task, client_input_shape(c, client), c.data.num_classes, cc.options);
}

ModelSpec messenger_spec(const ExperimentConfig& c) {
  return zoo::messenger_spec(c.task, {c.data.channels, c.data.image_size, c.data.image_size}, c.data.num_classes,
                             c.messenger);
}

Diagnostics validate(const ExperimentConfig& c) {
  Diagnostics d;
  auto fail = [&](const std::string& msg) {
    d.ok = false;
    d.lines.push_back("FAIL " + msg);
  };
  std::size_t messenger_params = 0;
  try {
    const auto ms = messenger_spec(c);
    check_spec(ms);
    messenger_params = Model::build(ms, 0).param_count();
    d.lines.push_back("ok   messenger " + ms.name + " params=" + std::to_string(messenger_params));
  } catch (const std::exception& e) {
    fail(std::string("messenger: ") + e.what());
    return d;
  }
  const auto ms = messenger_spec(c);
  std::size_t min_local = SIZE_MAX;
  for (std::size_t k = 0; k < c.clients.size(); ++k) {
    try {
      const auto spec = client_spec(c, k);
      check_pairing(spec, ms);
      auto model = Model::build(spec, 0);
      // End-to-end forward on the declared input shape.
      NoGradGuard guard;
      const auto in = spec.input_shape;
      const Tensor out = model.forward(Tensor::zeros({2, in[0], in[1], in[2]}));
      const std::size_t params = model.param_count();
      min_local = std::min(min_local, params);
      d.lines.push_back("ok   client " + std::to_string(k) + " " + spec.name + " input=" +
                        shape_str({in[0], in[1], in[2]}) + " output=" + shape_str(out.shape()) +
                        " params=" + std::to_string(params));
    } catch (const std::exception& e) {
      fail("client " + std::to_string(k) + ": " + e.what());
    }
  }
  if (min_local != SIZE_MAX) {
    const double ratio = static_cast<double>(messenger_params) / static_cast<double>(min_local);
    const std::string msg = "messenger/min-local parameter ratio " + std::to_string(ratio) + " (bound 0.25)";
    if (ratio < 0.25) {
      d.lines.push_back("ok   " + msg);
    } else {
      fail(msg);
    }
  }
  return d;
}

}  // namespace mhflid
