#include <algorithm>
#include <chrono>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "mhflid/metrics.hpp"
#include "mhflid/protocol.hpp"

namespace mhflid {

void check_pairing(const ModelSpec& local_spec, const ModelSpec& messenger_spec) {
  check_spec(local_spec);
  check_spec(messenger_spec);
  if (local_spec.task != messenger_spec.task) throw DimensionError(local_spec.name + ": task differs from the messenger");
  if (local_spec.num_classes != messenger_spec.num_classes) {
    throw DimensionError(local_spec.name + ": class count differs from the messenger");
  }
  if (local_spec.input_shape[0] != messenger_spec.input_shape[0]) {
    throw DimensionError(local_spec.name + ": input channels differ from the messenger");
  }
  if (local_spec.task == Task::Segmentation) {
    // The transmitter output goes through the messenger's up-sampling head, so
    // both bodies must end on the same grid.
    const auto l = body_output_shape(local_spec), m = body_output_shape(messenger_spec);
    if (l[1] != m[1] || l[2] != m[2]) {
      throw DimensionError(local_spec.name + ": body grid " + std::to_string(l[1]) + "x" + std::to_string(l[2]) +
                           " differs from the messenger grid " + std::to_string(m[1]) + "x" + std::to_string(m[2]));
    }
  }
}

namespace {

OptimizerOptions optimizer_options(const RoundPlan& plan, double lr) {
  OptimizerOptions o;
  o.kind = plan.optimizer;
  o.lr = lr;
  return o;
}

std::vector<Tensor> concat(std::vector<Tensor> a, const std::vector<Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

data::Dataset resized_view(const data::Dataset& ds, const std::array<std::size_t, 3>& shape) {
  const auto s = ds.sample_shape();
  if (s[1] == shape[1] && s[2] == shape[2]) return ds;
  if (ds.task != Task::Classification) throw DimensionError("segmentation inputs must match the messenger input size");
  data::Dataset out = ds;
  out.inputs = data::resize_inputs(ds.inputs, shape[1], shape[2]);
  return out;
}

std::vector<std::size_t> probe_indices(const ClientState& client, std::size_t probe_size) {
  std::vector<std::size_t> idx(std::min(probe_size, client.train_size()));
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

struct Grid {
  std::size_t h, w;
};

Grid body_grid(const Model& m) { return {m.body_output_shape()[1], m.body_output_shape()[2]}; }

// Logits of the messenger head fed by the receiver (injection) path.
Tensor receiver_logits(ClientState& c, const Tensor& local_features, const Tensor& x_messenger,
                       const AblationSwitches& switches) {
  const Tensor tok_l = ops::features_to_tokens(local_features);
  const Tensor tok_m = ops::features_to_tokens(c.messenger.forward_body(x_messenger));
  const Tensor fused = switches.use_receiver ? c.receiver.forward(tok_l, tok_m).output : c.receiver.feature_add(tok_l, tok_m);
  const auto g = body_grid(c.messenger);
  return c.messenger.forward_head_tokens(fused, g.h, g.w);
}

// Logits of the messenger head fed by the transmitter (distillation) path.
Tensor transmitter_logits(ClientState& c, const Tensor& local_features, const Tensor& x_messenger,
                          const AblationSwitches& switches) {
  const Tensor tok_l = ops::features_to_tokens(local_features);
  const Tensor tok_m = ops::features_to_tokens(c.messenger.forward_body(x_messenger));
  const Tensor fused =
      switches.use_transmitter ? c.transmitter.forward(tok_l, tok_m).output : c.transmitter.feature_add(tok_l, tok_m);
  const auto g = body_grid(c.local);
  return c.messenger.forward_head_tokens(fused, g.h, g.w);
}

bool same_values(const std::vector<std::vector<real>>& a, const std::vector<std::vector<real>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size() || std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(real)) != 0) {
      return false;
    }
  }
  return true;
}

// Sets modes and freeze flags for a stage; restores training mode on exit.
struct StageModes {
  Model& trained;
  Model& frozen;
  StageModes(Model& t, Model& f) : trained(t), frozen(f) {
    frozen.set_frozen(true);
    frozen.set_training(false);
    trained.set_frozen(false);
    trained.set_training(true);
  }
  ~StageModes() {
    frozen.set_frozen(false);
    frozen.set_training(true);
  }
};

}  // namespace

ClientState make_client(int id, const ModelSpec& local_spec, Model messenger, data::ClientData data,
                        const RoundPlan& plan, std::uint64_t seed) {
  check_pairing(local_spec, messenger.spec());
  if (data.train.size() == 0) throw std::invalid_argument("client " + std::to_string(id) + ": empty training partition");
  std::mt19937_64 seeder(seed);
  Model local = Model::build(local_spec, seeder());
  const auto local_dim = local.body_output_shape()[0];
  const auto messenger_dim = messenger.body_output_shape()[0];
  Fusion receiver = Fusion::build(FusionRole::Receiver, local_dim, messenger_dim, seeder());
  Fusion transmitter = Fusion::build(FusionRole::Transmitter, local_dim, messenger_dim, seeder());
  data::Dataset messenger_train = resized_view(data.train, messenger.spec().input_shape);
  Optimizer injection(concat(local.trainable_tensors(), receiver.trainable_tensors()),
                      optimizer_options(plan, plan.lr_injection));
  Optimizer distillation(concat(messenger.trainable_tensors(), transmitter.trainable_tensors()),
                         optimizer_options(plan, plan.lr_distillation));
  std::mt19937_64 rng(seeder());
  return ClientState{id,
                     std::move(local),
                     std::move(receiver),
                     std::move(transmitter),
                     std::move(messenger),
                     std::move(data),
                     std::move(messenger_train),
                     std::move(injection),
                     std::move(distillation),
                     rng};
}

ObjectiveTerms injection_terms(ClientState& c, const data::Batch& local_batch, const data::Batch& messenger_batch,
                               const ProtocolOptions& options) {
  NoGradGuard guard;
  const bool lt = c.local.training(), mt = c.messenger.training();
  c.local.set_training(false);
  c.messenger.set_training(false);
  const Tensor feat = c.local.forward_body(local_batch.inputs);
  const Tensor logits_l = c.local.forward_head(feat);
  const Tensor logits_m = receiver_logits(c, feat, messenger_batch.inputs, options.switches);
  auto terms = injection_objective(logits_l, logits_m, local_batch.labels, c.local.spec().task, options.weights);
  c.local.set_training(lt);
  c.messenger.set_training(mt);
  return terms;
}

ObjectiveTerms distillation_terms(ClientState& c, const data::Batch& local_batch, const data::Batch& messenger_batch,
                                  const ProtocolOptions& options) {
  NoGradGuard guard;
  const bool lt = c.local.training(), mt = c.messenger.training();
  c.local.set_training(false);
  c.messenger.set_training(false);
  const Tensor feat = c.local.forward_body(local_batch.inputs);
  const Tensor logits_l = c.local.forward_head(feat);
  const Tensor logits_m = transmitter_logits(c, feat, messenger_batch.inputs, options.switches);
  auto terms = distillation_objective(logits_m, logits_l, local_batch.labels, c.local.spec().task, options.weights,
                                      options.kl_variant);
  c.local.set_training(lt);
  c.messenger.set_training(mt);
  return terms;
}

StageLog injection_stage(ClientState& c, const ProtocolOptions& options) {
  const auto& plan = options.plan;
  const auto task = c.local.spec().task;
  const auto probe = probe_indices(c, options.probe_size);
  const auto probe_l = data::make_batch(c.data.train, probe), probe_m = data::make_batch(c.messenger_train, probe);
  const auto messenger_before = c.messenger.values();

  StageLog log;
  log.probe_before = injection_terms(c, probe_l, probe_m, options).total.item();
  {
    StageModes modes(c.local, c.messenger);
    c.receiver.set_frozen(false);
    c.transmitter.set_frozen(true);
    c.injection_opt.set_lr(plan.lr_injection);
    for (std::size_t epoch = 0; epoch < plan.epochs_injection; ++epoch) {
      double total = 0.0;
      std::size_t seen = 0;
      for (const auto& idx : data::epoch_batches(c.train_size(), plan.batch_size, c.rng)) {
        const auto bl = data::make_batch(c.data.train, idx), bm = data::make_batch(c.messenger_train, idx);
        c.injection_opt.zero_grad();
        const Tensor feat = c.local.forward_body(bl.inputs);
        const Tensor logits_l = c.local.forward_head(feat);
        const Tensor logits_m = receiver_logits(c, feat, bm.inputs, options.switches);
        const auto terms = injection_objective(logits_l, logits_m, bl.labels, task, options.weights);
        terms.total.backward();
        c.injection_opt.step();
        total += terms.total.item() * static_cast<double>(idx.size());
        seen += idx.size();
        ++log.steps;
      }
      log.epoch_loss.push_back(total / static_cast<double>(seen));
    }
    c.transmitter.set_frozen(false);
  }
  log.probe_after = injection_terms(c, probe_l, probe_m, options).total.item();
  if (!same_values(messenger_before, c.messenger.values())) {
    throw std::logic_error("client " + std::to_string(c.id) + ": messenger changed during injection");
  }
  return log;
}

StageLog distillation_stage(ClientState& c, const ProtocolOptions& options) {
  const auto& plan = options.plan;
  const auto task = c.local.spec().task;
  const auto probe = probe_indices(c, options.probe_size);
  const auto probe_l = data::make_batch(c.data.train, probe), probe_m = data::make_batch(c.messenger_train, probe);
  const auto local_before = c.local.values();

  StageLog log;
  log.probe_before = distillation_terms(c, probe_l, probe_m, options).second.item();
  {
    StageModes modes(c.messenger, c.local);
    c.receiver.set_frozen(true);
    c.transmitter.set_frozen(false);
    c.distillation_opt.set_lr(plan.lr_distillation);
    for (std::size_t epoch = 0; epoch < plan.epochs_distillation; ++epoch) {
      double total = 0.0;
      std::size_t seen = 0;
      for (const auto& idx : data::epoch_batches(c.train_size(), plan.batch_size, c.rng)) {
        const auto bl = data::make_batch(c.data.train, idx), bm = data::make_batch(c.messenger_train, idx);
        c.distillation_opt.zero_grad();
        Tensor feat, logits_l;
        {
          NoGradGuard guard;
          feat = c.local.forward_body(bl.inputs);
          logits_l = c.local.forward_head(feat);
        }
        const Tensor logits_m = transmitter_logits(c, feat, bm.inputs, options.switches);
        const auto terms =
            distillation_objective(logits_m, logits_l, bl.labels, task, options.weights, options.kl_variant);
        terms.total.backward();
        c.distillation_opt.step();
        total += terms.total.item() * static_cast<double>(idx.size());
        seen += idx.size();
        ++log.steps;
      }
      log.epoch_loss.push_back(total / static_cast<double>(seen));
    }
    c.receiver.set_frozen(false);
  }
  log.probe_after = distillation_terms(c, probe_l, probe_m, options).second.item();
  if (!same_values(local_before, c.local.values())) {
    throw std::logic_error("client " + std::to_string(c.id) + ": local model changed during distillation");
  }
  return log;
}

MessengerSnapshot upload(const ClientState& c, std::uint32_t round) {
  auto s = take_snapshot(c.messenger, round, c.id, c.train_size());
  for (const auto& e : s.entries) {
    if (e.name.rfind(kMessengerPrefix, 0) != 0) throw std::logic_error("upload would leak parameter " + e.name);
  }
  return s;
}

void download(ClientState& c, const MessengerSnapshot& snapshot, const ProtocolOptions& options) {
  load_snapshot(c.messenger, snapshot, options.switches.aggregate_body, options.switches.aggregate_head);
  if (options.plan.reset_messenger_optimizer) c.distillation_opt.reset_state();
}

MetricsRecord evaluate(ClientState& c, Split split, const ClientState* foreign) {
  const auto start = std::chrono::steady_clock::now();
  const ClientState& owner = foreign ? *foreign : c;
  const data::Dataset& ds = split == Split::Train ? owner.data.train : owner.data.test;
  const auto& spec = c.local.spec();
  if (ds.size() == 0) throw std::invalid_argument("evaluate: empty partition");
  if (ds.task != spec.task || ds.num_classes != spec.num_classes) throw std::invalid_argument("evaluate: task mismatch");

  NoGradGuard guard;
  const bool was_training = c.local.training();
  c.local.set_training(false);
  constexpr std::size_t kChunk = 64;
  double loss = 0.0;
  std::vector<int> preds, labels;
  for (std::size_t begin = 0; begin < ds.size(); begin += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, ds.size() - begin));
    std::iota(idx.begin(), idx.end(), begin);
    auto batch = data::make_batch(ds, idx);
    const Tensor x = data::resize_inputs(batch.inputs, spec.input_shape[1], spec.input_shape[2]);
    const Tensor logits = c.local.forward(x);
    loss += task_loss(logits, batch.labels, spec.task).item() * static_cast<double>(idx.size());
    const auto p = metrics::argmax_classes(logits);
    preds.insert(preds.end(), p.begin(), p.end());
    labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
  }
  c.local.set_training(was_training);

  MetricsRecord r;
  r.client_id = c.id;
  r.split = split == Split::Train ? "train" : "test";
  r.loss = loss / static_cast<double>(ds.size());
  const metrics::ConfusionMatrix cm(preds, labels, spec.num_classes);
  r.acc = cm.accuracy();
  r.mf1 = cm.macro_f1();
  if (spec.task == Task::Segmentation) r.dice = metrics::mean_dice(preds, labels, ds.size(), spec.num_classes);
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace mhflid
