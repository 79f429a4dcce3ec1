// One PASS/FAIL line per acceptance criterion. Exit status is non-zero if any criterion fails.
// Usage: acceptance [config.json]   (default: configs/default.json)
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>

#include "mhflid/experiment.hpp"

using namespace mhflid;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::printf("%s %2d %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Runs a test binary quietly; returns true on exit status 0.
bool run_suite(const std::string& bin, double& secs) {
  const auto t = Clock::now();
  const int status = std::system(("\"" + bin + "\" > /dev/null 2>&1").c_str());
  secs = seconds_since(t);
  return WIFEXITED(status) && WEXITSTATUS(status) == 0;
}

bool same_values(const std::vector<std::vector<real>>& a, const std::vector<std::vector<real>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size() || std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(real)) != 0) return false;
  }
  return true;
}

double mean_acc(const RunResult& r) {
  double s = 0;
  for (const auto& f : r.finals) s += f.acc;
  return s / double(r.finals.size());
}

void freeze_discipline(const ExperimentConfig& base) {
  auto config = base;
  config.protocol.plan.rounds = 3;
  auto fed = build_federation(config);
  std::size_t stages = 0, violations = 0, leaks = 0;
  for (std::uint32_t round = 1; round <= 3; ++round) {
    std::vector<MessengerSnapshot> uploads;
    for (auto& c : fed.clients) {
      const auto messenger_before = c.messenger.values();
      injection_stage(c, config.protocol);
      violations += !same_values(messenger_before, c.messenger.values());
      const auto local_before = c.local.values();
      distillation_stage(c, config.protocol);
      violations += !same_values(local_before, c.local.values());
      stages += 2;
      uploads.push_back(upload(c, round));
      for (const auto& e : uploads.back().entries) {
        leaks += e.name.rfind("messenger.", 0) != 0 || e.name.find("fusion") != std::string::npos ||
                 e.name.find("local") != std::string::npos;
      }
    }
    auto global = aggregate(uploads, config.protocol.aggregation);
    for (auto& c : fed.clients) download(c, global, config.protocol);
  }
  report(5, "protocol freeze discipline", violations == 0 && leaks == 0,
         std::to_string(stages) + " stages over 3 rounds, " + std::to_string(violations) + " frozen-model changes, " +
             std::to_string(leaks) + " non-messenger upload names");
}

void aggregation(const ExperimentConfig& config) {
  Model m = Model::build(messenger_spec(config), 17);
  const auto s = take_snapshot(m, 3, 0, 100);
  std::vector<MessengerSnapshot> copies(config.clients.size(), s);
  double worst = 0;
  for (auto mode : {AggregationMode::Uniform, AggregationMode::DataWeighted}) {
    const auto agg = aggregate(copies, mode);
    for (std::size_t i = 0; i < s.entries.size(); ++i)
      for (std::size_t j = 0; j < s.entries[i].data.size(); ++j)
        worst = std::max(worst, double(std::abs(agg.entries[i].data[j] - s.entries[i].data[j])));
  }
  auto entry = [](std::vector<float> v, std::uint64_t n) {
    MessengerSnapshot x;
    x.entries.push_back({"messenger.body.0.weight", {v.size()}, std::move(v)});
    x.sample_count = n;
    return x;
  };
  std::vector<MessengerSnapshot> uni{entry({1, 3}, 1), entry({3, 5}, 1)}, wtd{entry({0}, 1), entry({4}, 3)};
  const bool hand = aggregate(uni, AggregationMode::Uniform).entries[0].data == std::vector<float>{2, 4} &&
                    aggregate(wtd, AggregationMode::DataWeighted).entries[0].data == std::vector<float>{3};
  const std::string bytes = encode(s);
  const bool wire = encode(decode(bytes)) == bytes;
  report(6, "aggregation", worst < 1e-7 && hand && wire,
         "identity error " + fmt("%.3g", worst) + ", hand examples " + (hand ? "ok" : "wrong") + ", wire round trip " +
             (wire ? "bit-exact" : "differs"));
}

void lightness() {
  std::size_t configs = 0;
  double worst = 0;
  bool ok = true;
  for (const auto& e : fs::directory_iterator(fs::path(MHFLID_SOURCE_DIR) / "configs")) {
    if (e.path().extension() != ".json") continue;
    auto c = load_config(e.path());
    const double mes = double(Model::build(messenger_spec(c), 0).param_count());
    for (std::size_t k = 0; k < c.clients.size(); ++k) {
      const double ratio = mes / double(Model::build(client_spec(c, k), 0).param_count());
      worst = std::max(worst, ratio);
      ok &= ratio < 0.25;
    }
    ++configs;
  }
  report(10, "messenger lightness", ok && configs > 0,
         std::to_string(configs) + " shipped configs, max messenger/local ratio " + fmt("%.4f", worst));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path config_path = argc > 1 ? fs::path(argv[1]) : fs::path(MHFLID_SOURCE_DIR) / "configs" / "default.json";
  const auto config = load_config(config_path);

  double secs = 0;
  bool ok = run_suite(GRADCHECK_BIN, secs);
  report(1, "autodiff soundness", ok && secs < 30, "finite-difference suite " + std::string(ok ? "passed" : "failed") +
                                                          " in " + fmt("%.1f s", secs));
  ok = run_suite(ORACLES_BIN, secs);
  report(2, "oracle equivalence", ok && secs < 60,
         "loop-oracle suite " + std::string(ok ? "passed" : "failed") + " in " + fmt("%.1f s", secs));
  ok = run_suite(FUSION_BIN, secs);
  report(3, "fusion contracts", ok, "attention suite " + std::string(ok ? "passed" : "failed"));
  ok = run_suite(LOSSES_BIN, secs);
  report(4, "loss and metric identities", ok, "loss/metric suite " + std::string(ok ? "passed" : "failed"));

  freeze_discipline(config);
  aggregation(config);

  // Directional experiments: full, local-only and feature-add runs for three seeds.
  const std::uint64_t seeds[] = {1, 2, 3};
  std::vector<RunResult> full, local, added;
  double full_secs = 0, local_secs = 0;
  const auto out_root = fs::temp_directory_path() / "mhflid_acceptance";
  fs::remove_all(out_root);
  for (auto seed : seeds) {
    auto c = config;
    c.seed = seed;
    auto t = Clock::now();
    full.push_back(run_experiment(c, seed == 1 ? out_root / "full_1" : fs::path()));
    full_secs += seconds_since(t);
    c.method = Method::LocalOnly;
    t = Clock::now();
    local.push_back(run_experiment(c));
    local_secs += seconds_since(t);
    c.method = Method::MhPflid;
    c.protocol.switches.use_receiver = false;
    c.protocol.switches.use_transmitter = false;
    added.push_back(run_experiment(c));
    std::printf("     seed %llu: mhpflid %.4f, local %.4f, feature-add %.4f\n", static_cast<unsigned long long>(seed),
                mean_acc(full.back()), mean_acc(local.back()), mean_acc(added.back()));
    std::fflush(stdout);
  }

  std::size_t lower = 0, pairs = 0;
  for (const auto& r : full) {
    for (const auto& row : r.distillation) {
      if (row.round < 2 || row.round > 10) continue;
      ++pairs;
      lower += row.kl_after < row.kl_before;
    }
  }
  const double frac = pairs ? double(lower) / double(pairs) : 0.0;
  report(7, "distillation efficacy", frac >= 0.9 && full_secs < 600,
         std::to_string(lower) + "/" + std::to_string(pairs) + " stages lowered the probe KL (" + fmt("%.1f%%", 100 * frac) +
             "), runs took " + fmt("%.0f s", full_secs));

  double mh = 0, lo = 0, add = 0, worst_gap = -1;
  for (std::size_t i = 0; i < 3; ++i) {
    mh += mean_acc(full[i]) / 3;
    lo += mean_acc(local[i]) / 3;
    add += mean_acc(added[i]) / 3;
    worst_gap = std::max(worst_gap, mean_acc(local[i]) - mean_acc(full[i]));
  }
  report(8, "end-to-end benefit", mh >= lo && worst_gap <= 0.01 && full_secs + local_secs < 1200,
         "mean acc mhpflid " + fmt("%.4f", mh) + " vs local " + fmt("%.4f", lo) + ", worst per-seed shortfall " +
             fmt("%.4f", std::max(0.0, worst_gap)) + ", " + fmt("%.0f s", full_secs + local_secs));
  report(9, "ablation ordering", add <= mh, "feature-add " + fmt("%.4f", add) + " vs full " + fmt("%.4f", mh));

  lightness();

  auto rerun = run_experiment([&] {
    auto c = config;
    c.seed = 1;
    return c;
  }());
  const bool identical = metrics_csv(rerun.records, false) == metrics_csv(full[0].records, false);
  report(11, "determinism", identical, std::string("metrics.csv of two seed-1 runs ") + (identical ? "identical" : "differ"));

  bool diagonal = fs::exists(out_root / "full_1" / "cross_eval.csv");
  for (std::size_t k = 0; k < full[0].finals.size(); ++k) diagonal &= full[0].cross_eval[k][k] == full[0].finals[k].acc;
  report(12, "generalizability matrix", diagonal,
         std::string("cross_eval.csv written, diagonal ") + (diagonal ? "equals" : "differs from") + " own evaluation");

  fs::remove_all(out_root);
  return failures == 0 ? 0 : 1;
}
