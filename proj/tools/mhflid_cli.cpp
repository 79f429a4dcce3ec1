#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "mhflid/config.hpp"
#include "mhflid/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"MH-pFLID federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir, method;
  std::uint64_t seed = 0;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Run an experiment");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  auto* seed_opt = run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out", out_dir, "Output directory (default: config output_dir)");
  run->add_option("--method", method, "mhpflid, fedavg or local")->check(CLI::IsMember({"mhpflid", "fedavg", "local"}));
  run->add_flag("-q,--quiet", quiet, "No per-round progress");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Check a config without training");
  validate->add_option("--config", validate_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);

  std::vector<std::string> dirs;
  auto* cmp = app.add_subcommand("compare", "Compare finished runs");
  cmp->add_option("dirs", dirs, "Run directories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto config = mhflid::load_config(config_path);
      if (*seed_opt) config.seed = seed;
      if (!method.empty()) {
        auto j = mhflid::to_json(config);
        j["method"] = method;
        config = mhflid::parse_config(j);
      }
      const std::filesystem::path out = out_dir.empty() ? config.output_dir : out_dir;
      config.output_dir = out.string();
      const auto diag = mhflid::validate(config);
      if (!diag.ok) {
        for (const auto& l : diag.lines) std::cerr << l << '\n';
        return 2;
      }
      const auto result = mhflid::run_experiment(config, out, [&](const std::string& line) {
        if (!quiet) std::cerr << line << std::endl;
      });
      double avg = 0.0;
      for (const auto& f : result.finals) avg += config.task == mhflid::Task::Classification ? f.acc : f.dice;
      std::cout << mhflid::to_string(config.method) << " finished: mean test "
                << (config.task == mhflid::Task::Classification ? "acc " : "dice ")
                << mhflid::format_value(avg / static_cast<double>(result.finals.size())) << " -> " << out.string() << '\n';
    } else if (*validate) {
      const auto diag = mhflid::validate(mhflid::load_config(validate_path));
      for (const auto& l : diag.lines) std::cout << l << '\n';
      return diag.ok ? 0 : 2;
    } else if (*cmp) {
      std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
      std::cout << mhflid::compare(paths);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
