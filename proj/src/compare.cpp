#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "mhflid/experiment.hpp"

namespace mhflid {

using nlohmann::json;

namespace {

json read_summary(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("run directory not found: " + dir.string());
  std::ifstream is(dir / "summary.json");
  if (!is) throw std::runtime_error("missing summary.json in " + dir.string());
  return json::parse(is);
}

std::string cell(const json& v) {
  if (v.is_null()) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v.get<double>();
  return os.str();
}

}  // namespace

std::string compare(const std::vector<std::filesystem::path>& run_dirs) {
  if (run_dirs.empty()) throw std::invalid_argument("compare needs at least one run directory");
  std::vector<json> summaries;
  for (const auto& d : run_dirs) summaries.push_back(read_summary(d));
  const std::size_t clients = summaries.front().at("clients").size();
  for (std::size_t i = 1; i < summaries.size(); ++i) {
    if (summaries[i].at("clients").size() != clients) {
      throw std::invalid_argument("runs have different client counts: " + run_dirs[0].string() + " vs " +
                                  run_dirs[i].string());
    }
  }
  const bool seg = summaries.front().at("task") == "segmentation";
  std::ostringstream os;
  for (const char* metric : seg ? std::vector<const char*>{"dice", "acc"} : std::vector<const char*>{"acc", "mf1"}) {
    os << "[" << metric << "]\n";
    os << std::left << std::setw(28) << "run" << std::setw(10) << "method";
    for (std::size_t k = 0; k < clients; ++k) os << std::setw(10) << ("client" + std::to_string(k));
    os << std::setw(10) << "Average" << "delta\n";
    const json& base = summaries.front().at("average").at(metric);
    for (std::size_t i = 0; i < summaries.size(); ++i) {
      const auto& s = summaries[i];
      os << std::setw(28) << run_dirs[i].string() << std::setw(10) << s.at("method").get<std::string>();
      for (const auto& c : s.at("clients")) os << std::setw(10) << cell(c.at(metric));
      const json& avg = s.at("average").at(metric);
      os << std::setw(10) << cell(avg);
      if (avg.is_null() || base.is_null()) {
        os << "-\n";
      } else {
        os << std::showpos << std::fixed << std::setprecision(4) << avg.get<double>() - base.get<double>()
           << std::noshowpos << "\n";
      }
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace mhflid
