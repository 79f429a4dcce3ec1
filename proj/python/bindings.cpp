// Thin bindings over the simulator. Configs cross the boundary as JSON text;
// the mhflid package converts to and from dicts.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mhflid/experiment.hpp"
#include "mhflid/metrics.hpp"
#include "mhflid/snapshot.hpp"

namespace py = pybind11;
using namespace mhflid;

namespace {

ExperimentConfig config_of(const std::string& text) { return parse_config(nlohmann::json::parse(text)); }

py::dict record_dict(const MetricsRecord& r) {
  py::dict d;
  d["round"] = r.round;
  d["client_id"] = r.client_id;
  d["split"] = r.split;
  d["loss"] = r.loss;
  d["acc"] = r.acc;
  d["mf1"] = r.mf1;
  d["dice"] = r.dice;
  return d;
}

py::list records(const std::vector<MetricsRecord>& rs) {
  py::list out;
  for (const auto& r : rs) out.append(record_dict(r));
  return out;
}

py::dict result_dict(const RunResult& r) {
  py::dict d;
  d["records"] = records(r.records);
  d["finals"] = records(r.finals);
  d["cross_eval"] = r.cross_eval;
  d["disentanglement"] = r.disentanglement;
  py::list dist;
  for (const auto& row : r.distillation) {
    py::dict x;
    x["round"] = row.round;
    x["client_id"] = row.client_id;
    x["injection_before"] = row.injection_before;
    x["injection_after"] = row.injection_after;
    x["kl_before"] = row.kl_before;
    x["kl_after"] = row.kl_after;
    dist.append(x);
  }
  d["distillation"] = dist;
  d["metrics_csv"] = metrics_csv(r.records, false);
  d["messenger"] = py::bytes(encode(r.final_messenger));
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "MH-pFLID simulator core";

  py::register_exception<ProtocolError>(m, "ProtocolError", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

  m.def("normalize_config", [](const std::string& text) { return to_json(config_of(text)).dump(); },
        "Parses, fills defaults and re-serializes a config.");
  m.def("validate", [](const std::string& text) {
    auto d = validate(config_of(text));
    return py::make_tuple(d.ok, d.lines);
  });
  m.def("param_counts", [](const std::string& text) {
    const auto c = config_of(text);
    std::vector<std::size_t> clients;
    for (std::size_t k = 0; k < c.clients.size(); ++k) clients.push_back(Model::build(client_spec(c, k), 0).param_count());
    return py::make_tuple(Model::build(messenger_spec(c), 0).param_count(), clients);
  });
  m.def(
      "run",
      [](const std::string& text, const std::string& out_dir) {
        const auto c = config_of(text);
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(c, out_dir);
        }
        return result_dict(r);
      },
      py::arg("config"), py::arg("out_dir") = "");
  m.def("compare", [](const std::vector<std::filesystem::path>& dirs) { return compare(dirs); });
  m.def("derive_seed", &derive_seed);

  m.def("accuracy", [](const std::vector<int>& p, const std::vector<int>& y) { return metrics::accuracy(p, y); });
  m.def("macro_f1",
        [](const std::vector<int>& p, const std::vector<int>& y, std::size_t k) { return metrics::macro_f1(p, y, k); });
  m.def("mean_dice", [](const std::vector<int>& p, const std::vector<int>& y, std::size_t samples, std::size_t k) {
    return metrics::mean_dice(p, y, samples, k);
  });

  m.def("snapshot_entries", [](const py::bytes& wire) {
    const auto s = decode(std::string(wire));
    py::list out;
    for (const auto& e : s.entries) out.append(py::make_tuple(e.name, e.shape, e.data));
    return py::make_tuple(s.round, s.sample_count, out);
  });
  m.def(
      "aggregate",
      [](const std::vector<py::bytes>& wires, const std::string& mode) {
        std::vector<MessengerSnapshot> snaps;
        for (const auto& w : wires) snaps.push_back(decode(std::string(w)));
        return py::bytes(encode(aggregate(snaps, aggregation_mode_from_string(mode))));
      },
      py::arg("snapshots"), py::arg("mode") = "data_weighted");
}
