// Python face of the library. Thin by design: numeric primitives bind
// directly, composite results reuse the canonical JSON serializers and come
// back as strings for the pure-python wrapper to parse, so both languages
// always see the same bytes.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedmobi/alignment.hpp"
#include "fedmobi/backbone.hpp"
#include "fedmobi/config.hpp"
#include "fedmobi/diagnostics.hpp"
#include "fedmobi/experiment.hpp"
#include "fedmobi/float16.hpp"
#include "fedmobi/sidenet.hpp"
#include "fedmobi/sim.hpp"
#include "fedmobi/tensor.hpp"

namespace py = pybind11;
using namespace fedmobi;

namespace {

std::uint32_t dict_u32(const py::dict& d, const char* key, std::uint32_t fallback) {
  if (!d.contains(key)) return fallback;
  return d[key].cast<std::uint32_t>();
}

BackboneConfig backbone_from_dict(const py::dict& d) {
  BackboneConfig cfg;
  if (d.contains("id")) cfg.id = d["id"].cast<std::string>();
  cfg.num_layers = dict_u32(d, "num_layers", cfg.num_layers);
  cfg.hidden = dict_u32(d, "hidden", cfg.hidden);
  cfg.heads = dict_u32(d, "heads", cfg.heads);
  cfg.ffn_mult = dict_u32(d, "ffn_mult", cfg.ffn_mult);
  cfg.vocab = dict_u32(d, "vocab", cfg.vocab);
  cfg.max_seq = dict_u32(d, "max_seq", cfg.max_seq);
  cfg.num_classes = dict_u32(d, "num_classes", cfg.num_classes);
  if (d.contains("init_seed")) cfg.init_seed = d["init_seed"].cast<std::uint64_t>();
  cfg.validate();
  return cfg;
}

Tensor matrix_from_rows(const std::vector<std::vector<double>>& rows, const char* what) {
  if (rows.empty()) throw ShapeError(std::string(what) + ": needs at least one row");
  const std::size_t cols = rows[0].size();
  std::vector<double> flat;
  flat.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError(std::string(what) + ": ragged rows");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor::from({rows.size(), cols}, std::move(flat));
}

std::vector<std::vector<double>> rows_of(const Tensor& t) {
  std::vector<std::vector<double>> out(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) out[i][j] = t.data()[i * t.dim(1) + j];
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw StateError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string hex_digest(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Federated side-tuning core: alignment planning, wire precision, "
            "deviation math, resource accounting, and the full simulated run.";
  m.attr("__version__") = "0.1.0";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def("float16_encode", &float16_encode, py::arg("value"),
        "Round a double to 16-bit wire precision and return the bit pattern.");
  m.def("float16_decode", &float16_decode, py::arg("bits"),
        "Decode a 16-bit wire value back to a double.");
  m.def("float16_quantize", &float16_quantize, py::arg("value"),
        "encode followed by decode: the exact value a packet carries.");

  m.def(
      "partition_layers",
      [](std::uint32_t num_layers, std::uint32_t block_count, const std::string& strategy,
         std::uint64_t seed, std::optional<std::vector<std::uint32_t>> explicit_layers) {
        std::vector<std::uint32_t> ex;
        const std::vector<std::uint32_t>* ptr = nullptr;
        if (explicit_layers) {
          ex = *explicit_layers;
          ptr = &ex;
        }
        return partition_layers(num_layers, block_count, layer_strategy_from(strategy), seed,
                                ptr);
      },
      py::arg("num_layers"), py::arg("block_count"), py::arg("strategy") = "uniform",
      py::arg("seed") = 0, py::arg("explicit_layers") = py::none(),
      "Pick tap layers (1-based, sorted, distinct) out of num_layers.");

  m.def("side_hidden_rule", &side_hidden_rule, py::arg("hidden_sizes"),
        "Shared side width for a fleet of backbone hidden sizes.");

  m.def("importance_select", &importance_select, py::arg("importance"), py::arg("keep"),
        "Indices of the `keep` highest-scoring blocks, ascending.");

  m.def(
      "make_plan",
      [](const std::vector<py::dict>& backbones, std::uint32_t block_count,
         std::uint32_t side_hidden, const std::string& strategy, std::uint64_t seed,
         const std::vector<std::uint32_t>& explicit_layers) {
        std::vector<BackboneConfig> cfgs;
        cfgs.reserve(backbones.size());
        for (const auto& d : backbones) cfgs.push_back(backbone_from_dict(d));
        PlanOptions opts;
        opts.block_count_override = block_count;
        opts.side_hidden_override = side_hidden;
        opts.strategy = layer_strategy_from(strategy);
        opts.seed = seed;
        opts.explicit_layers = explicit_layers;
        const AlignmentPlan plan = make_plan(cfgs, opts);
        py::dict out;
        out["block_count"] = plan.block_count;
        out["side_hidden"] = plan.side_hidden;
        out["num_classes"] = plan.num_classes;
        py::dict taps, hidden;
        for (const auto& [id, layers] : plan.tap_layers) taps[py::str(id)] = layers;
        for (const auto& [id, h] : plan.hidden_of) hidden[py::str(id)] = h;
        out["taps"] = taps;
        out["hidden"] = hidden;
        out["digest"] = hex_digest(plan.digest());
        out["describe"] = plan.describe();
        return out;
      },
      py::arg("backbones"), py::arg("block_count") = 0, py::arg("side_hidden") = 0,
      py::arg("strategy") = "uniform", py::arg("seed") = 0,
      py::arg("explicit_layers") = std::vector<std::uint32_t>{},
      "Cross-model tap plan for a fleet of backbone configs (dicts with id, "
      "num_layers, hidden, ...). Zero overrides mean: min depth, width rule.");

  m.def(
      "forward_flops",
      [](const py::dict& backbone, std::size_t seq, std::size_t batch) {
        return FrozenBackbone::build(backbone_from_dict(backbone)).forward_flops(seq, batch);
      },
      py::arg("backbone"), py::arg("seq"), py::arg("batch"),
      "Exact flop count of one frozen forward pass of the given backbone.");

  m.def(
      "compute_deviation",
      [](const std::vector<std::vector<double>>& logits,
         const std::vector<std::uint32_t>& labels) {
        return rows_of(SideNetwork::compute_deviation(matrix_from_rows(logits, "logits"),
                                                      labels));
      },
      py::arg("logits"), py::arg("labels"),
      "softmax(logits) - onehot(labels): the only label-derived value a "
      "client ever uploads.");

  m.def(
      "corrected_predict",
      [](const std::vector<std::vector<double>>& logits,
         const std::vector<std::vector<double>>& correction) {
        return SideNetwork::corrected_predict(matrix_from_rows(logits, "logits"),
                                              matrix_from_rows(correction, "correction"));
      },
      py::arg("logits"), py::arg("correction"),
      "argmax of softmax(logits) + correction per row, lowest index on ties.");

  m.def(
      "gradcheck",
      [](std::uint64_t seed, double bound) {
        py::list out;
        for (const DiagnosticResult& r : gradcheck_suite(seed, bound)) {
          py::dict d;
          d["name"] = r.name;
          d["max_rel_err"] = r.max_rel_err;
          d["bound"] = r.bound;
          d["pass"] = r.pass;
          out.append(std::move(d));
        }
        return out;
      },
      py::arg("seed") = 11, py::arg("bound") = 1e-5,
      "Central-difference verification of every differentiable op and the "
      "full training loss.");

  m.def(
      "run_json",
      [](const std::string& config_text, const std::string& out_dir,
         std::optional<std::uint64_t> seed) {
        RunConfig rc = parse_run_config(config_text);
        if (seed) rc.seed = *seed;
        run_and_write(rc, out_dir);
        return slurp(out_dir + "/metrics.json");
      },
      py::arg("config_text"), py::arg("out_dir"), py::arg("seed") = py::none(),
      "Full simulated run; writes metrics.json, events.jsonl, curve.csv and "
      "checkpoint.bin into out_dir and returns the metrics JSON text.");

  m.def(
      "partition_json",
      [](const std::string& config_text, std::optional<std::uint64_t> seed) {
        RunConfig rc = parse_run_config(config_text);
        if (seed) rc.seed = *seed;
        return partition_to_json(rc, build_partition_report(rc));
      },
      py::arg("config_text"), py::arg("seed") = py::none(),
      "Deal the training set into shards exactly as a run would and report "
      "sizes and per-class histograms as JSON text.");

  m.def(
      "account_json",
      [](const py::kwargs& kwargs) {
        AccountingScenario s;
        for (const auto& item : kwargs) {
          const std::string key = py::str(item.first);
          const auto value = item.second.cast<std::uint32_t>();
          if (key == "clients") s.clients = value;
          else if (key == "samples_per_client") s.samples_per_client = value;
          else if (key == "seq") s.seq = value;
          else if (key == "act_tokens") s.act_tokens = value;
          else if (key == "hidden") s.hidden = value;
          else if (key == "num_layers") s.num_layers = value;
          else if (key == "block_count") s.block_count = value;
          else if (key == "num_classes") s.num_classes = value;
          else if (key == "batch") s.batch = value;
          else if (key == "rounds") s.rounds = value;
          else if (key == "lora_rank") s.lora_rank = value;
          else if (key == "perturbations") s.perturbations = value;
          else throw ConfigError("account: unknown field '" + key + "'");
        }
        s.validate();
        return account_to_json(s, account_rows(s));
      },
      "Closed-form per-client cost rows for every training method under one "
      "scenario, as JSON text. Fields default to the reference preset.");
}
