#include "fedmobi/experiment.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fedmobi/errors.hpp"
#include "fedmobi/rng.hpp"
#include "json.hpp"

namespace fedmobi {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016" PRIx64, v);
  return buf;
}

Dataset make_train_set(const RunConfig& rc) {
  return generate_dataset(rc.task, rc.train_samples, derive_seed(rc.seed, "task.train"));
}

Dataset make_eval_set(const RunConfig& rc) {
  return generate_dataset(rc.task, rc.eval_samples, derive_seed(rc.seed, "task.eval"));
}

std::vector<Shard> make_shards(const RunConfig& rc, const Dataset& train) {
  PartitionSpec spec;
  spec.num_clients = static_cast<std::uint32_t>(rc.clients.size());
  spec.alpha = rc.alpha;
  spec.seed = derive_seed(rc.seed, "partition");
  return partition_dataset(train, spec);
}

}  // namespace

std::unique_ptr<Experiment> build_experiment(const RunConfig& rc) {
  rc.validate();
  auto ex = std::make_unique<Experiment>();
  ex->rc = rc;
  ex->train = make_train_set(rc);
  ex->eval = make_eval_set(rc);
  ex->shards = make_shards(rc, ex->train);

  std::vector<BackboneConfig> bcs = rc.backbones;
  for (BackboneConfig& bc : bcs) {
    if (bc.init_seed == 0) bc.init_seed = derive_seed(rc.seed, "backbone.init." + bc.id);
    ex->backbones.emplace(bc.id, FrozenBackbone::build(bc));
  }

  PlanOptions opts;
  opts.side_hidden_override = rc.side_hidden;
  opts.block_count_override = rc.block_count;
  opts.strategy = rc.strategy;
  opts.seed = derive_seed(rc.seed, "plan.random");
  opts.explicit_layers = rc.explicit_layers;
  ex->plan = make_plan(bcs, opts);

  SideNetConfig sc;
  sc.rank = rc.rank;
  sc.init_seed = derive_seed(rc.seed, "sidenet.init");
  SideNetwork net = SideNetwork::build(ex->plan, sc);

  ServerConfig server_cfg;
  server_cfg.optimizer = rc.optimizer;
  server_cfg.steps_per_arrival = rc.steps_per_arrival;
  server_cfg.standalone_epochs = rc.standalone_epochs;
  server_cfg.cache_seed = rc.seed;
  server_cfg.replay_seed = rc.seed;
  ex->server = std::make_unique<ServerRuntime>(std::move(net), server_cfg);

  for (std::size_t i = 0; i < rc.clients.size(); ++i) {
    const ClientSpec& cs = rc.clients[i];
    ClientConfig cc;
    cc.client_id = cs.client_id;
    cc.backbone_id = cs.backbone;
    cc.batch_size = cs.batch_size;
    ex->clients.push_back(std::make_unique<ClientRuntime>(
        cc, ex->backbones.at(cs.backbone), ex->plan, ex->train, ex->shards[i]));
    ex->participants.push_back(SimParticipant{ex->clients.back().get(), cs.profile});
  }

  for (const auto& [id, backbone] : ex->backbones)
    ex->eval_sets.emplace(id, FrozenEvalSet::build(backbone, ex->plan, ex->eval, rc.eval_batch));
  return ex;
}

RunMetrics run_experiment(const RunConfig& rc, const EventSink& sink) {
  auto ex = build_experiment(rc);
  SimConfig sim;
  sim.server_tflops = rc.server_tflops;
  sim.eval_every_s = rc.eval_every_s;
  sim.replay_cap = rc.replay_cap;
  sim.target_accuracy = rc.target_accuracy;
  sim.sync_rounds = rc.sync;
  return simulate(*ex->server, ex->participants, ex->eval_sets, sim, sink);
}

std::string event_to_json(const SimEvent& e) {
  ordered_json j;
  j["t"] = e.t;
  j["kind"] = e.kind;
  for (const auto& [k, v] : e.str) j[k] = v;
  for (const auto& [k, v] : e.num) j[k] = v;
  return j.dump();
}

std::string metrics_to_json(const RunConfig& rc, const AlignmentPlan& plan,
                            const RunMetrics& m) {
  ordered_json j;
  j["mode"] = m.mode;
  j["seed"] = rc.seed;
  j["task"]["vocab"] = rc.task.vocab;
  j["task"]["num_classes"] = rc.task.num_classes;
  j["task"]["seq"] = rc.task.seq;
  j["task"]["signal"] = rc.task.signal;
  j["task"]["train_samples"] = rc.train_samples;
  j["task"]["eval_samples"] = rc.eval_samples;
  j["partition_alpha"] = rc.alpha;
  j["plan"]["block_count"] = plan.block_count;
  j["plan"]["side_hidden"] = plan.side_hidden;
  j["plan"]["digest"] = hex64(plan.digest());
  j["plan"]["describe"] = plan.describe();
  j["timing"]["streaming_end"] = m.streaming_end;
  j["timing"]["wall_end"] = m.wall_end;
  j["timing"]["target_accuracy"] = m.target_accuracy;
  j["timing"]["time_to_target"] = m.time_to_target;
  j["accuracy"]["global"] = m.final_global_accuracy;
  j["accuracy"]["per_backbone"] = m.final_backbone_accuracy;
  j["accuracy"]["raw_per_backbone"] = m.raw_backbone_accuracy;
  j["final_loss"] = m.final_loss;
  j["server"]["packets"] = m.server.packets;
  j["server"]["bytes_received"] = m.server.bytes_received;
  j["server"]["arrival_steps"] = m.server.arrival_steps;
  j["server"]["replay_steps"] = m.server.replay_steps;
  j["server"]["standalone_steps"] = m.server.standalone_steps;
  j["server"]["total_steps"] = m.server.total_steps();
  j["cache"]["records"] = m.cache_records;
  j["cache"]["payload_bytes"] = m.cache_payload_bytes;
  ordered_json clients = ordered_json::array();
  for (const ClientReport& c : m.clients) {
    ordered_json cj;
    cj["client_id"] = c.client_id;
    cj["backbone"] = c.backbone_id;
    cj["samples"] = c.samples;
    cj["packets"] = c.packets;
    cj["forward_flops"] = c.forward_flops;
    cj["upload_bytes"] = c.upload_bytes;
    cj["peak_memory_bytes"] = c.peak_memory_bytes;
    cj["finish_time"] = c.finish_time;
    clients.push_back(cj);
  }
  j["clients"] = clients;
  j["sidenet_checksum"] = hex64(m.sidenet_checksum);
  j["curve_points"] = m.curve.size();
  return j.dump(2) + "\n";
}

std::string curve_to_csv(const RunMetrics& m) {
  std::string out = "t,phase,steps,loss,global_accuracy";
  std::vector<std::string> ids;
  if (!m.curve.empty()) {
    for (const auto& [id, acc] : m.curve.front().backbone_accuracy) {
      ids.push_back(id);
      out += ",accuracy_" + id;
    }
  }
  out += "\n";
  char buf[64];
  const auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const CurvePoint& pt : m.curve) {
    out += num(pt.t) + "," + pt.phase + "," + std::to_string(pt.steps) + "," + num(pt.loss) +
           "," + num(pt.global_accuracy);
    for (const std::string& id : ids) out += "," + num(pt.backbone_accuracy.at(id));
    out += "\n";
  }
  return out;
}

RunMetrics run_and_write(const RunConfig& rc, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto ex = build_experiment(rc);
  SimConfig sim;
  sim.server_tflops = rc.server_tflops;
  sim.eval_every_s = rc.eval_every_s;
  sim.replay_cap = rc.replay_cap;
  sim.target_accuracy = rc.target_accuracy;
  sim.sync_rounds = rc.sync;

  const std::filesystem::path dir(out_dir);
  std::ofstream events(dir / "events.jsonl", std::ios::trunc);
  if (!events) throw StateError("cannot open events.jsonl for writing");
  const EventSink sink = [&events](const SimEvent& e) { events << event_to_json(e) << "\n"; };

  const RunMetrics metrics = simulate(*ex->server, ex->participants, ex->eval_sets, sim, sink);
  events.close();

  std::ofstream mj(dir / "metrics.json", std::ios::trunc);
  if (!mj) throw StateError("cannot open metrics.json for writing");
  mj << metrics_to_json(rc, ex->plan, metrics);
  mj.close();

  std::ofstream cc(dir / "curve.csv", std::ios::trunc);
  if (!cc) throw StateError("cannot open curve.csv for writing");
  cc << curve_to_csv(metrics);
  cc.close();

  ex->server->net().save_checkpoint((dir / "checkpoint.bin").string());
  return metrics;
}

PartitionReport build_partition_report(const RunConfig& rc) {
  rc.validate();
  const Dataset train = make_train_set(rc);
  const std::vector<Shard> shards = make_shards(rc, train);
  PartitionReport report;
  report.samples = train.size();
  for (const Shard& s : shards) report.shard_sizes.push_back(s.sample_ids.size());
  report.label_histograms = label_histograms(train, shards);
  report.mean_label_tv = mean_label_tv(train, shards);
  return report;
}

std::string partition_to_json(const RunConfig& rc, const PartitionReport& report) {
  ordered_json j;
  j["seed"] = rc.seed;
  j["alpha"] = rc.alpha;
  j["samples"] = report.samples;
  j["num_clients"] = rc.clients.size();
  j["shard_sizes"] = report.shard_sizes;
  ordered_json hists = ordered_json::array();
  for (std::size_t i = 0; i < report.label_histograms.size(); ++i) {
    ordered_json h;
    h["client_id"] = rc.clients[i].client_id;
    h["labels"] = report.label_histograms[i];
    hists.push_back(h);
  }
  j["label_histograms"] = hists;
  j["mean_label_tv"] = report.mean_label_tv;
  return j.dump(2) + "\n";
}

std::string account_to_json(const AccountingScenario& s, const std::vector<AccountRow>& rows) {
  ordered_json j;
  j["scenario"]["clients"] = s.clients;
  j["scenario"]["samples_per_client"] = s.samples_per_client;
  j["scenario"]["seq"] = s.seq;
  j["scenario"]["act_tokens"] = s.act_tokens;
  j["scenario"]["hidden"] = s.hidden;
  j["scenario"]["num_layers"] = s.num_layers;
  j["scenario"]["block_count"] = s.block_count;
  j["scenario"]["num_classes"] = s.num_classes;
  j["scenario"]["batch"] = s.batch;
  j["scenario"]["rounds"] = s.rounds;
  j["scenario"]["lora_rank"] = s.lora_rank;
  j["scenario"]["perturbations"] = s.perturbations;
  ordered_json out = ordered_json::array();
  for (const AccountRow& r : rows) {
    ordered_json rj;
    rj["method"] = r.method;
    rj["client_flops"] = r.client_flops;
    rj["upload_bytes"] = r.upload_bytes;
    rj["download_bytes"] = r.download_bytes;
    rj["client_memory_bytes"] = r.client_memory_bytes;
    rj["backprop_on_device"] = r.backprop_on_device;
    rj["trains_while_streaming"] = r.trains_while_streaming;
    out.push_back(rj);
  }
  j["methods"] = out;
  return j.dump(2) + "\n";
}

}  // namespace fedmobi
