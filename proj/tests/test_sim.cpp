#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "fedmobi/experiment.hpp"
#include "fedmobi/sim.hpp"

using namespace fedmobi;

namespace {

struct Bench {
  BackboneConfig bc;
  FrozenBackbone backbone;
  AlignmentPlan plan;
  Dataset train;
  Dataset eval;
  std::map<std::string, FrozenEvalSet> eval_sets;

  static Bench make(std::size_t samples) {
    BackboneConfig bc;
    bc.id = "dev";
    bc.num_layers = 2;
    bc.hidden = 16;
    bc.heads = 2;
    bc.init_seed = 4;
    SyntheticTaskConfig task;
    task.seq = 8;
    Bench b{bc, FrozenBackbone::build(bc), make_plan({bc}),
            generate_dataset(task, samples, 3), generate_dataset(task, 32, 4), {}};
    b.eval_sets.emplace("dev", FrozenEvalSet::build(b.backbone, b.plan, b.eval, 8));
    return b;
  }

  ClientRuntime client(std::uint32_t id, std::vector<std::uint32_t> ids,
                       std::uint32_t batch) const {
    ClientConfig cc;
    cc.client_id = id;
    cc.backbone_id = "dev";
    cc.batch_size = batch;
    Shard shard;
    shard.sample_ids = std::move(ids);
    return ClientRuntime(cc, backbone, plan, train, shard);
  }

  ServerRuntime server(ServerConfig cfg = {}) const {
    return ServerRuntime(SideNetwork::build(plan, {}), cfg);
  }
};

std::vector<std::uint32_t> iota_ids(std::uint32_t n, std::uint32_t from = 0) {
  std::vector<std::uint32_t> v(n);
  std::iota(v.begin(), v.end(), from);
  return v;
}

// Profile whose compute time per batch is exactly c seconds and upload time
// exactly u seconds, for this client's fixed batch shape.
DeviceProfile timed_profile(const ClientRuntime& client, std::uint32_t batch, double c,
                            double u) {
  DeviceProfile p;
  p.tflops = client.step_flops(batch) / (c * 1e12);
  p.bandwidth_mbps = static_cast<double>(client.step_upload_bytes(batch)) * 8.0 / (u * 1e6);
  p.overhead_s = 0.0;
  return p;
}

}  // namespace

TEST_CASE("async pipeline: batch k+1 computes while batch k uploads") {
  Bench b = Bench::make(12);
  ClientRuntime c = b.client(0, iota_ids(12), 4);
  ServerRuntime srv = b.server();

  // c = 3s, u = 1s per batch, three batches:
  //   c_end = 3, 6, 9;  u_end = 4, 7, 10
  SimParticipant part{&c, timed_profile(c, 4, 3.0, 1.0)};
  std::vector<SimParticipant> parts{part};
  SimConfig cfg;
  cfg.eval_every_s = 0.0;
  cfg.replay_cap = 0;
  std::vector<double> arrivals;
  RunMetrics m = simulate(srv, parts, b.eval_sets, cfg, [&](const SimEvent& e) {
    if (e.kind == "arrival") arrivals.push_back(e.t);
  });
  REQUIRE(arrivals.size() == 3);
  CHECK(arrivals[0] == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(arrivals[1] == doctest::Approx(7.0).epsilon(1e-9));
  CHECK(arrivals[2] == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(m.streaming_end == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(m.mode == "async");
}

TEST_CASE("async pipeline: a slow uplink stalls the next compute") {
  Bench b = Bench::make(12);
  ClientRuntime c = b.client(0, iota_ids(12), 4);
  ServerRuntime srv = b.server();

  // c = 1s, u = 2s: the device may hold one finished batch while uploading
  // another, so compute k waits for upload k-2.
  //   c_end[0]=1  u_end[0]=3
  //   c_end[1]=2  u_end[1]=5
  //   c_end[2]=max(2, u_end[0]) + 1 = 4   u_end[2]=7
  SimParticipant part{&c, timed_profile(c, 4, 1.0, 2.0)};
  std::vector<SimParticipant> parts{part};
  SimConfig cfg;
  cfg.eval_every_s = 0.0;
  cfg.replay_cap = 0;
  std::vector<double> arrivals;
  simulate(srv, parts, b.eval_sets, cfg, [&](const SimEvent& e) {
    if (e.kind == "arrival") arrivals.push_back(e.t);
  });
  REQUIRE(arrivals.size() == 3);
  CHECK(arrivals[0] == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(arrivals[1] == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(arrivals[2] == doctest::Approx(7.0).epsilon(1e-9));
}

TEST_CASE("idle replay stays within its budget and off when capped to zero") {
  Bench b = Bench::make(24);
  SimConfig cfg;
  cfg.eval_every_s = 0.0;

  auto run = [&](std::size_t cap) {
    ClientRuntime c = b.client(0, iota_ids(24), 4);
    ServerRuntime srv = b.server();
    SimParticipant part{&c, timed_profile(c, 4, 2.0, 1.0)};
    std::vector<SimParticipant> parts{part};
    cfg.replay_cap = cap;
    return simulate(srv, parts, b.eval_sets, cfg);
  };

  const RunMetrics uncapped = run(4);
  CHECK(uncapped.server.replay_steps > 0);
  // six arrivals, so at most five inter-arrival gaps carry replay
  CHECK(uncapped.server.replay_steps <= 4 * 5);
  const RunMetrics off = run(0);
  CHECK(off.server.replay_steps == 0);
  CHECK(off.server.arrival_steps == 6);
}

TEST_CASE("sync rounds barrier on the slowest device and never replay") {
  Bench b = Bench::make(16);
  ClientRuntime fast = b.client(0, iota_ids(8, 0), 4);
  ClientRuntime slow = b.client(1, iota_ids(8, 8), 4);
  ServerRuntime srv = b.server();
  SimParticipant pf{&fast, timed_profile(fast, 4, 1.0, 0.5)};   // ready at 1.5
  SimParticipant ps{&slow, timed_profile(slow, 4, 4.0, 2.0)};   // ready at 6.0
  std::vector<SimParticipant> parts{pf, ps};
  SimConfig cfg;
  cfg.sync_rounds = true;
  cfg.eval_every_s = 0.0;
  cfg.server_tflops = 1e6;  // practically instant server
  std::vector<double> arrivals;
  std::size_t sync_evals = 0;
  RunMetrics m = simulate(srv, parts, b.eval_sets, cfg, [&](const SimEvent& e) {
    if (e.kind == "arrival") arrivals.push_back(e.t);
    if (e.kind == "eval" && e.str.count("phase") && e.str.at("phase") == "sync-round")
      ++sync_evals;
    CHECK(e.kind != "replay");
  });
  CHECK(m.mode == "sync");
  CHECK(m.server.replay_steps == 0);
  REQUIRE(arrivals.size() == 4);  // two clients x two rounds
  // both round-0 packets arrive at the round-0 barrier: the slow ready time
  CHECK(arrivals[0] == doctest::Approx(6.0).epsilon(1e-6));
  CHECK(arrivals[1] == doctest::Approx(6.0).epsilon(1e-6));
  // round 1 starts only after the barrier, so its packets land near 12
  CHECK(arrivals[2] == doctest::Approx(12.0).epsilon(1e-4));
  CHECK(m.streaming_end == doctest::Approx(12.0).epsilon(1e-4));
  CHECK(sync_evals == 2);
}

TEST_CASE("standalone epochs are priced per cached record") {
  Bench b = Bench::make(12);
  ClientRuntime c = b.client(0, iota_ids(12), 4);
  ServerConfig scfg;
  scfg.standalone_epochs = 5;
  ServerRuntime srv = b.server(scfg);
  SimParticipant part{&c, timed_profile(c, 4, 1.0, 1.0)};
  std::vector<SimParticipant> parts{part};
  SimConfig cfg;
  cfg.eval_every_s = 0.0;
  cfg.replay_cap = 0;
  cfg.server_tflops = 1e-3;
  RunMetrics m = simulate(srv, parts, b.eval_sets, cfg);
  CHECK(m.server.standalone_steps == 5 * 3);
  // tuning starts once the server has drained the final arrival (the
  // streaming-end curve point is taken at exactly that moment)
  const double step_s =
      srv.net().train_step_flops("dev", 4, 8) / (cfg.server_tflops * 1e12);
  const double tuning_start = m.curve[1].t;
  CHECK(tuning_start >= m.streaming_end);
  CHECK(m.wall_end == doctest::Approx(tuning_start + 5 * 3 * step_s).epsilon(1e-9));
  // curve: init, streaming-end, one point per epoch, all in time order
  REQUIRE(m.curve.size() == 2 + 5);
  CHECK(m.curve.front().phase == "init");
  for (std::size_t i = 1; i < m.curve.size(); ++i) CHECK(m.curve[i].t >= m.curve[i - 1].t);
  CHECK(m.curve.back().phase == "standalone");
}

TEST_CASE("time to target reads off the accuracy curve") {
  Bench b = Bench::make(12);
  SimConfig cfg;
  cfg.eval_every_s = 0.0;
  cfg.replay_cap = 0;

  auto run = [&](double target) {
    ClientRuntime c = b.client(0, iota_ids(12), 4);
    ServerRuntime srv = b.server();
    SimParticipant part{&c, timed_profile(c, 4, 1.0, 1.0)};
    std::vector<SimParticipant> parts{part};
    cfg.target_accuracy = target;
    return simulate(srv, parts, b.eval_sets, cfg);
  };

  // any accuracy clears a trivial bar, starting at the very first sample
  CHECK(run(1e-9).time_to_target == 0.0);
  // a bar the run provably never clears is reported as never reached
  const RunMetrics perfect = run(1.0);
  double best = 0.0;
  for (const CurvePoint& pt : perfect.curve) best = std::max(best, pt.global_accuracy);
  REQUIRE(best < 1.0);
  CHECK(perfect.time_to_target == -1.0);
  // a target above the legal range is a configuration error
  CHECK_THROWS_AS(run(1.01), ConfigError);
}

TEST_CASE("full experiment: single pass audit and bitwise rerun") {
  const std::string cfg_text = R"(
[run]
mode = async
seed = 5
eval_every_s = 1.0
eval_samples = 32
eval_batch = 8

[task]
seq = 8
train_samples = 36

[train]
lr = 2e-3
standalone_epochs = 4

[backbone.one]
num_layers = 2
hidden = 16
heads = 2

[backbone.two]
num_layers = 3
hidden = 32
heads = 2

[client.0]
backbone = one
batch_size = 4

[client.1]
backbone = two
batch_size = 4
)";
  const RunConfig rc = parse_run_config(cfg_text);

  auto ex = build_experiment(rc);
  SimConfig scfg;
  scfg.eval_every_s = rc.eval_every_s;
  scfg.replay_cap = rc.replay_cap;
  scfg.sync_rounds = rc.sync;
  const RunMetrics m = simulate(*ex->server, ex->participants, ex->eval_sets, scfg);

  // every shard sample was uploaded exactly once, in shard order
  std::vector<std::uint32_t> all_uploaded;
  for (std::size_t i = 0; i < ex->clients.size(); ++i) {
    const auto& ids = ex->server->uploaded_ids(ex->clients[i]->config().client_id);
    CHECK(ids == ex->shards[i].sample_ids);
    all_uploaded.insert(all_uploaded.end(), ids.begin(), ids.end());
  }
  std::sort(all_uploaded.begin(), all_uploaded.end());
  REQUIRE(all_uploaded.size() == rc.train_samples);
  for (std::uint32_t i = 0; i < rc.train_samples; ++i) CHECK(all_uploaded[i] == i);

  // conservation: the server received exactly what the clients paid for
  std::uint64_t sent = 0;
  for (const auto& c : ex->clients) sent += c->cost().upload_bytes;
  CHECK(m.server.bytes_received == sent);
  CHECK(m.cache_payload_bytes == sent);
  CHECK(m.server.packets == m.cache_records);

  // frozen backbones stayed frozen through the whole run
  for (const auto& [id, bb] : ex->backbones) {
    BackboneConfig ref = bb.config();
    CHECK(bb.param_checksum() == FrozenBackbone::build(ref).param_checksum());
  }

  // the exact same config replays to the exact same model and timeline
  const RunMetrics again = run_experiment(rc);
  CHECK(again.sidenet_checksum == m.sidenet_checksum);
  CHECK(again.final_loss == m.final_loss);
  CHECK(again.wall_end == m.wall_end);
  CHECK(again.final_global_accuracy == m.final_global_accuracy);
  REQUIRE(again.curve.size() == m.curve.size());
  for (std::size_t i = 0; i < m.curve.size(); ++i) {
    CHECK(again.curve[i].t == m.curve[i].t);
    CHECK(again.curve[i].global_accuracy == m.curve[i].global_accuracy);
  }

  // a different seed is a different universe
  RunConfig other = rc;
  other.seed = 6;
  CHECK(run_experiment(other).sidenet_checksum != m.sidenet_checksum);
}

TEST_CASE("closed-form cost rows match their formulas") {
  AccountingScenario s;  // the deployment-scale defaults
  const auto rows = account_rows(s);
  REQUIRE(rows.size() == 4);
  auto find = [&](const std::string& name) -> const AccountRow& {
    for (const auto& r : rows)
      if (r.method == name) return r;
    throw std::runtime_error("missing row " + name);
  };
  const AccountRow& fl = find("federated-lora-backprop");
  const AccountRow& sfl = find("split-layer-tuning");
  const AccountRow& fwd = find("forward-gradient-lora");
  const AccountRow& fed = find("streamed-side-tuning");

  const double fwd_sample = 24.0 * 768.0 * 768.0 * 12.0 * 256.0;
  const double lora_params = 4.0 * 768.0 * 8.0 * 12.0;
  CHECK(fed.client_flops == doctest::Approx(36.0 * fwd_sample).epsilon(1e-12));
  CHECK(fed.upload_bytes ==
        doctest::Approx(36.0 * (2.0 * 12.0 * 1.0 * 768.0 + 2.0 * 4.0)).epsilon(1e-12));
  CHECK(fed.download_bytes == 0.0);
  CHECK(!fed.backprop_on_device);
  CHECK(fed.trains_while_streaming);

  CHECK(fl.client_flops == doctest::Approx(3.0 * fwd_sample * 36.0 * 100.0).epsilon(1e-12));
  CHECK(fl.upload_bytes == doctest::Approx(100.0 * 2.0 * lora_params).epsilon(1e-12));
  CHECK(fl.download_bytes == fl.upload_bytes);
  CHECK(fl.backprop_on_device);

  CHECK(sfl.upload_bytes ==
        doctest::Approx(100.0 * 36.0 * 4.0 * 256.0 * 768.0).epsilon(1e-12));
  CHECK(fwd.client_flops ==
        doctest::Approx(100.0 * 300.0 * 8.0 * fwd_sample).epsilon(1e-12));
  CHECK(fwd.download_bytes == doctest::Approx(fl.download_bytes).epsilon(1e-12));

  // headline ratios
  CHECK(fed.client_flops / fl.client_flops < 1.0 - 0.952);
  const double sfl_comm = sfl.upload_bytes + sfl.download_bytes;
  const double fed_comm = fed.upload_bytes + fed.download_bytes;
  CHECK(sfl_comm / fed_comm >= 100.0);
  const double best_baseline_comm =
      std::min(fl.upload_bytes + fl.download_bytes, fwd.upload_bytes + fwd.download_bytes);
  CHECK(fed_comm / best_baseline_comm < 1.0 - 0.932);
  CHECK(fed.client_memory_bytes < fl.client_memory_bytes);
  CHECK(fed.client_memory_bytes < sfl.client_memory_bytes);
  CHECK(fed.client_memory_bytes < fwd.client_memory_bytes);
  CHECK(fwd.client_flops > fl.client_flops);

  // zero rounds of anything costs nothing
  AccountingScenario idle = s;
  idle.rounds = 0;
  for (const auto& r : account_rows(idle)) {
    CHECK(r.client_flops == 0.0);
    CHECK(r.upload_bytes == 0.0);
    CHECK(r.download_bytes == 0.0);
    CHECK(r.client_memory_bytes == 0.0);
  }
}

TEST_CASE("device profile arithmetic") {
  DeviceProfile p;
  p.tflops = 1e-3;
  p.bandwidth_mbps = 80.0;
  p.overhead_s = 0.25;
  CHECK(p.compute_seconds(2e9) == doctest::Approx(2.0));
  CHECK(p.upload_seconds(10'000'000) == doctest::Approx(1.0 + 0.25));
  DeviceProfile bad;
  bad.tflops = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
