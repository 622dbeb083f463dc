#include "fedmobi/sim.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fedmobi/errors.hpp"

namespace fedmobi {

void DeviceProfile::validate() const {
  if (!(tflops > 0.0)) throw ConfigError("device tflops must be positive");
  if (!(bandwidth_mbps > 0.0)) throw ConfigError("device bandwidth must be positive");
  if (overhead_s < 0.0) throw ConfigError("device overhead must be non-negative");
}

double DeviceProfile::compute_seconds(double flops) const { return flops / (tflops * 1e12); }

double DeviceProfile::upload_seconds(std::uint64_t bytes) const {
  return static_cast<double>(bytes) * 8.0 / (bandwidth_mbps * 1e6) + overhead_s;
}

void SimConfig::validate() const {
  if (server_tflops < 0.0) throw ConfigError("server tflops must be non-negative");
  if (eval_every_s < 0.0) throw ConfigError("evaluation cadence must be non-negative");
  if (target_accuracy < 0.0 || target_accuracy > 1.0)
    throw ConfigError("target accuracy must lie in [0, 1]");
}

namespace {

void emit(const EventSink& sink, double t, const char* kind,
          std::map<std::string, double> num = {}, std::map<std::string, std::string> str = {}) {
  if (!sink) return;
  SimEvent e;
  e.t = t;
  e.kind = kind;
  e.num = std::move(num);
  e.str = std::move(str);
  sink(e);
}

struct EvalBundle {
  const std::map<std::string, FrozenEvalSet>* sets = nullptr;
  std::map<std::string, double> weights;  // backbone id -> summed client samples
  double total_weight = 0.0;
};

CurvePoint take_eval(double t, const std::string& phase, const ServerRuntime& server,
                     const EvalBundle& eb, const EventSink& sink) {
  CurvePoint pt;
  pt.t = t;
  pt.phase = phase;
  pt.steps = server.counters().total_steps();
  pt.loss = server.counters().last_loss;
  double weighted = 0.0;
  double flat = 0.0;
  for (const auto& [id, set] : *eb.sets) {
    const double acc = set.corrected_accuracy(server.net());
    pt.backbone_accuracy[id] = acc;
    flat += acc;
    const auto it = eb.weights.find(id);
    if (it != eb.weights.end()) weighted += acc * it->second;
  }
  pt.global_accuracy = eb.total_weight > 0.0
                           ? weighted / eb.total_weight
                           : flat / static_cast<double>(eb.sets->size());
  emit(sink, t, "eval",
       {{"global_accuracy", pt.global_accuracy},
        {"steps", static_cast<double>(pt.steps)},
        {"loss", pt.loss}},
       {{"phase", phase}});
  return pt;
}

struct Arrival {
  double t = 0.0;
  std::uint32_t client_id = 0;
  std::size_t part = 0;
  std::size_t batch_index = 0;
};

double packet_step_seconds(const ServerRuntime& server, const ActivationPacket& p,
                           double server_flops_per_s) {
  const double flops = server.net().train_step_flops(p.backbone_id, p.batch(), p.seq);
  return flops / server_flops_per_s;
}

}  // namespace

RunMetrics simulate(ServerRuntime& server, std::vector<SimParticipant>& participants,
                    const std::map<std::string, FrozenEvalSet>& eval_sets, const SimConfig& cfg,
                    const EventSink& sink) {
  cfg.validate();
  if (participants.empty()) throw ConfigError("simulation needs at least one participant");
  if (eval_sets.empty()) throw ConfigError("simulation needs at least one evaluation set");

  EvalBundle eb;
  eb.sets = &eval_sets;
  double fastest = 0.0;
  std::set<std::uint32_t> seen_ids;
  for (const SimParticipant& part : participants) {
    if (part.client == nullptr) throw ConfigError("participant has no client");
    part.profile.validate();
    const ClientRuntime& c = *part.client;
    if (!seen_ids.insert(c.config().client_id).second)
      throw ConfigError("duplicate client id in the participant list");
    if (!eval_sets.count(c.config().backbone_id))
      throw ConfigError("no evaluation set for backbone " + c.config().backbone_id);
    eb.weights[c.config().backbone_id] += static_cast<double>(c.samples_total());
    eb.total_weight += static_cast<double>(c.samples_total());
    fastest = std::max(fastest, part.profile.tflops);
  }
  const double server_flops_per_s =
      (cfg.server_tflops > 0.0 ? cfg.server_tflops : 100.0 * fastest) * 1e12;

  for (const SimParticipant& part : participants) {
    const ClientConfig& cc = part.client->config();
    server.register_client(cc.client_id, cc.backbone_id);
    emit(sink, 0.0, "register",
         {{"client", static_cast<double>(cc.client_id)},
          {"samples", static_cast<double>(part.client->samples_total())}},
         {{"backbone", cc.backbone_id}});
  }

  RunMetrics metrics;
  metrics.mode = cfg.sync_rounds ? "sync" : "async";
  metrics.target_accuracy = cfg.target_accuracy;
  std::vector<double> finish(participants.size(), 0.0);
  double server_free = 0.0;

  metrics.curve.push_back(take_eval(0.0, "init", server, eb, sink));

  if (!cfg.sync_rounds) {
    // Pipelined device timelines: batch k computes while batch k-1 uploads.
    std::vector<Arrival> arrivals;
    for (std::size_t pi = 0; pi < participants.size(); ++pi) {
      const ClientRuntime& c = *participants[pi].client;
      const DeviceProfile& prof = participants[pi].profile;
      const std::size_t n = c.batches_total();
      std::vector<double> c_end(n, 0.0), u_end(n, 0.0);
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t rows = c.batch_rows(k);
        const double compute_ready = std::max(k >= 1 ? c_end[k - 1] : 0.0,
                                              k >= 2 ? u_end[k - 2] : 0.0);
        c_end[k] = compute_ready + prof.compute_seconds(c.step_flops(rows));
        const double upload_ready = std::max(k >= 1 ? u_end[k - 1] : 0.0, c_end[k]);
        u_end[k] = upload_ready + prof.upload_seconds(c.step_upload_bytes(rows));
        arrivals.push_back({u_end[k], c.config().client_id, pi, k});
      }
      finish[pi] = n > 0 ? u_end[n - 1] : 0.0;
    }
    std::sort(arrivals.begin(), arrivals.end(), [](const Arrival& a, const Arrival& b) {
      if (a.t != b.t) return a.t < b.t;
      if (a.client_id != b.client_id) return a.client_id < b.client_id;
      return a.batch_index < b.batch_index;
    });

    // Replay budgeting prices every replay step at the most expensive record
    // shape on the roster, so the budget never overruns the real gap.
    double replay_dt = 0.0;
    for (const SimParticipant& part : participants) {
      const ClientRuntime& c = *part.client;
      const double flops = server.net().train_step_flops(c.config().backbone_id,
                                                         c.config().batch_size, c.seq());
      replay_dt = std::max(replay_dt, flops / server_flops_per_s);
    }

    double next_eval = cfg.eval_every_s > 0.0 ? cfg.eval_every_s : -1.0;
    for (const Arrival& a : arrivals) {
      if (cfg.replay_cap > 0 && a.t > server_free && !server.cache().empty()) {
        const double gap = a.t - server_free;
        const std::size_t budget =
            std::min<std::size_t>(cfg.replay_cap,
                                  static_cast<std::size_t>(gap / replay_dt));
        if (budget > 0) {
          server.idle_replay(budget);
          emit(sink, server_free, "replay", {{"steps", static_cast<double>(budget)}});
          server_free += static_cast<double>(budget) * replay_dt;
        }
      }
      while (next_eval >= 0.0 && next_eval <= a.t) {
        metrics.curve.push_back(take_eval(next_eval, "streaming", server, eb, sink));
        next_eval += cfg.eval_every_s;
      }
      auto packet = participants[a.part].client->process_batch();
      if (!packet) throw StateError("schedule and client batch count disagree");
      const double start = std::max(server_free, a.t);
      server.on_packet(*packet);
      const double dt = packet_step_seconds(server, *packet, server_flops_per_s) *
                        static_cast<double>(server.config().steps_per_arrival);
      server_free = start + dt;
      emit(sink, a.t, "arrival",
           {{"client", static_cast<double>(a.client_id)},
            {"batch", static_cast<double>(a.batch_index)},
            {"bytes", static_cast<double>(packet_frame_bytes(
                 packet->block_count(), packet->batch(), packet->seq, packet->hidden,
                 packet->num_classes, packet->backbone_id.size()))},
            {"queue_delay", start - a.t}});
    }
    for (std::size_t pi = 0; pi < participants.size(); ++pi) {
      server.client_done(participants[pi].client->config().client_id);
      emit(sink, finish[pi], "client-done",
           {{"client", static_cast<double>(participants[pi].client->config().client_id)}});
    }
  } else {
    // Lock-step rounds: everyone uploads batch r, the server idles at the
    // barrier, processes the round, and only then releases round r+1.
    std::size_t rounds = 0;
    for (const SimParticipant& part : participants)
      rounds = std::max(rounds, part.client->batches_total());
    double round_start = 0.0;
    for (std::size_t r = 0; r < rounds; ++r) {
      double barrier = round_start;
      std::vector<ActivationPacket> stash;
      for (std::size_t pi = 0; pi < participants.size(); ++pi) {
        ClientRuntime& c = *participants[pi].client;
        if (r >= c.batches_total()) continue;
        const std::size_t rows = c.batch_rows(r);
        const DeviceProfile& prof = participants[pi].profile;
        const double ready = round_start + prof.compute_seconds(c.step_flops(rows)) +
                             prof.upload_seconds(c.step_upload_bytes(rows));
        barrier = std::max(barrier, ready);
        auto packet = c.process_batch();
        if (!packet) throw StateError("round schedule and client batch count disagree");
        stash.push_back(std::move(*packet));
        if (r + 1 == c.batches_total()) finish[pi] = ready;
      }
      double t = barrier;
      for (ActivationPacket& packet : stash) {
        server.on_packet(packet);
        t += packet_step_seconds(server, packet, server_flops_per_s) *
             static_cast<double>(server.config().steps_per_arrival);
        emit(sink, barrier, "arrival",
             {{"client", static_cast<double>(packet.client_id)},
              {"batch", static_cast<double>(r)},
              {"bytes", static_cast<double>(packet_frame_bytes(
                   packet.block_count(), packet.batch(), packet.seq, packet.hidden,
                   packet.num_classes, packet.backbone_id.size()))},
              {"queue_delay", t - barrier}});
      }
      server_free = t;
      round_start = t;
      metrics.curve.push_back(take_eval(t, "sync-round", server, eb, sink));
    }
    for (std::size_t pi = 0; pi < participants.size(); ++pi) {
      server.client_done(participants[pi].client->config().client_id);
      emit(sink, finish[pi], "client-done",
           {{"client", static_cast<double>(participants[pi].client->config().client_id)}});
    }
  }

  metrics.streaming_end = 0.0;
  for (double f : finish) metrics.streaming_end = std::max(metrics.streaming_end, f);
  emit(sink, metrics.streaming_end, "phase", {}, {{"name", "standalone"}});
  metrics.curve.push_back(
      take_eval(std::max(server_free, metrics.streaming_end), "streaming-end", server, eb, sink));

  // Standalone tuning: one shuffled pass over the cache per epoch, timed at
  // the server's speed. Every epoch covers the same records, so the pass cost
  // is a constant.
  double epoch_seconds = 0.0;
  for (std::size_t i = 0; i < server.cache().size(); ++i)
    epoch_seconds += packet_step_seconds(server, server.cache().record(i), server_flops_per_s);
  double t = std::max(server_free, metrics.streaming_end);
  server.standalone_begin();
  for (std::uint32_t e = 0; e < server.config().standalone_epochs; ++e) {
    const std::size_t steps = server.standalone_epoch();
    t += epoch_seconds;
    emit(sink, t, "epoch", {{"index", static_cast<double>(e)},
                            {"steps", static_cast<double>(steps)}});
    metrics.curve.push_back(take_eval(t, "standalone", server, eb, sink));
  }
  server.standalone_end();
  metrics.wall_end = t;

  const CurvePoint& last = metrics.curve.back();
  metrics.final_loss = last.loss;
  metrics.final_global_accuracy = last.global_accuracy;
  metrics.final_backbone_accuracy = last.backbone_accuracy;
  for (const auto& [id, set] : eval_sets) metrics.raw_backbone_accuracy[id] = set.raw_accuracy();
  if (cfg.target_accuracy > 0.0) {
    for (const CurvePoint& pt : metrics.curve) {
      if (pt.global_accuracy >= cfg.target_accuracy) {
        metrics.time_to_target = pt.t;
        break;
      }
    }
  }
  for (std::size_t pi = 0; pi < participants.size(); ++pi) {
    const ClientRuntime& c = *participants[pi].client;
    ClientReport rep;
    rep.client_id = c.config().client_id;
    rep.backbone_id = c.config().backbone_id;
    rep.samples = c.samples_total();
    rep.packets = c.cost().packets;
    rep.forward_flops = c.cost().forward_flops;
    rep.upload_bytes = c.cost().upload_bytes;
    rep.peak_memory_bytes = c.cost().peak_memory_bytes();
    rep.finish_time = finish[pi];
    metrics.clients.push_back(rep);
  }
  metrics.server = server.counters();
  metrics.cache_records = server.cache().size();
  metrics.cache_payload_bytes = server.cache().payload_bytes();
  metrics.sidenet_checksum = server.net().params().checksum();
  return metrics;
}

void AccountingScenario::validate() const {
  if (clients == 0) throw ConfigError("accounting needs at least one client");
  if (seq == 0 || hidden == 0 || num_layers == 0 || num_classes == 0)
    throw ConfigError("accounting shape fields must be positive");
  if (act_tokens == 0 || act_tokens > seq)
    throw ConfigError("act_tokens must lie in [1, seq]");
  if (block_count == 0 || block_count > num_layers)
    throw ConfigError("block count must lie in [1, num_layers]");
  if (batch == 0) throw ConfigError("accounting batch must be positive");
  if (lora_rank == 0) throw ConfigError("adapter rank must be positive");
}

std::vector<AccountRow> account_rows(const AccountingScenario& s) {
  s.validate();
  std::vector<AccountRow> rows;
  // Cost model shared by every row: a transformer block costs 24*h^2 matmul
  // FLOPs per token (attention projections 8*h^2, 4x FFN 16*h^2), a backward
  // pass costs twice the forward, block parameters total 12*h^2, and adapters
  // on the attention q/v projections hold 4*h*rank parameters per layer.
  const double S = s.samples_per_client;
  const double fwd_sample = 24.0 * static_cast<double>(s.hidden) * s.hidden * s.num_layers * s.seq;
  const double params = 12.0 * static_cast<double>(s.hidden) * s.hidden * s.num_layers;
  const double lora_params = 4.0 * static_cast<double>(s.hidden) * s.lora_rank * s.num_layers;
  const double weights_fp16 = 2.0 * params;
  // Transient forward working set (two fp16 tensors of batch*seq*hidden),
  // charged to every method that runs forward passes.
  const double working = 4.0 * static_cast<double>(s.hidden) * s.seq * s.batch;
  const double rounds = s.rounds;
  const double zero = (s.rounds == 0) ? 0.0 : 1.0;  // zero rounds: nothing ever runs

  {
    AccountRow r;
    r.method = "federated-lora-backprop";
    r.client_flops = zero * 3.0 * fwd_sample * S * rounds;
    r.upload_bytes = zero * rounds * 2.0 * lora_params;
    r.download_bytes = zero * rounds * 2.0 * lora_params;
    // fp16 weights + fp16 adapters + f32 Adam moments + the retained
    // activation graph (8 h-wide tensors per layer per token, fp16).
    r.client_memory_bytes = zero * (weights_fp16 + 2.0 * lora_params + 8.0 * lora_params +
                                    2.0 * 8.0 * s.hidden * s.num_layers * s.seq * s.batch +
                                    working);
    r.backprop_on_device = true;
    rows.push_back(r);
  }
  {
    AccountRow r;
    const double stub_layers = 2.0;
    const double stub_params = 12.0 * static_cast<double>(s.hidden) * s.hidden * stub_layers;
    r.method = "split-layer-tuning";
    r.client_flops = zero * 3.0 * (24.0 * s.hidden * s.hidden * stub_layers * s.seq) * S * rounds;
    // f32 activations up, f32 gradients down, per sample per round.
    r.upload_bytes = zero * rounds * S * 4.0 * s.seq * s.hidden;
    r.download_bytes = zero * rounds * S * 4.0 * s.seq * s.hidden;
    r.client_memory_bytes = zero * (2.0 * stub_params + 8.0 * stub_params +
                                    2.0 * 8.0 * s.hidden * stub_layers * s.seq * s.batch +
                                    working);
    r.backprop_on_device = true;
    rows.push_back(r);
  }
  {
    AccountRow r;
    r.method = "forward-gradient-lora";
    r.client_flops = zero * rounds * s.perturbations * s.batch * fwd_sample;
    // Seeds (u64) and loss deltas (f32) go up; fp16 adapters come down.
    // Device holds the adapters, one perturbation draw, and a gradient
    // accumulator alongside the frozen weights.
    r.upload_bytes = zero * rounds * s.perturbations * 12.0;
    r.download_bytes = zero * rounds * 2.0 * lora_params;
    r.client_memory_bytes = zero * (weights_fp16 + 2.0 * lora_params + 2.0 * lora_params +
                                    4.0 * lora_params + working);
    rows.push_back(r);
  }
  {
    AccountRow r;
    r.method = "streamed-side-tuning";
    // One forward-only pass over the local shard; uploads are the tapped
    // activation footprint at wire precision plus the class deviation.
    r.client_flops = zero * fwd_sample * S;
    r.upload_bytes = zero * S * (2.0 * s.block_count * s.act_tokens * s.hidden +
                                 2.0 * s.num_classes);
    r.download_bytes = 0.0;
    r.client_memory_bytes = zero * (weights_fp16 + working +
                                    s.batch * (2.0 * s.block_count * s.act_tokens * s.hidden +
                                               2.0 * s.num_classes));
    r.trains_while_streaming = true;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace fedmobi
