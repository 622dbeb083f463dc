#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fedmobi/client.hpp"
#include "fedmobi/server.hpp"

namespace fedmobi {

// Device timing model. Compute time is flops / (tflops * 1e12); upload time
// is bytes * 8 / (bandwidth_mbps * 1e6) plus a fixed per-packet overhead.
struct DeviceProfile {
  double tflops = 5e-4;
  double bandwidth_mbps = 60.0;
  double overhead_s = 0.0;

  void validate() const;
  double compute_seconds(double flops) const;
  double upload_seconds(std::uint64_t bytes) const;
};

struct SimParticipant {
  ClientRuntime* client = nullptr;
  DeviceProfile profile;
};

struct SimConfig {
  double server_tflops = 0.0;    // 0 = 100x the fastest participant
  double eval_every_s = 1.0;     // 0 disables periodic streaming evals
  std::size_t replay_cap = 4;    // max replay steps per idle gap
  double target_accuracy = 0.0;  // 0 disables time-to-target tracking
  bool sync_rounds = false;      // lock-step barrier baseline instead of async

  void validate() const;
};

// One timeline sample: the corrected accuracy of every backbone against the
// shared side-network, plus the sample-weighted global accuracy.
struct CurvePoint {
  double t = 0.0;
  std::string phase;
  std::uint64_t steps = 0;  // cumulative optimizer steps at this point
  double loss = 0.0;        // most recent training loss
  double global_accuracy = 0.0;
  std::map<std::string, double> backbone_accuracy;
};

struct ClientReport {
  std::uint32_t client_id = 0;
  std::string backbone_id;
  std::size_t samples = 0;
  std::uint64_t packets = 0;
  double forward_flops = 0.0;
  std::uint64_t upload_bytes = 0;
  std::uint64_t peak_memory_bytes = 0;
  double finish_time = 0.0;  // end of this client's last upload
};

struct RunMetrics {
  std::string mode;              // "async" or "sync"
  double streaming_end = 0.0;    // when the last client finished its pass
  double wall_end = 0.0;         // end of standalone tuning
  double target_accuracy = 0.0;
  double time_to_target = -1.0;  // -1 = never reached
  double final_loss = 0.0;
  double final_global_accuracy = 0.0;
  std::map<std::string, double> final_backbone_accuracy;
  std::map<std::string, double> raw_backbone_accuracy;  // frozen backbones, no correction
  std::vector<CurvePoint> curve;
  std::vector<ClientReport> clients;
  ServerCounters server;
  std::uint64_t cache_records = 0;
  std::uint64_t cache_payload_bytes = 0;
  std::uint64_t sidenet_checksum = 0;
};

// Timeline record for the event log. `num` carries the numeric fields of the
// event, keyed by name.
struct SimEvent {
  double t = 0.0;
  std::string kind;
  std::map<std::string, double> num;
  std::map<std::string, std::string> str;
};

using EventSink = std::function<void(const SimEvent&)>;

// Deterministic discrete-event execution of one full protocol run over the
// given participants, writing packets into `server` and sampling accuracy
// curves against the provided frozen evaluation sets.
//
// Async mode pipelines each device (depth one: batch k+1 computes while batch
// k uploads) and lets the server train per arrival, replay in idle gaps, then
// run standalone tuning when every client has finished. Sync mode instead
// runs lock-step rounds: every client uploads batch r, the server waits at
// the barrier (no replay), processes the round, and only then does round r+1
// begin; standalone tuning still follows. Evaluation is instrumentation and
// costs no simulated time.
RunMetrics simulate(ServerRuntime& server, std::vector<SimParticipant>& participants,
                    const std::map<std::string, FrozenEvalSet>& eval_sets,
                    const SimConfig& cfg, const EventSink& sink = nullptr);

// ---- protocol-level resource accounting ----

// Closed-form cost rows comparing this protocol against standard baselines on
// the same task shape. `act_tokens` is the per-sample activation footprint
// knob: the number of sequence positions a client's uploaded activations
// retain per block (full-sequence uploads set it to the sequence length;
// sparse selection uploads set it lower).
struct AccountingScenario {
  std::uint32_t clients = 3;
  std::uint32_t samples_per_client = 36;
  std::uint32_t seq = 256;
  std::uint32_t act_tokens = 1;
  std::uint32_t hidden = 768;
  std::uint32_t num_layers = 12;
  std::uint32_t block_count = 12;
  std::uint32_t num_classes = 4;
  std::uint32_t batch = 8;
  std::uint32_t rounds = 100;       // communication rounds for round-based baselines
  std::uint32_t lora_rank = 8;
  std::uint32_t perturbations = 300;  // forward-gradient samples per round

  void validate() const;
};

struct AccountRow {
  std::string method;
  double client_flops = 0.0;        // total training compute per client
  double upload_bytes = 0.0;        // per client, whole run
  double download_bytes = 0.0;      // per client, whole run
  double client_memory_bytes = 0.0; // peak device memory
  bool backprop_on_device = false;
  bool trains_while_streaming = false;
};

// Rows: full-model federated fine-tuning, split tuning at a cut layer,
// forward-gradient LoRA tuning, and this system. Zero rounds means zero cost
// for every method.
std::vector<AccountRow> account_rows(const AccountingScenario& s);

}  // namespace fedmobi
