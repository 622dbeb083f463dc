#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fedmobi/config.hpp"
#include "fedmobi/sim.hpp"

namespace fedmobi {

// A fully materialized run: datasets generated, shards dealt, backbones
// built, plan and side-network constructed, clients wired to their shards.
// Every random stream is derived from the one run seed under a distinct
// label, so changing the seed re-keys everything and nothing else.
struct Experiment {
  RunConfig rc;
  Dataset train;
  Dataset eval;
  std::vector<Shard> shards;
  std::map<std::string, FrozenBackbone> backbones;
  AlignmentPlan plan;
  std::map<std::string, FrozenEvalSet> eval_sets;
  std::unique_ptr<ServerRuntime> server;
  std::vector<std::unique_ptr<ClientRuntime>> clients;
  std::vector<SimParticipant> participants;

  Experiment() = default;
  Experiment(const Experiment&) = delete;
  Experiment& operator=(const Experiment&) = delete;
};

std::unique_ptr<Experiment> build_experiment(const RunConfig& rc);

// Build and simulate in one go.
RunMetrics run_experiment(const RunConfig& rc, const EventSink& sink = nullptr);

// Build, simulate with an event log, and write the artifact set into out_dir:
// metrics.json, events.jsonl, curve.csv, checkpoint.bin. The directory is
// created if missing. Identical configs produce byte-identical artifacts.
RunMetrics run_and_write(const RunConfig& rc, const std::string& out_dir);

std::string metrics_to_json(const RunConfig& rc, const AlignmentPlan& plan,
                            const RunMetrics& m);
std::string event_to_json(const SimEvent& e);
std::string curve_to_csv(const RunMetrics& m);

struct PartitionReport {
  std::size_t samples = 0;
  std::vector<std::size_t> shard_sizes;
  std::vector<std::vector<std::size_t>> label_histograms;  // client x class
  double mean_label_tv = 0.0;
};

// Deal the training set into shards exactly as a run would, without running.
PartitionReport build_partition_report(const RunConfig& rc);
std::string partition_to_json(const RunConfig& rc, const PartitionReport& report);

std::string account_to_json(const AccountingScenario& s, const std::vector<AccountRow>& rows);

}  // namespace fedmobi
