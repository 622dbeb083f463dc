#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "fedmobi/diagnostics.hpp"
#include "fedmobi/errors.hpp"
#include "fedmobi/experiment.hpp"

namespace {

using namespace fedmobi;

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 0;  // 0 = keep the config's seed
  bool seed_set = false;
  std::string out_dir;
  std::uint32_t sweep = 1;
};

RunConfig load_config(const CommonOpts& opts) {
  RunConfig rc = parse_run_config_file(opts.config_path);
  if (opts.seed_set) rc.seed = opts.seed;
  return rc;
}

void print_run_summary(const RunConfig& rc, const RunMetrics& m) {
  std::printf("mode=%s seed=%" PRIu64 " clients=%zu\n", m.mode.c_str(), rc.seed,
              m.clients.size());
  std::printf("streaming_end=%.3fs wall_end=%.3fs\n", m.streaming_end, m.wall_end);
  if (m.target_accuracy > 0.0)
    std::printf("target=%.3f time_to_target=%.3fs\n", m.target_accuracy, m.time_to_target);
  std::printf("final: loss=%.6f global_accuracy=%.4f\n", m.final_loss,
              m.final_global_accuracy);
  for (const auto& [id, acc] : m.final_backbone_accuracy) {
    const double raw = m.raw_backbone_accuracy.count(id) ? m.raw_backbone_accuracy.at(id) : 0.0;
    std::printf("  %-12s corrected=%.4f frozen=%.4f\n", id.c_str(), acc, raw);
  }
  std::printf("server: packets=%" PRIu64 " steps(arrival/replay/standalone)=%" PRIu64 "/%" PRIu64
              "/%" PRIu64 "\n",
              m.server.packets, m.server.arrival_steps, m.server.replay_steps,
              m.server.standalone_steps);
}

int cmd_run(const CommonOpts& opts) {
  const RunConfig base = load_config(opts);
  if (opts.sweep <= 1) {
    if (opts.out_dir.empty()) {
      const RunMetrics m = run_experiment(base);
      print_run_summary(base, m);
    } else {
      const RunMetrics m = run_and_write(base, opts.out_dir);
      print_run_summary(base, m);
      std::printf("artifacts: %s/{metrics.json,events.jsonl,curve.csv,checkpoint.bin}\n",
                  opts.out_dir.c_str());
    }
    return 0;
  }

  // Seed sweep: seeds base..base+N-1, one worker thread each, bounded by the
  // hardware thread count. Each seed writes to its own subdirectory.
  std::vector<RunConfig> configs;
  for (std::uint32_t i = 0; i < opts.sweep; ++i) {
    RunConfig rc = base;
    rc.seed = base.seed + i;
    configs.push_back(rc);
  }
  std::vector<RunMetrics> results(configs.size());
  std::vector<std::string> failures(configs.size());
  std::atomic<std::size_t> cursor{0};
  const std::size_t workers =
      std::min<std::size_t>(configs.size(),
                            std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = cursor.fetch_add(1);
        if (i >= configs.size()) return;
        try {
          if (opts.out_dir.empty()) {
            results[i] = run_experiment(configs[i]);
          } else {
            const std::filesystem::path sub =
                std::filesystem::path(opts.out_dir) /
                ("seed-" + std::to_string(configs[i].seed));
            results[i] = run_and_write(configs[i], sub.string());
          }
        } catch (const std::exception& e) {
          failures[i] = e.what();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();

  bool failed = false;
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    if (!failures[i].empty()) {
      std::printf("seed=%" PRIu64 " FAILED: %s\n", configs[i].seed, failures[i].c_str());
      failed = true;
      continue;
    }
    const double acc = results[i].final_global_accuracy;
    sum += acc;
    sum2 += acc * acc;
    std::printf("seed=%" PRIu64 " global_accuracy=%.4f loss=%.6f wall_end=%.3fs\n",
                configs[i].seed, acc, results[i].final_loss, results[i].wall_end);
  }
  if (failed) return 1;
  const double n = static_cast<double>(configs.size());
  const double mean = sum / n;
  const double var = std::max(0.0, sum2 / n - mean * mean);
  std::printf("sweep: n=%u mean_global_accuracy=%.4f stddev=%.4f\n", opts.sweep, mean,
              std::sqrt(var));
  return 0;
}

int cmd_account(const CommonOpts& opts) {
  const RunConfig rc = load_config(opts);
  const std::vector<AccountRow> rows = account_rows(rc.account);
  std::printf("%-24s %14s %14s %14s %14s  %s\n", "method", "client_tflops", "upload_mb",
              "download_mb", "memory_mb", "notes");
  for (const AccountRow& r : rows) {
    std::string notes;
    if (r.backprop_on_device) notes += "backprop-on-device ";
    if (r.trains_while_streaming) notes += "trains-while-streaming";
    std::printf("%-24s %14.4f %14.4f %14.4f %14.2f  %s\n", r.method.c_str(),
                r.client_flops / 1e12, r.upload_bytes / 1e6, r.download_bytes / 1e6,
                r.client_memory_bytes / 1e6, notes.c_str());
  }
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    const std::filesystem::path path = std::filesystem::path(opts.out_dir) / "accounting.json";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw StateError("cannot open accounting.json for writing");
    out << account_to_json(rc.account, rows);
    std::printf("wrote %s\n", path.c_str());
  }
  return 0;
}

int cmd_partition(const CommonOpts& opts) {
  const RunConfig rc = load_config(opts);
  const PartitionReport report = build_partition_report(rc);
  std::printf("samples=%zu clients=%zu alpha=%.3f mean_label_tv=%.4f\n", report.samples,
              report.shard_sizes.size(), rc.alpha, report.mean_label_tv);
  for (std::size_t i = 0; i < report.shard_sizes.size(); ++i) {
    std::printf("client %u: %zu samples, labels [", rc.clients[i].client_id,
                report.shard_sizes[i]);
    const auto& hist = report.label_histograms[i];
    for (std::size_t c = 0; c < hist.size(); ++c)
      std::printf("%s%zu", c ? ", " : "", hist[c]);
    std::printf("]\n");
  }
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    const std::filesystem::path path = std::filesystem::path(opts.out_dir) / "partition.json";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw StateError("cannot open partition.json for writing");
    out << partition_to_json(rc, report);
    std::printf("wrote %s\n", path.c_str());
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  const std::vector<DiagnosticResult> results = gradcheck_suite(seed);
  bool all = true;
  for (const DiagnosticResult& r : results) {
    std::printf("%s %-16s max_rel_err=%.3e bound=%.0e\n", r.pass ? "PASS" : "FAIL",
                r.name.c_str(), r.max_rel_err, r.bound);
    all = all && r.pass;
  }
  if (!all) throw NumericError("gradient check failed");
  std::printf("all %zu gradient checks passed\n", results.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated side-tuning over frozen heterogeneous backbones"};
  app.require_subcommand(1);

  CommonOpts run_opts, account_opts, partition_opts;
  std::uint64_t gradcheck_seed = 11;

  CLI::App* run = app.add_subcommand("run", "Simulate a full training run from a config file");
  run->add_option("config", run_opts.config_path, "Run configuration file")
      ->required();
  run->add_option("--seed", run_opts.seed, "Override the config seed")
      ->trigger_on_parse()
      ->each([&](const std::string&) { run_opts.seed_set = true; });
  run->add_option("--out-dir", run_opts.out_dir,
                  "Write metrics.json, events.jsonl, curve.csv, checkpoint.bin here");
  run->add_option("--sweep", run_opts.sweep, "Run N seeds (base seed upward) in parallel")
      ->check(CLI::PositiveNumber);

  CLI::App* account = app.add_subcommand("account",
                                         "Closed-form per-client cost comparison");
  account->add_option("config", account_opts.config_path, "Run configuration file")
      ->required();
  account->add_option("--out-dir", account_opts.out_dir, "Write accounting.json here");

  CLI::App* partition = app.add_subcommand("partition",
                                           "Preview the non-IID shard assignment");
  partition->add_option("config", partition_opts.config_path, "Run configuration file")
      ->required();
  partition->add_option("--seed", partition_opts.seed, "Override the config seed")
      ->trigger_on_parse()
      ->each([&](const std::string&) { partition_opts.seed_set = true; });
  partition->add_option("--out-dir", partition_opts.out_dir, "Write partition.json here");

  CLI::App* gradcheck = app.add_subcommand("gradcheck",
                                           "Verify every op's gradients by finite differences");
  gradcheck->add_option("--seed", gradcheck_seed, "Seed for the check tensors");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_opts);
    if (account->parsed()) return cmd_account(account_opts);
    if (partition->parsed()) return cmd_partition(partition_opts);
    if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << "\n";
    return 4;
  } catch (const PhaseError& e) {
    std::cerr << "phase error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
