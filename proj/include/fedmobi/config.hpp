#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedmobi/alignment.hpp"
#include "fedmobi/backbone.hpp"
#include "fedmobi/data.hpp"
#include "fedmobi/sim.hpp"
#include "fedmobi/tensor.hpp"

namespace fedmobi {

// INI-style text: [section] headers, key = value lines, # or ; comments.
// Sections may be reopened; redefining a key is an error. Every diagnostic
// carries the 1-based line number.
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text);
  static ConfigFile parse_file(const std::string& path);

  bool has_section(const std::string& section) const;
  std::size_t section_line(const std::string& section) const;
  bool has(const std::string& section, const std::string& key) const;
  const std::string& raw(const std::string& section, const std::string& key) const;
  std::vector<std::string> section_names() const;
  std::vector<std::string> keys(const std::string& section) const;

  // Typed getters with defaults; parse failures name the offending line.
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback) const;
  std::uint32_t get_u32(const std::string& section, const std::string& key,
                        std::uint32_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<std::uint32_t> get_u32_list(const std::string& section, const std::string& key)
      const;

  // Unknown-key rejection: callers declare what they consumed.
  void expect_only(const std::string& section, const std::vector<std::string>& allowed) const;

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };
  std::map<std::string, std::map<std::string, Entry>> sections_;
  std::map<std::string, std::size_t> section_lines_;

  const Entry* find(const std::string& section, const std::string& key) const;
};

struct ClientSpec {
  std::uint32_t client_id = 0;
  std::string backbone;
  std::uint32_t batch_size = 4;
  DeviceProfile profile;
};

// Everything one experiment needs, parsed from a single file. Seeds given as
// 0 mean "derive from the run seed", so one --seed flag re-keys the task,
// the partition, every backbone, the side-network, and the server streams.
struct RunConfig {
  // [run]
  bool sync = false;
  std::uint64_t seed = 1;
  double eval_every_s = 1.0;
  std::size_t replay_cap = 4;
  double server_tflops = 0.0;
  double target_accuracy = 0.0;
  std::size_t eval_batch = 16;
  std::size_t eval_samples = 256;

  // [task]
  SyntheticTaskConfig task;
  std::size_t train_samples = 384;

  // [partition]
  double alpha = 1.0;

  // [train]
  AdamWConfig optimizer;
  std::uint32_t steps_per_arrival = 1;
  std::uint32_t standalone_epochs = 20;
  std::uint32_t rank = 8;

  // [align]
  std::uint32_t block_count = 0;   // 0 = min depth across backbones
  std::uint32_t side_hidden = 0;   // 0 = width rule
  LayerStrategy strategy = LayerStrategy::Uniform;
  std::vector<std::uint32_t> explicit_layers;

  // [backbone.<id>] / [client.<n>]
  std::vector<BackboneConfig> backbones;  // init_seed 0 = derive from run seed
  std::vector<ClientSpec> clients;

  // [account]
  AccountingScenario account;

  void validate() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig parse_run_config_file(const std::string& path);

}  // namespace fedmobi
