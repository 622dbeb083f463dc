#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedmobi/backbone.hpp"
#include "fedmobi/data.hpp"
#include "fedmobi/packet.hpp"
#include "fedmobi/rng.hpp"
#include "fedmobi/sidenet.hpp"

namespace fedmobi {

// Repository of every uploaded packet. Records are kept in a canonical order
// keyed by a salted content digest, so the final contents and iteration order
// depend only on WHAT was uploaded, never on WHEN it arrived. Spill files use
// the packet wire format back to back, so a spilled cache is replayable by
// anything that can read the wire.
class ActivationCache {
 public:
  explicit ActivationCache(std::uint64_t salt = 0) : salt_(salt) {}

  void insert(ActivationPacket p);
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const ActivationPacket& record(std::size_t i) const { return records_.at(i); }
  std::uint64_t key(std::size_t i) const { return keys_.at(i); }
  std::uint64_t payload_bytes() const { return payload_bytes_; }

  // Digest of the key sequence; equal iff the canonical order is equal.
  std::uint64_t order_digest() const;

  // Uniform index draw / full shuffled pass for replay and standalone epochs.
  std::size_t sample(Rng& rng) const;
  std::vector<std::size_t> epoch_order(Rng& rng) const;

  void spill(const std::string& path) const;
  static ActivationCache load(const std::string& path, std::uint64_t salt);

 private:
  std::uint64_t salt_;
  std::vector<std::uint64_t> keys_;         // sorted ascending
  std::vector<ActivationPacket> records_;   // parallel to keys_
  std::uint64_t payload_bytes_ = 0;
};

struct ServerConfig {
  AdamWConfig optimizer;
  std::uint32_t steps_per_arrival = 1;   // immediate updates on each packet
  std::uint32_t standalone_epochs = 20;  // full cache passes after streaming ends
  std::uint64_t cache_seed = 0;          // salts the canonical cache order
  std::uint64_t replay_seed = 0;         // idle replay draws + epoch shuffles

  void validate() const;
};

enum class ServerPhase { Streaming, Standalone, Done };

struct ServerCounters {
  std::uint64_t packets = 0;
  std::uint64_t bytes_received = 0;
  std::uint64_t arrival_steps = 0;
  std::uint64_t replay_steps = 0;
  std::uint64_t standalone_steps = 0;
  double last_loss = 0.0;

  std::uint64_t total_steps() const { return arrival_steps + replay_steps + standalone_steps; }
};

// Trains the shared side-network as packets arrive, with no coordination
// between clients: every arrival triggers immediate optimizer steps on that
// packet, idle gaps are spent replaying cached packets, and once every client
// has finished its single pass the whole cache is tuned for a fixed number of
// shuffled epochs. Phase transitions are one-way; calls out of phase throw.
class ServerRuntime {
 public:
  ServerRuntime(SideNetwork net, ServerConfig cfg);

  ServerRuntime(const ServerRuntime&) = delete;
  ServerRuntime& operator=(const ServerRuntime&) = delete;

  void register_client(std::uint32_t client_id, const std::string& backbone_id);

  // Streaming phase: validate, run steps_per_arrival optimizer steps on the
  // packet, then file it in the cache.
  void on_packet(const ActivationPacket& p);

  // Opportunistic training on cached packets; returns steps actually run
  // (zero while the cache is empty).
  std::size_t idle_replay(std::size_t max_steps);

  void client_done(std::uint32_t client_id);
  bool all_clients_done() const;

  // Standalone tuning, split so a scheduler can interleave evaluations:
  // begin -> one call per epoch -> end. standalone_tune() runs the whole
  // configured schedule.
  void standalone_begin();
  std::size_t standalone_epoch();
  void standalone_end();
  void standalone_tune();

  ServerPhase phase() const { return phase_; }
  const ServerConfig& config() const { return cfg_; }
  SideNetwork& net() { return net_; }
  const SideNetwork& net() const { return net_; }
  const ActivationCache& cache() const { return cache_; }
  const ServerCounters& counters() const { return counters_; }
  const std::vector<std::uint32_t>& uploaded_ids(std::uint32_t client_id) const;
  const std::map<std::uint32_t, std::string>& roster() const { return roster_; }

 private:
  SideNetwork net_;
  ServerConfig cfg_;
  AdamW opt_;
  ActivationCache cache_;
  Rng replay_rng_;
  ServerPhase phase_ = ServerPhase::Streaming;
  ServerCounters counters_;
  std::map<std::uint32_t, std::string> roster_;
  std::map<std::uint32_t, bool> done_;
  std::map<std::uint32_t, std::vector<std::uint32_t>> uploaded_ids_;
  std::uint32_t epochs_run_ = 0;

  void train_step(const ActivationPacket& p, std::uint64_t& counter);
};

// Evaluation data pushed through a frozen backbone exactly once: per-batch
// tapped activations (already at wire precision) plus logits and labels.
// Repeated accuracy queries against an evolving side-network then cost only
// side-network forwards.
class FrozenEvalSet {
 public:
  static FrozenEvalSet build(const FrozenBackbone& backbone, const AlignmentPlan& plan,
                             const Dataset& data, std::size_t batch);

  const std::string& backbone_id() const { return backbone_id_; }
  std::size_t sample_count() const { return sample_count_; }
  double raw_accuracy() const;
  double corrected_accuracy(const SideNetwork& net) const;

 private:
  struct Slice {
    std::vector<Tensor> taps;
    Tensor logits;
    std::vector<std::uint32_t> labels;
  };
  std::string backbone_id_;
  std::size_t sample_count_ = 0;
  std::vector<Slice> slices_;
};

}  // namespace fedmobi
