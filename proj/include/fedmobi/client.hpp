#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedmobi/alignment.hpp"
#include "fedmobi/backbone.hpp"
#include "fedmobi/data.hpp"
#include "fedmobi/packet.hpp"

namespace fedmobi {

struct ClientConfig {
  std::uint32_t client_id = 0;
  std::string backbone_id;
  std::uint32_t batch_size = 4;

  void validate() const;
};

// Device-side resource ledger. Forward-only participation means no optimizer
// state and no retained activation graph, ever; those fields exist so the
// accounting explicitly says zero rather than omitting them.
struct ClientCost {
  double forward_flops = 0.0;
  std::uint64_t upload_bytes = 0;
  std::uint64_t backbone_bytes = 0;        // frozen weights, held at wire precision
  std::uint64_t activation_bytes = 0;      // one batch of tapped activations + deviation
  std::uint64_t optimizer_bytes = 0;       // structurally zero on a forward-only device
  std::uint64_t retained_graph_bytes = 0;  // structurally zero on a forward-only device
  std::uint64_t packets = 0;

  std::uint64_t peak_memory_bytes() const {
    return backbone_bytes + activation_bytes + optimizer_bytes + retained_graph_bytes;
  }
};

// One participant: a frozen backbone plus a local shard, consumed in a single
// pass. Each step runs one forward pass over the next minibatch, captures the
// planned tap activations, computes the output deviation, quantizes both
// through wire precision, and emits the packet. Labels and tokens never leave
// the device.
class ClientRuntime {
 public:
  ClientRuntime(ClientConfig cfg, const FrozenBackbone& backbone, const AlignmentPlan& plan,
                const Dataset& data, Shard shard);

  // Next packet, or nullopt once the single pass over the shard is complete.
  std::optional<ActivationPacket> process_batch();

  bool exhausted() const { return next_ == shard_.sample_ids.size(); }
  std::size_t batches_done() const { return batches_done_; }
  std::size_t batches_total() const;
  std::size_t samples_total() const { return shard_.sample_ids.size(); }
  std::size_t seq() const { return data_->task.seq; }
  const Shard& shard() const { return shard_; }
  const ClientConfig& config() const { return cfg_; }
  const ClientCost& cost() const { return cost_; }

  // Cost of one forward step at this client's shapes (used by the scheduler
  // to price a batch before running it).
  double step_flops(std::size_t batch) const;
  std::uint64_t step_upload_bytes(std::size_t batch) const;
  std::size_t batch_rows(std::size_t batch_index) const;

 private:
  ClientConfig cfg_;
  const FrozenBackbone* backbone_;
  const AlignmentPlan* plan_;
  const Dataset* data_;
  Shard shard_;
  std::size_t next_ = 0;
  std::size_t batches_done_ = 0;
  ClientCost cost_;
};

}  // namespace fedmobi
