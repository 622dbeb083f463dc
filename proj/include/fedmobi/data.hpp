#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedmobi {

// Class-conditional token model: class c elevates the probability of its own
// disjoint token subset (tokens [c*k, (c+1)*k), k = vocab/num_classes) by the
// signal strength; the rest of the mass is uniform over the vocabulary.
// signal = 0 is indistinguishable from uniform noise.
struct SyntheticTaskConfig {
  std::uint32_t vocab = 64;
  std::uint32_t num_classes = 4;
  std::uint32_t seq = 16;
  double signal = 0.9;

  void validate() const;
};

struct Dataset {
  SyntheticTaskConfig task;
  std::vector<std::uint32_t> tokens;  // size() * task.seq, row-major
  std::vector<std::uint16_t> labels;  // one per sample

  std::size_t size() const { return labels.size(); }
  const std::uint32_t* sample_tokens(std::size_t i) const { return &tokens[i * task.seq]; }

  void save(const std::string& path) const;
  static Dataset load(const std::string& path);
};

Dataset generate_dataset(const SyntheticTaskConfig& task, std::size_t n, std::uint64_t seed);

// Label-count oracle: classify by which class's token subset appears most.
// An accuracy reference for the task itself, independent of any model.
double subset_count_accuracy(const Dataset& ds);

struct PartitionSpec {
  std::uint32_t num_clients = 3;
  double alpha = 1.0;  // Dirichlet concentration over clients, drawn per class
  std::uint64_t seed = 0;
};

struct Shard {
  std::vector<std::uint32_t> sample_ids;
};

// Non-IID split: for each class, draw client proportions from Dir(alpha) and
// deal that class's samples out by largest-remainder rounding. Every sample
// lands in exactly one shard. Draws where some client ends up empty are
// re-drawn a bounded number of times before failing.
std::vector<Shard> partition_dataset(const Dataset& ds, const PartitionSpec& spec);

// Per-client label histograms (rows: clients, cols: classes).
std::vector<std::vector<std::size_t>> label_histograms(const Dataset& ds,
                                                       const std::vector<Shard>& shards);

// Mean over clients of total-variation distance between the client label
// distribution and the global one. 0 = perfectly IID.
double mean_label_tv(const Dataset& ds, const std::vector<Shard>& shards);

}  // namespace fedmobi
