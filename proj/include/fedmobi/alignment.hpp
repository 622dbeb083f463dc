#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedmobi/backbone.hpp"

namespace fedmobi {

enum class LayerStrategy { Uniform, Shallow, Deep, Random, Explicit };

LayerStrategy layer_strategy_from(const std::string& name);
std::string to_string(LayerStrategy s);

// Choose `block_count` tap layers out of 1..num_layers. Results are sorted
// and distinct. Uniform picks round(i * num_layers / block_count) for
// i = 1..block_count (so the deepest layer is always included); shallow takes
// the first block_count layers, deep the last; random draws a sorted distinct
// subset from the given seed; explicit validates a caller-provided list.
std::vector<std::uint32_t> partition_layers(std::uint32_t num_layers, std::uint32_t block_count,
                                            LayerStrategy strategy, std::uint64_t seed = 0,
                                            const std::vector<std::uint32_t>* explicit_layers =
                                                nullptr);

// How the shared side-network width is chosen when not set explicitly:
// one distinct hidden size -> that size; two -> the larger; three or more ->
// the median (lower of the two middle values when the count is even).
std::uint32_t side_hidden_rule(const std::vector<std::uint32_t>& hidden_sizes);

// Cross-model contract: every participating backbone taps `block_count`
// layers; block j of every backbone feeds the same shared adapter j through a
// per-backbone projection hidden_i -> side_hidden.
struct AlignmentPlan {
  std::uint32_t block_count = 0;
  std::uint32_t side_hidden = 0;
  std::uint32_t num_classes = 0;
  // backbone id -> (tap layers, hidden size)
  std::map<std::string, std::vector<std::uint32_t>> tap_layers;
  std::map<std::string, std::uint32_t> hidden_of;

  const std::vector<std::uint32_t>& taps_for(const std::string& backbone_id) const;
  std::uint32_t hidden_for(const std::string& backbone_id) const;
  // Canonical serialization digest; checkpoints bind to it.
  std::uint64_t digest() const;
  std::string describe() const;
};

struct PlanOptions {
  std::uint32_t side_hidden_override = 0;   // 0 = apply side_hidden_rule
  std::uint32_t block_count_override = 0;   // 0 = min depth across backbones
  LayerStrategy strategy = LayerStrategy::Uniform;
  std::uint64_t seed = 0;                   // for the random strategy
  std::vector<std::uint32_t> explicit_layers;  // for the explicit strategy
};

AlignmentPlan make_plan(const std::vector<BackboneConfig>& backbones,
                        const PlanOptions& opts = {});

// Rank blocks by importance scores, descending (stable on ties), and return
// the chosen block indices (0-based), sorted ascending. Used with the offline
// leave-one-block-out scores to re-select taps after a trained run.
std::vector<std::uint32_t> importance_select(const std::vector<double>& importance,
                                             std::uint32_t keep);

}  // namespace fedmobi
