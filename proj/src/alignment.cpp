#include "fedmobi/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fedmobi/errors.hpp"
#include "fedmobi/rng.hpp"

namespace fedmobi {

LayerStrategy layer_strategy_from(const std::string& name) {
  if (name == "uniform") return LayerStrategy::Uniform;
  if (name == "shallow") return LayerStrategy::Shallow;
  if (name == "deep") return LayerStrategy::Deep;
  if (name == "random") return LayerStrategy::Random;
  if (name == "explicit") return LayerStrategy::Explicit;
  throw ConfigError("unknown layer strategy '" + name + "'");
}

std::string to_string(LayerStrategy s) {
  switch (s) {
    case LayerStrategy::Uniform: return "uniform";
    case LayerStrategy::Shallow: return "shallow";
    case LayerStrategy::Deep: return "deep";
    case LayerStrategy::Random: return "random";
    case LayerStrategy::Explicit: return "explicit";
  }
  return "?";
}

std::vector<std::uint32_t> partition_layers(std::uint32_t num_layers, std::uint32_t block_count,
                                            LayerStrategy strategy, std::uint64_t seed,
                                            const std::vector<std::uint32_t>* explicit_layers) {
  if (num_layers == 0) throw PlanError("partition_layers: num_layers must be positive");
  if (block_count == 0) throw PlanError("partition_layers: block_count must be positive");
  if (block_count > num_layers)
    throw PlanError("partition_layers: block_count " + std::to_string(block_count) +
                    " exceeds num_layers " + std::to_string(num_layers));
  std::vector<std::uint32_t> out;
  out.reserve(block_count);
  switch (strategy) {
    case LayerStrategy::Uniform:
      // round half up; increments of num_layers/block_count >= 1 keep the
      // rounded values strictly increasing.
      for (std::uint32_t i = 1; i <= block_count; ++i)
        out.push_back(static_cast<std::uint32_t>(
            std::llround(double(i) * double(num_layers) / double(block_count))));
      break;
    case LayerStrategy::Shallow:
      for (std::uint32_t i = 1; i <= block_count; ++i) out.push_back(i);
      break;
    case LayerStrategy::Deep:
      for (std::uint32_t i = num_layers - block_count + 1; i <= num_layers; ++i)
        out.push_back(i);
      break;
    case LayerStrategy::Random: {
      Rng rng(derive_seed(seed, "partition_layers.random"));
      std::vector<std::uint32_t> all(num_layers);
      std::iota(all.begin(), all.end(), 1);
      rng.shuffle(all);
      out.assign(all.begin(), all.begin() + block_count);
      std::sort(out.begin(), out.end());
      break;
    }
    case LayerStrategy::Explicit: {
      if (!explicit_layers) throw PlanError("partition_layers: explicit strategy needs layers");
      out = *explicit_layers;
      if (out.size() != block_count)
        throw PlanError("partition_layers: explicit list has " + std::to_string(out.size()) +
                        " layers, expected " + std::to_string(block_count));
      std::set<std::uint32_t> uniq(out.begin(), out.end());
      if (uniq.size() != out.size()) throw PlanError("partition_layers: duplicate explicit layer");
      if (!std::is_sorted(out.begin(), out.end()))
        throw PlanError("partition_layers: explicit layers must be sorted");
      for (auto l : out)
        if (l < 1 || l > num_layers)
          throw PlanError("partition_layers: explicit layer " + std::to_string(l) +
                          " out of range 1.." + std::to_string(num_layers));
      break;
    }
  }
  return out;
}

std::uint32_t side_hidden_rule(const std::vector<std::uint32_t>& hidden_sizes) {
  if (hidden_sizes.empty()) throw PlanError("side_hidden_rule: no hidden sizes");
  std::set<std::uint32_t> uniq(hidden_sizes.begin(), hidden_sizes.end());
  std::vector<std::uint32_t> s(uniq.begin(), uniq.end());
  if (s.size() == 1) return s[0];
  if (s.size() == 2) return s[1];
  // median; lower of the middle pair when even
  return s[(s.size() - 1) / 2];
}

const std::vector<std::uint32_t>& AlignmentPlan::taps_for(const std::string& backbone_id) const {
  auto it = tap_layers.find(backbone_id);
  if (it == tap_layers.end())
    throw IdentityError("plan: unknown backbone '" + backbone_id + "'");
  return it->second;
}

std::uint32_t AlignmentPlan::hidden_for(const std::string& backbone_id) const {
  auto it = hidden_of.find(backbone_id);
  if (it == hidden_of.end())
    throw IdentityError("plan: unknown backbone '" + backbone_id + "'");
  return it->second;
}

std::string AlignmentPlan::describe() const {
  std::string s = "blocks=" + std::to_string(block_count) +
                  " side_hidden=" + std::to_string(side_hidden) +
                  " classes=" + std::to_string(num_classes);
  for (const auto& [id, taps] : tap_layers) {
    s += " " + id + "(h=" + std::to_string(hidden_for(id)) + "):[";
    for (std::size_t i = 0; i < taps.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(taps[i]);
    }
    s += "]";
  }
  return s;
}

std::uint64_t AlignmentPlan::digest() const {
  std::string d = describe();
  return fnv1a64(d.data(), d.size());
}

AlignmentPlan make_plan(const std::vector<BackboneConfig>& backbones, const PlanOptions& opts) {
  if (backbones.empty()) throw PlanError("make_plan: no backbones");
  AlignmentPlan plan;
  std::uint32_t min_layers = backbones[0].num_layers;
  plan.num_classes = backbones[0].num_classes;
  std::vector<std::uint32_t> hiddens;
  for (const auto& cfg : backbones) {
    cfg.validate();
    if (plan.tap_layers.count(cfg.id))
      throw PlanError("make_plan: backbone id '" + cfg.id + "' defined more than once");
    plan.tap_layers[cfg.id] = {};  // reserve the id; filled below
    plan.hidden_of[cfg.id] = cfg.hidden;
    hiddens.push_back(cfg.hidden);
    min_layers = std::min(min_layers, cfg.num_layers);
    if (cfg.num_classes != plan.num_classes)
      throw PlanError("make_plan: backbone '" + cfg.id + "' has " +
                      std::to_string(cfg.num_classes) + " classes, others have " +
                      std::to_string(plan.num_classes));
  }
  plan.block_count = opts.block_count_override ? opts.block_count_override : min_layers;
  if (opts.strategy == LayerStrategy::Explicit && !opts.block_count_override)
    plan.block_count = static_cast<std::uint32_t>(opts.explicit_layers.size());
  if (plan.block_count > min_layers)
    throw PlanError("make_plan: block_count " + std::to_string(plan.block_count) +
                    " exceeds the shallowest backbone depth " + std::to_string(min_layers));
  plan.side_hidden = opts.side_hidden_override ? opts.side_hidden_override
                                               : side_hidden_rule(hiddens);
  const std::vector<std::uint32_t>* explicit_list =
      opts.strategy == LayerStrategy::Explicit ? &opts.explicit_layers : nullptr;
  for (const auto& cfg : backbones)
    plan.tap_layers[cfg.id] =
        partition_layers(cfg.num_layers, plan.block_count, opts.strategy, opts.seed,
                         explicit_list);
  return plan;
}

std::vector<std::uint32_t> importance_select(const std::vector<double>& importance,
                                             std::uint32_t keep) {
  if (keep == 0) throw PlanError("importance_select: keep must be positive");
  if (keep > importance.size())
    throw PlanError("importance_select: keep " + std::to_string(keep) + " exceeds " +
                    std::to_string(importance.size()) + " blocks");
  std::vector<std::uint32_t> idx(importance.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return importance[a] > importance[b]; });
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace fedmobi
