#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>

#include "doctest.h"
#include "fedmobi/alignment.hpp"

using namespace fedmobi;

namespace {
BackboneConfig bb(const std::string& id, std::uint32_t layers, std::uint32_t hidden) {
  BackboneConfig c;
  c.id = id;
  c.num_layers = layers;
  c.hidden = hidden;
  c.heads = 4;
  c.init_seed = 1;
  return c;
}
}  // namespace

TEST_CASE("uniform taps spread over depth and always include the deepest layer") {
  CHECK(partition_layers(12, 4, LayerStrategy::Uniform) ==
        std::vector<std::uint32_t>{3, 6, 9, 12});
  CHECK(partition_layers(8, 4, LayerStrategy::Uniform) ==
        std::vector<std::uint32_t>{2, 4, 6, 8});
  CHECK(partition_layers(4, 4, LayerStrategy::Uniform) ==
        std::vector<std::uint32_t>{1, 2, 3, 4});
  CHECK(partition_layers(12, 1, LayerStrategy::Uniform) == std::vector<std::uint32_t>{12});
  CHECK(partition_layers(5, 2, LayerStrategy::Uniform) == std::vector<std::uint32_t>{3, 5});
  // strictly increasing and in range for awkward ratios
  for (std::uint32_t layers = 1; layers <= 16; ++layers) {
    for (std::uint32_t blocks = 1; blocks <= layers; ++blocks) {
      const auto taps = partition_layers(layers, blocks, LayerStrategy::Uniform);
      REQUIRE(taps.size() == blocks);
      CHECK(taps.back() == layers);
      for (std::size_t i = 0; i < taps.size(); ++i) {
        CHECK(taps[i] >= 1);
        if (i) CHECK(taps[i] > taps[i - 1]);
      }
    }
  }
}

TEST_CASE("shallow, deep, random, explicit strategies") {
  CHECK(partition_layers(8, 3, LayerStrategy::Shallow) == std::vector<std::uint32_t>{1, 2, 3});
  CHECK(partition_layers(8, 3, LayerStrategy::Deep) == std::vector<std::uint32_t>{6, 7, 8});

  const auto r1 = partition_layers(12, 5, LayerStrategy::Random, 9);
  const auto r2 = partition_layers(12, 5, LayerStrategy::Random, 9);
  const auto r3 = partition_layers(12, 5, LayerStrategy::Random, 10);
  CHECK(r1 == r2);
  CHECK(r1 != r3);
  CHECK(std::is_sorted(r1.begin(), r1.end()));
  CHECK(std::adjacent_find(r1.begin(), r1.end()) == r1.end());

  std::vector<std::uint32_t> want{2, 5, 8};
  CHECK(partition_layers(8, 3, LayerStrategy::Explicit, 0, &want) == want);
  std::vector<std::uint32_t> dup{2, 2, 8};
  CHECK_THROWS_AS(partition_layers(8, 3, LayerStrategy::Explicit, 0, &dup), PlanError);
  std::vector<std::uint32_t> high{2, 5, 9};
  CHECK_THROWS_AS(partition_layers(8, 3, LayerStrategy::Explicit, 0, &high), PlanError);
  std::vector<std::uint32_t> unsorted{5, 2, 8};
  CHECK_THROWS_AS(partition_layers(8, 3, LayerStrategy::Explicit, 0, &unsorted), PlanError);

  CHECK_THROWS_AS(partition_layers(4, 8, LayerStrategy::Uniform), PlanError);
  CHECK_THROWS_AS(partition_layers(4, 0, LayerStrategy::Uniform), PlanError);
}

TEST_CASE("shared width rule") {
  CHECK(side_hidden_rule({32}) == 32);
  CHECK(side_hidden_rule({32, 32, 32}) == 32);
  CHECK(side_hidden_rule({32, 64}) == 64);
  CHECK(side_hidden_rule({64, 32}) == 64);
  CHECK(side_hidden_rule({32, 64, 128}) == 64);
  CHECK(side_hidden_rule({128, 32, 64, 16}) == 32);          // even count: lower middle
  CHECK(side_hidden_rule({64, 64, 128, 32}) == 64);          // duplicates collapse first
  CHECK_THROWS_AS(side_hidden_rule({}), PlanError);
}

TEST_CASE("plan construction over a heterogeneous fleet") {
  const std::vector<BackboneConfig> fleet{bb("tiny", 4, 32), bb("small", 8, 64),
                                          bb("base", 12, 128)};
  const AlignmentPlan plan = make_plan(fleet);
  CHECK(plan.block_count == 4);  // min depth
  CHECK(plan.side_hidden == 64);
  CHECK(plan.num_classes == 4);
  CHECK(plan.taps_for("tiny") == std::vector<std::uint32_t>{1, 2, 3, 4});
  CHECK(plan.taps_for("small") == std::vector<std::uint32_t>{2, 4, 6, 8});
  CHECK(plan.taps_for("base") == std::vector<std::uint32_t>{3, 6, 9, 12});
  CHECK(plan.hidden_for("base") == 128);
  CHECK_THROWS_AS(plan.taps_for("nope"), IdentityError);
  CHECK_THROWS_AS(plan.hidden_for("nope"), IdentityError);

  // digest is stable and sensitive
  CHECK(plan.digest() == make_plan(fleet).digest());
  PlanOptions opts;
  opts.block_count_override = 2;
  CHECK(plan.digest() != make_plan(fleet, opts).digest());
  CHECK(!plan.describe().empty());
}

TEST_CASE("plan options: overrides and explicit layers") {
  const std::vector<BackboneConfig> fleet{bb("a", 8, 64), bb("b", 8, 32)};
  PlanOptions opts;
  opts.side_hidden_override = 48;
  opts.block_count_override = 2;
  const AlignmentPlan plan = make_plan(fleet, opts);
  CHECK(plan.block_count == 2);
  CHECK(plan.side_hidden == 48);
  CHECK(plan.taps_for("a") == std::vector<std::uint32_t>{4, 8});

  PlanOptions ex;
  ex.strategy = LayerStrategy::Explicit;
  ex.explicit_layers = {3, 7, 8};
  const AlignmentPlan eplan = make_plan(fleet, ex);
  CHECK(eplan.block_count == 3);  // inferred from the list
  CHECK(eplan.taps_for("a") == std::vector<std::uint32_t>{3, 7, 8});
  CHECK(eplan.taps_for("b") == std::vector<std::uint32_t>{3, 7, 8});

  // explicit taps beyond some backbone's depth cannot be planned
  std::vector<BackboneConfig> uneven{bb("a", 8, 64), bb("b", 4, 32)};
  CHECK_THROWS_AS(make_plan(uneven, ex), PlanError);

  // duplicate ids are rejected
  std::vector<BackboneConfig> dup{bb("a", 8, 64), bb("a", 8, 64)};
  CHECK_THROWS_AS(make_plan(dup), PlanError);
  CHECK_THROWS_AS(make_plan({}), PlanError);
}

TEST_CASE("importance selection is stable and ordered") {
  // scores: block 2 best, then 0, then 3, then 1
  const std::vector<double> scores{0.5, 0.1, 0.9, 0.3};
  CHECK(importance_select(scores, 1) == std::vector<std::uint32_t>{2});
  CHECK(importance_select(scores, 2) == std::vector<std::uint32_t>{0, 2});
  CHECK(importance_select(scores, 4) == std::vector<std::uint32_t>{0, 1, 2, 3});
  // ties keep the earlier block (stable)
  const std::vector<double> tied{0.7, 0.7, 0.7};
  CHECK(importance_select(tied, 2) == std::vector<std::uint32_t>{0, 1});
  CHECK_THROWS_AS(importance_select(scores, 5), PlanError);
  CHECK_THROWS_AS(importance_select(scores, 0), PlanError);
}

TEST_CASE("strategy names round trip") {
  for (LayerStrategy s : {LayerStrategy::Uniform, LayerStrategy::Shallow, LayerStrategy::Deep,
                          LayerStrategy::Random, LayerStrategy::Explicit})
    CHECK(layer_strategy_from(to_string(s)) == s);
  CHECK_THROWS_AS(layer_strategy_from("sideways"), ConfigError);
}
