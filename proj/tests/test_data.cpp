#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cstdio>
#include <set>

#include "doctest.h"
#include "fedmobi/data.hpp"
#include "fedmobi/errors.hpp"

using namespace fedmobi;

namespace {
SyntheticTaskConfig small_task() {
  SyntheticTaskConfig t;
  t.vocab = 64;
  t.num_classes = 4;
  t.seq = 16;
  t.signal = 0.9;
  return t;
}
}  // namespace

TEST_CASE("dataset generation is deterministic and well formed") {
  const SyntheticTaskConfig task = small_task();
  Dataset a = generate_dataset(task, 100, 5);
  Dataset b = generate_dataset(task, 100, 5);
  Dataset c = generate_dataset(task, 100, 6);
  CHECK(a.size() == 100);
  CHECK(a.tokens.size() == 100 * task.seq);
  CHECK(a.tokens == b.tokens);
  CHECK(a.labels == b.labels);
  CHECK(a.tokens != c.tokens);
  for (std::uint32_t tok : a.tokens) CHECK(tok < task.vocab);
  for (std::uint16_t lab : a.labels) CHECK(lab < task.num_classes);
  // all classes should appear in a 100-sample draw
  std::set<std::uint16_t> seen(a.labels.begin(), a.labels.end());
  CHECK(seen.size() == task.num_classes);
}

TEST_CASE("signal strength controls task difficulty") {
  SyntheticTaskConfig strong = small_task();
  SyntheticTaskConfig none = small_task();
  none.signal = 0.0;
  const Dataset easy = generate_dataset(strong, 400, 9);
  const Dataset noise = generate_dataset(none, 400, 9);
  CHECK(subset_count_accuracy(easy) > 0.9);
  CHECK(subset_count_accuracy(noise) < 0.45);  // near chance (0.25)
}

TEST_CASE("dataset save/load round trip") {
  const Dataset ds = generate_dataset(small_task(), 37, 2);
  const std::string path = "test_dataset_roundtrip.bin";
  ds.save(path);
  const Dataset back = Dataset::load(path);
  CHECK(back.task.vocab == ds.task.vocab);
  CHECK(back.task.seq == ds.task.seq);
  CHECK(back.tokens == ds.tokens);
  CHECK(back.labels == ds.labels);
  CHECK_THROWS_AS(Dataset::load("no_such_file.bin"), DataError);
  std::remove(path.c_str());
}

TEST_CASE("partition conserves samples and is deterministic") {
  const Dataset ds = generate_dataset(small_task(), 120, 3);
  PartitionSpec spec;
  spec.num_clients = 3;
  spec.alpha = 0.5;
  spec.seed = 11;
  const std::vector<Shard> shards = partition_dataset(ds, spec);
  REQUIRE(shards.size() == 3);

  std::vector<std::uint32_t> all;
  for (const Shard& s : shards) {
    CHECK(!s.sample_ids.empty());
    all.insert(all.end(), s.sample_ids.begin(), s.sample_ids.end());
  }
  std::sort(all.begin(), all.end());
  REQUIRE(all.size() == 120);
  for (std::uint32_t i = 0; i < 120; ++i) CHECK(all[i] == i);

  const std::vector<Shard> again = partition_dataset(ds, spec);
  for (std::size_t i = 0; i < 3; ++i) CHECK(again[i].sample_ids == shards[i].sample_ids);

  spec.seed = 12;
  const std::vector<Shard> other = partition_dataset(ds, spec);
  bool any_diff = false;
  for (std::size_t i = 0; i < 3; ++i)
    any_diff = any_diff || other[i].sample_ids != shards[i].sample_ids;
  CHECK(any_diff);
}

TEST_CASE("alpha controls label skew") {
  const Dataset ds = generate_dataset(small_task(), 400, 4);
  PartitionSpec skewed{4, 0.1, 21};
  PartitionSpec iid{4, 100.0, 21};
  const double tv_skewed = mean_label_tv(ds, partition_dataset(ds, skewed));
  const double tv_iid = mean_label_tv(ds, partition_dataset(ds, iid));
  CHECK(tv_skewed > tv_iid + 0.1);
  CHECK(tv_iid < 0.1);
}

TEST_CASE("label histograms match shard contents") {
  const Dataset ds = generate_dataset(small_task(), 90, 8);
  PartitionSpec spec{3, 1.0, 5};
  const std::vector<Shard> shards = partition_dataset(ds, spec);
  const auto hist = label_histograms(ds, shards);
  REQUIRE(hist.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    std::size_t total = 0;
    for (std::size_t c = 0; c < hist[i].size(); ++c) total += hist[i][c];
    CHECK(total == shards[i].sample_ids.size());
  }
}

TEST_CASE("partition rejects impossible splits") {
  const Dataset ds = generate_dataset(small_task(), 2, 1);
  PartitionSpec spec{5, 1.0, 1};
  CHECK_THROWS_AS(partition_dataset(ds, spec), DataError);
  SyntheticTaskConfig bad = small_task();
  bad.signal = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
