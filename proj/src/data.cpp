#include "fedmobi/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

#include "fedmobi/errors.hpp"
#include "fedmobi/rng.hpp"

namespace fedmobi {

void SyntheticTaskConfig::validate() const {
  if (vocab == 0 || num_classes == 0 || seq == 0)
    throw ConfigError("task: vocab, classes and seq must be positive");
  if (num_classes > vocab) throw ConfigError("task: more classes than vocabulary tokens");
  if (signal < 0.0 || signal > 1.0) throw ConfigError("task: signal must be in [0,1]");
}

Dataset generate_dataset(const SyntheticTaskConfig& task, std::size_t n, std::uint64_t seed) {
  task.validate();
  Rng rng(derive_seed(seed, "task.generate"));
  Dataset ds;
  ds.task = task;
  ds.tokens.resize(n * task.seq);
  ds.labels.resize(n);
  std::uint32_t k = task.vocab / task.num_classes;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t label = static_cast<std::uint32_t>(rng.uniform_int(task.num_classes));
    ds.labels[i] = static_cast<std::uint16_t>(label);
    for (std::uint32_t t = 0; t < task.seq; ++t) {
      std::uint32_t tok;
      if (rng.uniform() < task.signal)
        tok = label * k + static_cast<std::uint32_t>(rng.uniform_int(k));
      else
        tok = static_cast<std::uint32_t>(rng.uniform_int(task.vocab));
      ds.tokens[i * task.seq + t] = tok;
    }
  }
  return ds;
}

double subset_count_accuracy(const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  std::uint32_t k = ds.task.vocab / ds.task.num_classes;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::vector<std::size_t> counts(ds.task.num_classes, 0);
    const std::uint32_t* toks = ds.sample_tokens(i);
    for (std::uint32_t t = 0; t < ds.task.seq; ++t) {
      std::uint32_t c = toks[t] / k;
      if (c < ds.task.num_classes) ++counts[c];
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < counts.size(); ++c)
      if (counts[c] > counts[best]) best = c;
    if (best == ds.labels[i]) ++hits;
  }
  return double(hits) / double(ds.size());
}

namespace {

constexpr char kDatasetMagic[4] = {'F', 'M', 'D', 'S'};
constexpr std::uint16_t kDatasetVersion = 1;

template <class T>
void put(std::FILE* f, T v) {
  // Serialized little-endian; this codebase targets little-endian hosts.
  if (std::fwrite(&v, sizeof(T), 1, f) != 1) throw DataError("dataset: short write");
}

template <class T>
T get(std::FILE* f) {
  T v;
  if (std::fread(&v, sizeof(T), 1, f) != 1) throw DataError("dataset: short read");
  return v;
}

}  // namespace

void Dataset::save(const std::string& path) const {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("dataset: cannot open '" + path + "' for writing");
  std::fwrite(kDatasetMagic, 1, 4, f);
  put<std::uint16_t>(f, kDatasetVersion);
  put<std::uint32_t>(f, task.vocab);
  put<std::uint32_t>(f, task.num_classes);
  put<std::uint32_t>(f, task.seq);
  put<double>(f, task.signal);
  put<std::uint64_t>(f, labels.size());
  if (!tokens.empty()) std::fwrite(tokens.data(), sizeof(std::uint32_t), tokens.size(), f);
  if (!labels.empty()) std::fwrite(labels.data(), sizeof(std::uint16_t), labels.size(), f);
  std::fclose(f);
}

Dataset Dataset::load(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("dataset: cannot open '" + path + "'");
  char magic[4];
  if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, kDatasetMagic, 4) != 0) {
    std::fclose(f);
    throw DataError("dataset: bad magic in '" + path + "'");
  }
  Dataset ds;
  auto version = get<std::uint16_t>(f);
  if (version != kDatasetVersion) {
    std::fclose(f);
    throw DataError("dataset: unsupported version " + std::to_string(version));
  }
  ds.task.vocab = get<std::uint32_t>(f);
  ds.task.num_classes = get<std::uint32_t>(f);
  ds.task.seq = get<std::uint32_t>(f);
  ds.task.signal = get<double>(f);
  auto n = get<std::uint64_t>(f);
  ds.tokens.resize(n * ds.task.seq);
  ds.labels.resize(n);
  if (n) {
    if (std::fread(ds.tokens.data(), sizeof(std::uint32_t), ds.tokens.size(), f) !=
            ds.tokens.size() ||
        std::fread(ds.labels.data(), sizeof(std::uint16_t), ds.labels.size(), f) !=
            ds.labels.size()) {
      std::fclose(f);
      throw DataError("dataset: truncated '" + path + "'");
    }
  }
  std::fclose(f);
  return ds;
}

std::vector<Shard> partition_dataset(const Dataset& ds, const PartitionSpec& spec) {
  if (spec.num_clients == 0) throw ConfigError("partition: need at least one client");
  if (!(spec.alpha > 0.0)) throw ConfigError("partition: alpha must be positive");
  if (ds.size() < spec.num_clients)
    throw DataError("partition: " + std::to_string(ds.size()) + " samples cannot cover " +
                    std::to_string(spec.num_clients) + " clients");
  Rng rng(derive_seed(spec.seed, "partition"));

  std::vector<std::vector<std::uint32_t>> by_class(ds.task.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i)
    by_class[ds.labels[i]].push_back(static_cast<std::uint32_t>(i));

  const std::vector<double> conc(spec.num_clients, spec.alpha);
  constexpr int kMaxRedraws = 100;
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    std::vector<Shard> shards(spec.num_clients);
    for (auto& ids : by_class) {
      if (ids.empty()) continue;
      rng.shuffle(ids);
      std::vector<double> prop = rng.dirichlet(conc);
      // Largest-remainder rounding of prop * n to integer counts.
      std::size_t n = ids.size();
      std::vector<std::size_t> counts(spec.num_clients);
      std::vector<std::pair<double, std::size_t>> rem(spec.num_clients);
      std::size_t assigned = 0;
      for (std::size_t c = 0; c < spec.num_clients; ++c) {
        double exact = prop[c] * double(n);
        counts[c] = static_cast<std::size_t>(exact);
        rem[c] = {exact - double(counts[c]), c};
        assigned += counts[c];
      }
      std::stable_sort(rem.begin(), rem.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[rem[i].second];
      std::size_t cursor = 0;
      for (std::size_t c = 0; c < spec.num_clients; ++c) {
        for (std::size_t j = 0; j < counts[c]; ++j)
          shards[c].sample_ids.push_back(ids[cursor++]);
      }
    }
    bool all_nonempty = true;
    for (const auto& s : shards) all_nonempty = all_nonempty && !s.sample_ids.empty();
    if (!all_nonempty) continue;
    for (auto& s : shards) rng.shuffle(s.sample_ids);
    return shards;
  }
  throw DataError("partition: a client received zero samples in " +
                  std::to_string(kMaxRedraws) + " draws (alpha too small for this n)");
}

std::vector<std::vector<std::size_t>> label_histograms(const Dataset& ds,
                                                       const std::vector<Shard>& shards) {
  std::vector<std::vector<std::size_t>> hist(shards.size(),
                                             std::vector<std::size_t>(ds.task.num_classes, 0));
  for (std::size_t c = 0; c < shards.size(); ++c)
    for (auto id : shards[c].sample_ids) ++hist[c][ds.labels[id]];
  return hist;
}

double mean_label_tv(const Dataset& ds, const std::vector<Shard>& shards) {
  if (shards.empty() || ds.size() == 0) return 0.0;
  std::vector<double> global(ds.task.num_classes, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) global[ds.labels[i]] += 1.0;
  for (auto& v : global) v /= double(ds.size());
  auto hist = label_histograms(ds, shards);
  double acc = 0.0;
  for (std::size_t c = 0; c < shards.size(); ++c) {
    double n = double(shards[c].sample_ids.size());
    if (n == 0.0) continue;
    double tv = 0.0;
    for (std::size_t k = 0; k < global.size(); ++k)
      tv += std::fabs(double(hist[c][k]) / n - global[k]);
    acc += 0.5 * tv;
  }
  return acc / double(shards.size());
}

}  // namespace fedmobi
