#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "fedlab/dataset.hpp"
#include "fedlab/errors.hpp"
#include "fedlab/rng.hpp"

namespace fedlab {

struct PartitionReport {
  std::vector<std::size_t> shard_sizes;            // per client
  std::vector<std::vector<std::size_t>> class_counts;  // [client][class]
};

namespace detail {

inline constexpr std::uint64_t kMethodIid = 1;
inline constexpr std::uint64_t kMethodSgm = 2;
inline constexpr std::uint64_t kMethodDirichlet = 3;

inline std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int label = ds.labels[i];
    if (label < 0 || label >= ds.num_classes)
      throw ContractError("dataset label out of range");
    by_class[label].push_back(i);
  }
  return by_class;
}

// Integer allocation of total across weights by largest remainder.
// Ties broken toward lower index.
inline std::vector<std::size_t> largest_remainder(std::size_t total,
                                                  const std::vector<double>& weights) {
  const std::size_t k = weights.size();
  std::vector<std::size_t> counts(k, 0);
  std::vector<std::pair<double, std::size_t>> rems;
  rems.reserve(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = static_cast<double>(total) * weights[i];
    const double fl = std::floor(exact);
    counts[i] = static_cast<std::size_t>(fl);
    assigned += counts[i];
    rems.emplace_back(exact - fl, i);
  }
  std::stable_sort(rems.begin(), rems.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t j = 0; assigned < total; ++j, ++assigned) counts[rems[j % k].second] += 1;
  // Guard against floating overshoot.
  for (std::size_t j = 0; assigned > total; ++j) {
    const std::size_t i = rems[k - 1 - (j % k)].second;
    if (counts[i] > 0) {
      counts[i] -= 1;
      --assigned;
    }
  }
  return counts;
}

inline std::vector<ClientShard> make_shards(std::size_t k) {
  std::vector<ClientShard> shards(k);
  for (std::size_t i = 0; i < k; ++i) shards[i].client_id = static_cast<int>(i);
  return shards;
}

// Moves one sample at a time from the largest shard until every shard has at
// least min_size samples.
inline void repair_small_shards(std::vector<ClientShard>& shards, std::size_t min_size) {
  for (;;) {
    std::size_t smallest = 0;
    std::size_t largest = 0;
    for (std::size_t i = 1; i < shards.size(); ++i) {
      if (shards[i].size() < shards[smallest].size()) smallest = i;
      if (shards[i].size() > shards[largest].size()) largest = i;
    }
    if (shards[smallest].size() >= min_size) return;
    if (shards[largest].size() <= min_size) return;  // nothing left to give
    shards[smallest].indices.push_back(shards[largest].indices.back());
    shards[largest].indices.pop_back();
  }
}

}  // namespace detail

// Balanced IID partition: each shard gets floor(N/K) or ceil(N/K) samples and
// per-class counts across shards differ by at most 1. Within each class the
// assignment is a seeded permutation dealt in contiguous chunks; the start
// client for per-class remainders rotates so totals stay balanced.
inline std::vector<ClientShard> partition_iid_balanced(const Dataset& ds, std::size_t k,
                                                       std::uint64_t seed) {
  if (k < 1) throw ConfigError("partition: K must be >= 1");
  if (k > ds.size()) throw ConfigError("partition: K exceeds dataset size");
  auto by_class = detail::indices_by_class(ds);
  auto shards = detail::make_shards(k);

  std::size_t start = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    Rng rng = Rng::from(seed, stream::kPartition, detail::kMethodIid, c);
    rng.shuffle(idx);
    const std::size_t base = idx.size() / k;
    const std::size_t rem = idx.size() % k;
    std::size_t pos = 0;
    for (std::size_t j = 0; j < k; ++j) {
      // Client j receives one extra sample if it falls in the remainder window.
      const std::size_t off = (j + k - start) % k;
      const std::size_t take = base + (off < rem ? 1 : 0);
      for (std::size_t t = 0; t < take; ++t) shards[j].indices.push_back(idx[pos++]);
    }
    start = (start + rem) % k;
  }
  return shards;
}

// Size-imbalanced partition with IID labels. Shard sizes are proportional to
// normalized LogNormal(0, sgm^2) draws; each class is then allocated across
// clients by largest remainder against those size shares, so per-shard class
// proportions track the global proportions. sgm = 0 reduces exactly to
// partition_iid_balanced.
inline std::vector<ClientShard> partition_sgm(const Dataset& ds, std::size_t k, double sgm,
                                              std::uint64_t seed) {
  if (k < 1) throw ConfigError("partition: K must be >= 1");
  if (k > ds.size()) throw ConfigError("partition: K exceeds dataset size");
  if (sgm < 0.0) throw ConfigError("partition: sgm must be >= 0");
  if (sgm == 0.0) return partition_iid_balanced(ds, k, seed);

  const std::size_t min_size = std::max<std::size_t>(ds.num_classes, 1);
  if (k * min_size > ds.size())
    throw ConfigError("partition_sgm: K * num_classes exceeds dataset size");

  Rng rng = Rng::from(seed, stream::kPartition, detail::kMethodSgm);
  std::vector<double> draws(k);
  double total = 0.0;
  for (auto& d : draws) {
    d = rng.lognormal(0.0, sgm);
    total += d;
  }
  for (auto& d : draws) d /= total;

  auto sizes = detail::largest_remainder(ds.size(), draws);
  // Enforce the minimum on target sizes before dealing classes.
  for (;;) {
    auto smallest = std::min_element(sizes.begin(), sizes.end());
    if (*smallest >= min_size) break;
    auto largest = std::max_element(sizes.begin(), sizes.end());
    *largest -= 1;
    *smallest += 1;
  }

  std::vector<double> shares(k);
  for (std::size_t i = 0; i < k; ++i)
    shares[i] = static_cast<double>(sizes[i]) / static_cast<double>(ds.size());

  auto by_class = detail::indices_by_class(ds);
  auto shards = detail::make_shards(k);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    Rng class_rng = Rng::from(seed, stream::kPartition, detail::kMethodSgm, c + 1);
    class_rng.shuffle(idx);
    const auto counts = detail::largest_remainder(idx.size(), shares);
    std::size_t pos = 0;
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t t = 0; t < counts[j]; ++t) shards[j].indices.push_back(idx[pos++]);
  }
  detail::repair_small_shards(shards, min_size);
  return shards;
}

// Label-skewed partition: for each class, a Dirichlet(alpha * 1_K) proportion
// vector splits that class across clients (largest-remainder rounding). Empty
// shards are repaired by moving one sample from the largest shard.
inline std::vector<ClientShard> partition_dirichlet(const Dataset& ds, std::size_t k,
                                                    double alpha, std::uint64_t seed) {
  if (k < 1) throw ConfigError("partition: K must be >= 1");
  if (k > ds.size()) throw ConfigError("partition: K exceeds dataset size");
  if (!(alpha > 0.0)) throw ConfigError("partition: alpha must be > 0");

  auto by_class = detail::indices_by_class(ds);
  auto shards = detail::make_shards(k);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    Rng rng = Rng::from(seed, stream::kPartition, detail::kMethodDirichlet, c);
    const auto proportions = rng.dirichlet(alpha, k);
    rng.shuffle(idx);
    const auto counts = detail::largest_remainder(idx.size(), proportions);
    std::size_t pos = 0;
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t t = 0; t < counts[j]; ++t) shards[j].indices.push_back(idx[pos++]);
  }
  detail::repair_small_shards(shards, 1);
  return shards;
}

inline PartitionReport partition_report(const Dataset& ds,
                                        const std::vector<ClientShard>& shards) {
  PartitionReport report;
  report.shard_sizes.reserve(shards.size());
  for (const auto& shard : shards) {
    std::vector<std::size_t> counts(ds.num_classes, 0);
    for (auto i : shard.indices) counts[ds.labels[i]] += 1;
    report.shard_sizes.push_back(shard.size());
    report.class_counts.push_back(std::move(counts));
  }
  return report;
}

}  // namespace fedlab
