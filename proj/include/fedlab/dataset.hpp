#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedlab/errors.hpp"
#include "fedlab/rng.hpp"

namespace fedlab {

// Labeled sample store. Features are sample-major (row i = sample i) and kept
// in float32; batches gather into float64 for the numeric core.
struct Dataset {
  std::vector<float> features;  // n * feature_dim
  std::vector<int> labels;      // values in [0, num_classes)
  std::vector<std::size_t> feature_shape;  // e.g. {dim} or {channels, H, W}
  int num_classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }

  std::size_t feature_dim() const {
    std::size_t d = 1;
    for (auto s : feature_shape) d *= s;
    return d;
  }

  std::span<const float> sample(std::size_t i) const {
    return {features.data() + i * feature_dim(), feature_dim()};
  }
};

struct Batch {
  std::vector<double> features;  // n * feature_dim
  std::vector<int> labels;
  std::size_t n = 0;
  std::size_t feature_dim = 0;

  std::span<const double> sample(std::size_t i) const {
    return {features.data() + i * feature_dim, feature_dim};
  }
};

// Per-client view into a parent dataset.
struct ClientShard {
  int client_id = 0;
  std::vector<std::size_t> indices;

  std::size_t size() const { return indices.size(); }
};

inline Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
  const std::size_t dim = ds.feature_dim();
  Batch b;
  b.n = indices.size();
  b.feature_dim = dim;
  b.features.resize(b.n * dim);
  b.labels.resize(b.n);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = ds.sample(indices[r]);
    for (std::size_t j = 0; j < dim; ++j) b.features[r * dim + j] = src[j];
    b.labels[r] = ds.labels[indices[r]];
  }
  return b;
}

inline Batch whole_dataset_batch(const Dataset& ds) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return gather(ds, all);
}

// n samples from C Gaussian clusters with unit-norm random centers.
// Labels are approximately balanced (counts differ by at most 1).
//
// Centers depend only on (seed); per-sample noise additionally keys on
// sample_stream, so calls with the same seed but different sample streams
// draw train/test splits from one population.
inline Dataset synth_blobs(std::size_t n, int num_classes, std::size_t dim,
                           double spread, std::uint64_t seed,
                           std::uint64_t sample_stream = 0) {
  if (num_classes < 2) throw ConfigError("synth_blobs: need at least 2 classes");
  if (n < static_cast<std::size_t>(num_classes))
    throw ConfigError("synth_blobs: n must be >= number of classes");

  Rng center_rng = Rng::from(seed, stream::kData, 1);
  std::vector<double> centers(static_cast<std::size_t>(num_classes) * dim);
  for (int c = 0; c < num_classes; ++c) {
    double norm = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double v = center_rng.normal();
      centers[c * dim + j] = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) norm = 1.0;
    for (std::size_t j = 0; j < dim; ++j) centers[c * dim + j] /= norm;
  }

  Rng noise_rng = Rng::from(seed, stream::kData, 2, sample_stream);
  Dataset ds;
  ds.feature_shape = {dim};
  ds.num_classes = num_classes;
  ds.name = "synth";
  ds.features.resize(n * dim);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % static_cast<std::size_t>(num_classes));
    ds.labels[i] = c;
    for (std::size_t j = 0; j < dim; ++j) {
      ds.features[i * dim + j] =
          static_cast<float>(centers[c * dim + j] + spread * noise_rng.normal());
    }
  }
  return ds;
}

// FLDS binary persistence. Layout, all little-endian:
//   "FLDS" | version u32 | n u32 | dim u32 | C u32 | n*dim float64 | n u8 labels
inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const char magic[4] = {'F', 'L', 'D', 'S'};
  out.write(magic, 4);
  auto put_u32 = [&](std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
  };
  put_u32(1);
  put_u32(static_cast<std::uint32_t>(ds.size()));
  put_u32(static_cast<std::uint32_t>(ds.feature_dim()));
  put_u32(static_cast<std::uint32_t>(ds.num_classes));
  for (float f : ds.features) {
    const double d = f;
    char b[8];
    std::memcpy(b, &d, 8);
    out.write(b, 8);
  }
  for (int label : ds.labels) {
    const unsigned char u = static_cast<unsigned char>(label);
    out.write(reinterpret_cast<const char*>(&u), 1);
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "FLDS", 4) != 0)
    throw FormatError("bad FLDS magic in '" + path + "'", 0);
  auto get_u32 = [&](std::size_t offset) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
      throw FormatError("truncated FLDS header in '" + path + "'", offset);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  };
  const std::uint32_t version = get_u32(4);
  if (version != 1) throw FormatError("unsupported FLDS version " + std::to_string(version), 4);
  const std::uint32_t n = get_u32(8);
  const std::uint32_t dim = get_u32(12);
  const std::uint32_t num_classes = get_u32(16);

  Dataset ds;
  ds.feature_shape = {dim};
  ds.num_classes = static_cast<int>(num_classes);
  ds.name = path;
  ds.features.resize(static_cast<std::size_t>(n) * dim);
  ds.labels.resize(n);
  std::size_t offset = 20;
  for (std::size_t i = 0; i < ds.features.size(); ++i, offset += 8) {
    char b[8];
    if (!in.read(b, 8)) throw FormatError("truncated FLDS features in '" + path + "'", offset);
    double d;
    std::memcpy(&d, b, 8);
    ds.features[i] = static_cast<float>(d);
  }
  for (std::size_t i = 0; i < n; ++i, ++offset) {
    unsigned char u;
    if (!in.read(reinterpret_cast<char*>(&u), 1))
      throw FormatError("truncated FLDS labels in '" + path + "'", offset);
    if (u >= num_classes)
      throw FormatError("FLDS label " + std::to_string(u) + " out of range", offset);
    ds.labels[i] = u;
  }
  return ds;
}

// Deterministic mini-batch schedule for one client. Each epoch is a fresh
// seeded permutation of the shard, chunked into ceil(|shard|/B) batches; the
// last batch may be smaller. Shuffle streams are keyed by
// (seed, client_id, round, epoch), so one client's consumption never affects
// another's and partial participation leaves absent clients' streams intact.
// Indices are canonicalized (sorted) before each shuffle, making the schedule
// a function of the shard's index *set*; when one batch covers the whole
// shard there is no sampling randomness and the seed is inert.
class BatchCursor {
 public:
  BatchCursor(const ClientShard& shard, std::size_t batch_size, std::uint64_t seed,
              std::uint64_t round = 0, std::uint64_t start_epoch = 0)
      : shard_(&shard),
        batch_size_(batch_size),
        seed_(seed),
        round_(round),
        epoch_(start_epoch) {
    if (shard.indices.empty()) throw ContractError("BatchCursor: empty shard");
    if (batch_size == 0) throw ContractError("BatchCursor: batch size must be >= 1");
    reshuffle();
  }

  std::size_t batches_per_epoch() const {
    return (shard_->size() + batch_size_ - 1) / batch_size_;
  }

  std::uint64_t epoch() const { return epoch_; }

  std::span<const std::size_t> next() {
    if (pos_ >= order_.size()) {
      ++epoch_;
      reshuffle();
    }
    const std::size_t take = std::min(batch_size_, order_.size() - pos_);
    std::span<const std::size_t> out{order_.data() + pos_, take};
    pos_ += take;
    return out;
  }

 private:
  void reshuffle() {
    order_ = shard_->indices;
    std::sort(order_.begin(), order_.end());
    if (batch_size_ < order_.size()) {
      Rng rng = Rng::from(seed_, stream::kBatch,
                          static_cast<std::uint64_t>(shard_->client_id), round_, epoch_);
      rng.shuffle(order_);
    }
    pos_ = 0;
  }

  const ClientShard* shard_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::uint64_t round_;
  std::uint64_t epoch_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

// One epoch's batches as index lists.
inline std::vector<std::vector<std::size_t>> minibatch_indices(const ClientShard& shard,
                                                               std::size_t batch_size,
                                                               std::uint64_t seed,
                                                               std::uint64_t epoch,
                                                               std::uint64_t round = 0) {
  BatchCursor cursor(shard, batch_size, seed, round, epoch);
  std::vector<std::vector<std::size_t>> out;
  const std::size_t nb = cursor.batches_per_epoch();
  out.reserve(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    const auto idx = cursor.next();
    out.emplace_back(idx.begin(), idx.end());
  }
  return out;
}

// One epoch's batches, gathered.
inline std::vector<Batch> minibatches(const Dataset& ds, const ClientShard& shard,
                                      std::size_t batch_size, std::uint64_t seed,
                                      std::uint64_t epoch, std::uint64_t round = 0) {
  std::vector<Batch> out;
  for (const auto& idx : minibatch_indices(shard, batch_size, seed, epoch, round)) {
    out.push_back(gather(ds, idx));
  }
  return out;
}

}  // namespace fedlab
