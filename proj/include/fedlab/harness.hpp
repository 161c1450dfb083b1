#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedlab/cifar10.hpp"
#include "fedlab/config.hpp"
#include "fedlab/diagnostics.hpp"
#include "fedlab/partition.hpp"
#include "fedlab/toy.hpp"

namespace fedlab {

inline constexpr const char* kVersion = "0.1.0";

struct BuiltData {
  Dataset train;
  Dataset test;
};

// Synthetic train/test draws use distinct sub-streams of the repeat seed, so
// IID and non-IID arms with equal seeds see identical data.
inline BuiltData build_dataset(const ExperimentConfig& cfg, std::uint64_t repeat_seed) {
  if (cfg.dataset == DatasetKind::kCifar10) {
    auto loaded = load_cifar10(cfg.cifar_dir);
    return {std::move(loaded.train), std::move(loaded.test)};
  }
  const auto& synth = cfg.synth;
  const std::size_t n_test =
      std::max<std::size_t>(synth.n / 2, static_cast<std::size_t>(synth.classes));
  BuiltData data;
  data.train = synth_blobs(synth.n, synth.classes, synth.dim, synth.spread, repeat_seed,
                           /*sample_stream=*/1);
  data.test = synth_blobs(n_test, synth.classes, synth.dim, synth.spread, repeat_seed,
                          /*sample_stream=*/2);
  return data;
}

inline ModelSpec build_model_spec(const ExperimentConfig& cfg, const Dataset& train) {
  switch (cfg.model) {
    case ModelKind::kLogistic:
      return ModelSpec::logistic(train.feature_dim(), train.num_classes);
    case ModelKind::kMlp:
      return ModelSpec::mlp(train.feature_dim(), cfg.hidden, train.num_classes);
    case ModelKind::kPaperCnn:
      if (train.feature_shape.size() != 3)
        throw ConfigError("model=paper_cnn needs (channels, H, W) data");
      return ModelSpec::paper_cnn(train.feature_shape[0], train.feature_shape[1],
                                  train.feature_shape[2], train.num_classes);
  }
  throw ConfigError("unknown model kind");
}

inline std::vector<ClientShard> build_partition(const ExperimentConfig& cfg,
                                                const Dataset& train,
                                                std::uint64_t repeat_seed) {
  switch (cfg.partition) {
    case PartitionKind::kIid:
      return partition_iid_balanced(train, cfg.num_clients, repeat_seed);
    case PartitionKind::kSgm:
      return partition_sgm(train, cfg.num_clients, cfg.sgm, repeat_seed);
    case PartitionKind::kDirichlet:
      return partition_dirichlet(train, cfg.num_clients, cfg.alpha, repeat_seed);
  }
  throw ConfigError("unknown partition kind");
}

namespace csv {

inline constexpr const char* kMetricsHeader =
    "round,test_acc,test_loss,train_loss_mean,participants";
inline constexpr const char* kClientsHeader = "round,client_id,train_loss";
inline constexpr const char* kCosineHeader = "round,layer,mean_cos,pair_count,excluded_pairs";
inline constexpr const char* kAggregateHeader =
    "round,acc_mean,acc_min,acc_max,loss_mean,loss_min,loss_max,train_mean,train_min,train_max";
inline constexpr const char* kTrajectoryHeader = "step,theta_x,theta_y,loss";

inline std::string num(double v) { return detail::format_double(v); }

}  // namespace csv

// Append-only, flushed-per-round metric emission: a killed run leaves exactly
// the completed rounds on disk. Each round's rows are written with a single
// write per file.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& dir, std::uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::string tag = "seed" + std::to_string(seed);
    metrics_path_ = dir / ("metrics_" + tag + ".csv");
    clients_path_ = dir / ("clients_" + tag + ".csv");
    cosine_path_ = dir / ("cosine_" + tag + ".csv");
    open(metrics_, metrics_path_, csv::kMetricsHeader);
    open(clients_, clients_path_, csv::kClientsHeader);
    open(cosine_, cosine_path_, csv::kCosineHeader);
  }

  void write_round(const RoundMetrics& m) {
    {
      std::ostringstream row;
      row << m.round << "," << csv::num(m.test_acc) << "," << csv::num(m.test_loss) << ","
          << csv::num(m.train_loss_mean) << ",";
      for (std::size_t i = 0; i < m.participants.size(); ++i)
        row << (i ? ";" : "") << m.participants[i];
      row << "\n";
      emit(metrics_, metrics_path_, row.str());
    }
    {
      std::ostringstream rows;
      for (const auto& [client_id, train_loss] : m.per_client_losses)
        rows << m.round << "," << client_id << "," << csv::num(train_loss) << "\n";
      emit(clients_, clients_path_, rows.str());
    }
    {
      std::ostringstream rows;
      for (const auto& rec : m.similarity)
        rows << m.round << "," << rec.layer << "," << csv::num(rec.mean_cos) << ","
             << rec.pair_count << "," << rec.excluded_pairs << "\n";
      emit(cosine_, cosine_path_, rows.str());
    }
  }

  std::filesystem::path metrics_path() const { return metrics_path_; }
  std::filesystem::path clients_path() const { return clients_path_; }
  std::filesystem::path cosine_path() const { return cosine_path_; }

 private:
  static void open(std::ofstream& out, const std::filesystem::path& path, const char* header) {
    out.open(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << header << "\n";
    out.flush();
  }

  static void emit(std::ofstream& out, const std::filesystem::path& path,
                   const std::string& rows) {
    out.write(rows.data(), static_cast<std::streamsize>(rows.size()));
    out.flush();
    if (!out) throw IoError("failed writing '" + path.string() + "'");
  }

  std::filesystem::path metrics_path_, clients_path_, cosine_path_;
  std::ofstream metrics_, clients_, cosine_;
};

struct RepeatOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::string metrics_csv;
  std::string clients_csv;
  std::string cosine_csv;
  std::vector<RoundMetrics> metrics;  // in-memory copy for aggregation
};

struct RunManifest {
  ExperimentConfig config;
  std::vector<RepeatOutcome> repeats;
  std::string aggregate_csv;
  std::string manifest_path;
  double wall_seconds = 0.0;

  bool all_ok() const {
    for (const auto& r : repeats)
      if (!r.ok) return false;
    return !repeats.empty();
  }
};

inline void write_aggregate_csv(const std::filesystem::path& path,
                                const std::vector<RepeatOutcome>& repeats) {
  std::size_t rounds = 0;
  bool first = true;
  for (const auto& r : repeats) {
    if (!r.ok) continue;
    rounds = first ? r.metrics.size() : std::min(rounds, r.metrics.size());
    first = false;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << csv::kAggregateHeader << "\n";
  if (first) return;  // no successful repeats
  for (std::size_t r = 0; r < rounds; ++r) {
    auto stat = [&](auto pick) {
      double mn = 0, mx = 0, sum = 0;
      std::size_t count = 0;
      for (const auto& rep : repeats) {
        if (!rep.ok) continue;
        const double v = pick(rep.metrics[r]);
        mn = count ? std::min(mn, v) : v;
        mx = count ? std::max(mx, v) : v;
        sum += v;
        ++count;
      }
      return std::array<double, 3>{sum / static_cast<double>(count), mn, mx};
    };
    const auto acc = stat([](const RoundMetrics& m) { return m.test_acc; });
    const auto loss = stat([](const RoundMetrics& m) { return m.test_loss; });
    const auto train = stat([](const RoundMetrics& m) { return m.train_loss_mean; });
    out << (r + 1);
    for (const auto& trio : {acc, loss, train})
      for (double v : trio) out << "," << csv::num(v);
    out << "\n";
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// Executes one run per seed, streaming per-round CSVs, then writes the
// cross-repeat aggregate (mean/min/max per round) and a JSON manifest.
// Individual repeat failures are recorded, not fatal.
inline RunManifest run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path run_dir = fs::path(cfg.output_dir) / cfg.name;
  fs::create_directories(run_dir);

  RunManifest manifest;
  manifest.config = cfg;

  for (const std::uint64_t seed : cfg.seeds) {
    RepeatOutcome outcome;
    outcome.seed = seed;
    try {
      MetricsWriter writer(run_dir, seed);
      outcome.metrics_csv = writer.metrics_path().string();
      outcome.clients_csv = writer.clients_path().string();
      outcome.cosine_csv = writer.cosine_path().string();

      const auto data = build_dataset(cfg, seed);
      const auto spec = build_model_spec(cfg, data.train);
      const auto shards = build_partition(cfg, data.train, seed);

      FedRunHooks hooks;
      hooks.on_metrics = [&](const RoundMetrics& m) {
        writer.write_round(m);
        outcome.metrics.push_back(m);
      };
      fedavg_run(spec, data.train, data.test, shards, cfg.fed_config(seed), cfg.threads,
                 hooks, cfg.eval_batch);
      outcome.ok = true;
    } catch (const std::exception& e) {
      outcome.ok = false;
      outcome.error = e.what();
    }
    manifest.repeats.push_back(std::move(outcome));
  }

  const fs::path aggregate = run_dir / "aggregate.csv";
  write_aggregate_csv(aggregate, manifest.repeats);
  manifest.aggregate_csv = aggregate.string();
  manifest.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  nlohmann::json doc;
  doc["name"] = cfg.name;
  doc["version"] = kVersion;
  doc["config"] = render_config(cfg);
  doc["wall_seconds"] = manifest.wall_seconds;
  doc["aggregate_csv"] = manifest.aggregate_csv;
  doc["repeats"] = nlohmann::json::array();
  for (const auto& r : manifest.repeats) {
    doc["repeats"].push_back({{"seed", r.seed},
                              {"ok", r.ok},
                              {"error", r.error},
                              {"metrics_csv", r.metrics_csv},
                              {"clients_csv", r.clients_csv},
                              {"cosine_csv", r.cosine_csv},
                              {"rounds_completed", r.metrics.size()}});
  }
  const fs::path manifest_path = run_dir / "manifest.json";
  std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + manifest_path.string() + "' for writing");
  out << doc.dump(2) << "\n";
  manifest.manifest_path = manifest_path.string();
  return manifest;
}

}  // namespace fedlab
