#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedlab/dataset.hpp"
#include "fedlab/errors.hpp"
#include "fedlab/fed_types.hpp"
#include "fedlab/model.hpp"
#include "fedlab/optim.hpp"
#include "fedlab/param_vector.hpp"

namespace fedlab {

struct EvalResult {
  double test_acc = 0.0;
  double test_loss = 0.0;
};

// Exact dataset-wide mean loss and top-1 accuracy. Batching is for memory
// only: per-sample losses are accumulated one by one (Kahan), so the result
// is bit-identical for any eval_batch.
inline EvalResult evaluate_global(const ModelSpec& spec, const ParamVector& params,
                                  const Dataset& ds, std::size_t eval_batch = 256) {
  if (ds.size() == 0) throw ContractError("evaluate_global: empty dataset");
  if (eval_batch < 1) throw ContractError("evaluate_global: eval_batch must be >= 1");

  const auto classes = static_cast<std::size_t>(ds.num_classes);
  double loss_sum = 0.0;
  double loss_comp = 0.0;  // Kahan compensation
  std::size_t correct = 0;

  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < ds.size(); begin += eval_batch) {
    const std::size_t end = std::min(begin + eval_batch, ds.size());
    idx.resize(end - begin);
    for (std::size_t i = begin; i < end; ++i) idx[i - begin] = i;
    const Batch batch = gather(ds, idx);
    std::vector<double> sample_losses;
    std::vector<double> z;
    detail::eval(detail::build_plan(spec), params, batch, nullptr, &z, &sample_losses, nullptr);
    for (std::size_t i = 0; i < batch.n; ++i) {
      const double y = sample_losses[i] - loss_comp;
      const double t = loss_sum + y;
      loss_comp = (t - loss_sum) - y;
      loss_sum = t;
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c)
        if (z[i * classes + c] > z[i * classes + best]) best = c;
      if (static_cast<int>(best) == batch.labels[i]) ++correct;
    }
  }
  return {static_cast<double>(correct) / static_cast<double>(ds.size()),
          loss_sum / static_cast<double>(ds.size())};
}

struct SimilarityRecord {
  std::size_t round = 0;  // 1-based; 0 when not attached to a run
  std::string layer;
  double mean_cos = 0.0;       // mean over included unordered pairs
  std::size_t pair_count = 0;  // |S| * (|S|-1) / 2
  std::size_t excluded_pairs = 0;  // pairs with a zero-norm segment
};

// Per-layer mean pairwise cosine similarity of client updates (Option I
// payloads). Pairs where either segment has zero norm are excluded from the
// mean and counted separately.
inline std::vector<SimilarityRecord> pairwise_cosine(const std::vector<ClientUpdate>& updates,
                                                     const Layout& layout) {
  if (updates.size() < 2)
    throw ContractError("pairwise_cosine: need at least two updates");
  for (const auto& u : updates) {
    if (u.payload_kind != UpdateOption::kDelta)
      throw ContractError("pairwise_cosine: payloads must be deltas (convert first)");
    if (u.payload.layout != layout)
      throw ContractError("pairwise_cosine: layout mismatch");
  }

  std::vector<SimilarityRecord> records;
  records.reserve(layout.size());
  for (const auto& slice : layout) {
    SimilarityRecord rec;
    rec.layer = slice.name;
    double sum = 0.0;
    std::size_t included = 0;
    for (std::size_t i = 0; i < updates.size(); ++i) {
      for (std::size_t j = i + 1; j < updates.size(); ++j) {
        rec.pair_count += 1;
        const auto a = updates[i].payload.segment(slice);
        const auto b = updates[j].payload.segment(slice);
        const double na = norm2(a);
        const double nb = norm2(b);
        if (na == 0.0 || nb == 0.0) {
          rec.excluded_pairs += 1;
          continue;
        }
        sum += dot(a, b) / (na * nb);
        included += 1;
      }
    }
    rec.mean_cos = included ? sum / static_cast<double>(included) : 0.0;
    records.push_back(std::move(rec));
  }
  return records;
}

// Per-round record of everything the harness logs.
struct RoundMetrics {
  std::size_t round = 0;  // 1-based
  double test_acc = 0.0;
  double test_loss = 0.0;
  double train_loss_mean = 0.0;  // unweighted mean over participants
  std::map<int, double> per_client_losses;  // participants only
  std::map<std::string, double> cosine_by_layer;  // empty when < 2 participants
  std::vector<SimilarityRecord> similarity;
  std::vector<int> participants;
};

// 1-based index of the minimum of the series; ties break to the earliest.
inline std::size_t overfit_round(const std::vector<double>& test_losses) {
  if (test_losses.empty()) throw ContractError("overfit_round: empty series");
  std::size_t best = 0;
  for (std::size_t i = 1; i < test_losses.size(); ++i)
    if (test_losses[i] < test_losses[best]) best = i;
  return best + 1;
}

// Per-client training-loss series; rounds where a client did not participate
// are absent (nullopt), never imputed.
struct LossTraces {
  std::vector<int> client_ids;  // ascending
  // series[k][r] is client_ids[k]'s loss at round r (0-based), if it participated
  std::vector<std::vector<std::optional<double>>> series;
};

inline LossTraces loss_traces(const std::vector<RoundMetrics>& history) {
  LossTraces traces;
  for (const auto& m : history)
    for (const auto& [id, unused] : m.per_client_losses)
      if (std::find(traces.client_ids.begin(), traces.client_ids.end(), id) ==
          traces.client_ids.end())
        traces.client_ids.push_back(id);
  std::sort(traces.client_ids.begin(), traces.client_ids.end());
  traces.series.assign(traces.client_ids.size(),
                       std::vector<std::optional<double>>(history.size()));
  for (std::size_t r = 0; r < history.size(); ++r) {
    for (const auto& [id, lv] : history[r].per_client_losses) {
      const auto k = static_cast<std::size_t>(
          std::find(traces.client_ids.begin(), traces.client_ids.end(), id) -
          traces.client_ids.begin());
      traces.series[k][r] = lv;
    }
  }
  return traces;
}

struct FedRunResult {
  ParamVector params;  // final global model
  std::vector<RoundMetrics> metrics;
};

struct FedRunHooks {
  // Called after each round, before per-round artifacts are discarded.
  std::function<void(const RoundResult&)> on_round;
  std::function<void(const RoundMetrics&)> on_metrics;
};

// Full FedAvg run with per-round server-side evaluation and update-geometry
// diagnostics. Partial metrics are delivered through hooks before any round
// error propagates.
inline FedRunResult fedavg_run(const ModelSpec& spec, const Dataset& train,
                               const Dataset& test, const std::vector<ClientShard>& shards,
                               const FedConfig& cfg, std::size_t threads = 1,
                               const FedRunHooks& hooks = {}, std::size_t eval_batch = 256) {
  validate(cfg);
  const ClassifierProblem problem{spec, &train};
  FedRunResult out;
  out.params = init_params(spec, cfg.seed);
  out.metrics.reserve(cfg.rounds);

  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    RoundResult rr = fedavg_round(problem, shards, out.params, cfg, r, threads);

    RoundMetrics m;
    m.round = r + 1;
    m.participants = rr.participants;
    const auto eval = evaluate_global(spec, rr.params, test, eval_batch);
    m.test_acc = eval.test_acc;
    m.test_loss = eval.test_loss;
    double loss_sum = 0.0;
    for (const auto& u : rr.updates) {
      m.per_client_losses[u.client_id] = u.train_loss;
      loss_sum += u.train_loss;
    }
    m.train_loss_mean = loss_sum / static_cast<double>(rr.updates.size());

    if (rr.updates.size() >= 2) {
      std::vector<ClientUpdate> deltas;
      if (cfg.update_option == UpdateOption::kDelta) {
        deltas = rr.updates;
      } else {
        deltas.reserve(rr.updates.size());
        for (const auto& u : rr.updates) {
          ClientUpdate d = u;
          d.payload = subtract(u.payload, out.params);
          d.payload_kind = UpdateOption::kDelta;
          deltas.push_back(std::move(d));
        }
      }
      m.similarity = pairwise_cosine(deltas, out.params.layout);
      for (auto& rec : m.similarity) {
        rec.round = r + 1;
        m.cosine_by_layer[rec.layer] = rec.mean_cos;
      }
    }

    if (hooks.on_round) hooks.on_round(rr);
    if (hooks.on_metrics) hooks.on_metrics(m);
    out.params = std::move(rr.params);
    out.metrics.push_back(std::move(m));
  }
  return out;
}

}  // namespace fedlab
