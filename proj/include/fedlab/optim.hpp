#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "fedlab/dataset.hpp"
#include "fedlab/errors.hpp"
#include "fedlab/fed_types.hpp"
#include "fedlab/param_vector.hpp"
#include "fedlab/problem.hpp"
#include "fedlab/rng.hpp"

namespace fedlab {

// The optimization ladder: SGD, Parallel SGD, Local SGD, FedAvg. All runs are
// deterministic functions of their inputs. Aggregations reduce in ascending
// client id, so results are independent of how client work is scheduled.

namespace detail {

inline ClientShard full_shard(std::size_t n) {
  ClientShard shard;
  shard.client_id = 0;
  shard.indices.resize(n);
  std::iota(shard.indices.begin(), shard.indices.end(), std::size_t{0});
  return shard;
}

inline void require_finite_grad(double loss_value, const ParamVector& g,
                                const ParamVector& last_finite, const std::string& who) {
  if (!std::isfinite(loss_value) || !g.all_finite())
    throw DivergedError(who + ": loss/gradient diverged", last_finite.values);
}

// theta <- theta - eta * g, guarded against overflow.
inline void descend(ParamVector& theta, double eta, const ParamVector& g,
                    const std::string& who) {
  ParamVector next = theta;
  axpy(-eta, g, next);
  if (!next.all_finite())
    throw DivergedError(who + ": parameters diverged", theta.values);
  theta = std::move(next);
}

// Runs worker(i) for i in [0, n) on up to `threads` threads. Results must be
// written to position i only, keeping the outcome independent of scheduling.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& worker) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) worker(i);
    return;
  }
  std::atomic<std::size_t> cursor{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= n) return;
      try {
        worker(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t use = std::min(threads, n);
  pool.reserve(use);
  for (std::size_t t = 0; t < use; ++t) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

struct SgdResult {
  ParamVector params;
  std::vector<double> epoch_losses;  // mean mini-batch loss per epoch
};

// Mini-batch SGD (B = dataset size reproduces full-batch GD). Batch streams
// are keyed by (seed, client 0, round_key, epoch); FedAvg rounds reuse the
// same keying, which is what makes the K=1 reduction bit-exact.
template <Problem P>
SgdResult sgd_run(const P& problem, ParamVector theta, double eta, std::size_t batch_size,
                  std::size_t epochs, std::uint64_t seed, std::uint64_t round_key = 0) {
  if (!(eta > 0.0)) throw ConfigError("sgd_run: eta must be > 0");
  if (epochs < 1) throw ConfigError("sgd_run: E must be >= 1");
  const auto shard = detail::full_shard(problem.sample_count());
  BatchCursor cursor(shard, batch_size, seed, round_key, 0);
  const std::size_t steps_per_epoch = cursor.batches_per_epoch();

  SgdResult out;
  out.epoch_losses.reserve(epochs);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const auto idx = cursor.next();
      auto lg = problem.batch_loss_grad(theta, idx);
      detail::require_finite_grad(lg.loss, lg.grad, theta, "sgd_run");
      loss_sum += lg.loss;
      detail::descend(theta, eta, lg.grad, "sgd_run");
    }
    out.epoch_losses.push_back(loss_sum / static_cast<double>(steps_per_epoch));
  }
  out.params = std::move(theta);
  return out;
}

inline SgdResult sgd_run(const ModelSpec& spec, const Dataset& ds, double eta,
                         std::size_t batch_size, std::size_t epochs, std::uint64_t seed) {
  return sgd_run(ClassifierProblem{spec, &ds}, init_params(spec, seed), eta, batch_size,
                 epochs, seed);
}

// Parallel SGD: per step every device computes a gradient on its own
// mini-batch; the server applies the unweighted mean. Steps per epoch is the
// smallest per-device batch count, so devices stay in lockstep.
template <Problem P>
ParamVector parallel_sgd_run(const P& problem, const std::vector<ClientShard>& shards,
                             ParamVector theta, double eta, std::size_t batch_size,
                             std::size_t epochs, std::uint64_t seed) {
  if (shards.empty()) throw ConfigError("parallel_sgd_run: need at least one shard");
  if (!(eta > 0.0)) throw ConfigError("parallel_sgd_run: eta must be > 0");

  std::vector<std::size_t> order(shards.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return shards[a].client_id < shards[b].client_id;
  });

  const double inv_k = 1.0 / static_cast<double>(shards.size());
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::vector<BatchCursor> cursors;
    cursors.reserve(shards.size());
    std::size_t steps = SIZE_MAX;
    for (const auto& shard : shards) {
      cursors.emplace_back(shard, batch_size, seed, 0, epoch);
      steps = std::min(steps, cursors.back().batches_per_epoch());
    }
    for (std::size_t b = 0; b < steps; ++b) {
      ParamVector mean_grad = zeros_like(theta);
      for (std::size_t pos : order) {
        auto lg = problem.batch_loss_grad(theta, cursors[pos].next());
        detail::require_finite_grad(
            lg.loss, lg.grad, theta,
            "parallel_sgd_run client " + std::to_string(shards[pos].client_id));
        axpy(inv_k, lg.grad, mean_grad);
      }
      detail::descend(theta, eta, mean_grad, "parallel_sgd_run");
    }
  }
  return theta;
}

inline ParamVector parallel_sgd_run(const ModelSpec& spec, const Dataset& ds,
                                    const std::vector<ClientShard>& shards, double eta,
                                    std::size_t batch_size, std::size_t epochs,
                                    std::uint64_t seed) {
  return parallel_sgd_run(ClassifierProblem{spec, &ds}, shards, init_params(spec, seed), eta,
                          batch_size, epochs, seed);
}

// Local SGD: per outer epoch each device takes `sync_period` local steps from
// the shared parameters, then the server averages parameters (unweighted).
// Device batch streams are continuous across synchronizations.
template <Problem P>
ParamVector local_sgd_run(const P& problem, const std::vector<ClientShard>& shards,
                          ParamVector theta, double eta, std::size_t batch_size,
                          std::size_t epochs, std::size_t sync_period, std::uint64_t seed) {
  if (shards.empty()) throw ConfigError("local_sgd_run: need at least one shard");
  if (!(eta > 0.0)) throw ConfigError("local_sgd_run: eta must be > 0");
  if (sync_period < 1) throw ConfigError("local_sgd_run: I must be >= 1");

  std::vector<std::size_t> order(shards.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return shards[a].client_id < shards[b].client_id;
  });

  std::vector<BatchCursor> cursors;
  cursors.reserve(shards.size());
  for (const auto& shard : shards) cursors.emplace_back(shard, batch_size, seed, 0, 0);

  const double inv_k = 1.0 / static_cast<double>(shards.size());
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    ParamVector mean = zeros_like(theta);
    for (std::size_t pos : order) {
      ParamVector local = theta;
      const std::string who =
          "local_sgd_run client " + std::to_string(shards[pos].client_id);
      for (std::size_t t = 0; t < sync_period; ++t) {
        auto lg = problem.batch_loss_grad(local, cursors[pos].next());
        detail::require_finite_grad(lg.loss, lg.grad, local, who);
        detail::descend(local, eta, lg.grad, who);
      }
      axpy(inv_k, local, mean);
    }
    theta = std::move(mean);
    if (!theta.all_finite()) throw DivergedError("local_sgd_run: diverged", theta.values);
  }
  return theta;
}

inline ParamVector local_sgd_run(const ModelSpec& spec, const Dataset& ds,
                                 const std::vector<ClientShard>& shards, double eta,
                                 std::size_t batch_size, std::size_t epochs,
                                 std::size_t sync_period, std::uint64_t seed) {
  return local_sgd_run(ClassifierProblem{spec, &ds}, shards, init_params(spec, seed), eta,
                       batch_size, epochs, sync_period, seed);
}

// Number of participants: max(ceil(C*K), 1), capped at K. Products within
// 1e-9 of an integer count as that integer, so C=0.2, K=10 yields 2 and not 3.
inline std::size_t participant_count(std::size_t num_clients, double client_fraction) {
  const double raw = client_fraction * static_cast<double>(num_clients);
  const double nearest = std::round(raw);
  double count = (std::fabs(raw - nearest) < 1e-9) ? nearest : std::ceil(raw);
  count = std::max(count, 1.0);
  return std::min(static_cast<std::size_t>(count), num_clients);
}

// Uniform without replacement, keyed by (seed, round); ascending ids.
inline std::vector<int> sample_participants(std::size_t num_clients, double client_fraction,
                                            std::uint64_t seed, std::uint64_t round) {
  const std::size_t m = participant_count(num_clients, client_fraction);
  Rng rng = Rng::from(seed, stream::kSample, round);
  const auto picks = rng.sample_without_replacement(num_clients, m);
  std::vector<int> ids(picks.size());
  for (std::size_t i = 0; i < picks.size(); ++i) ids[i] = static_cast<int>(picks[i]);
  return ids;
}

// Server-side aggregation (Option I: theta + eta_g * sum w_k delta_k;
// Option II: sum w_k theta_k). Weighted mode uses w_k = |D_k| / M over the
// participant set, naive mode w_k = 1/|S|. Reduction order is ascending
// client id regardless of input order.
inline ParamVector aggregate(const std::vector<ClientUpdate>& updates, AggMode mode,
                             UpdateOption option, const ParamVector& theta, double eta_g) {
  if (updates.empty()) throw ContractError("aggregate: no client updates");
  std::vector<std::size_t> order(updates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return updates[a].client_id < updates[b].client_id;
  });

  std::size_t total = 0;
  for (const auto& u : updates) {
    if (u.payload_kind != option)
      throw ContractError("aggregate: update payload does not match the requested option");
    if (!u.payload.same_layout(theta)) throw ContractError("aggregate: layout mismatch");
    if (u.n_samples < 1) throw ContractError("aggregate: client reports zero samples");
    total += u.n_samples;
  }

  auto weight = [&](const ClientUpdate& u) {
    return mode == AggMode::kWeighted
               ? static_cast<double>(u.n_samples) / static_cast<double>(total)
               : 1.0 / static_cast<double>(updates.size());
  };

  ParamVector out = option == UpdateOption::kDelta ? theta : zeros_like(theta);
  for (std::size_t pos : order) {
    const auto& u = updates[pos];
    axpy(option == UpdateOption::kDelta ? eta_g * weight(u) : weight(u), u.payload, out);
  }
  if (!out.all_finite()) throw DivergedError("aggregate: result diverged", theta.values);
  return out;
}

// One client's local training for one round: E epochs of mini-batch SGD from
// the global parameters, batch streams keyed by (seed, client, round, epoch).
template <Problem P>
ClientUpdate client_local_train(const P& problem, const ClientShard& shard,
                                const ParamVector& global_params, const FedConfig& cfg,
                                std::uint64_t round) {
  BatchCursor cursor(shard, cfg.batch_size, cfg.seed, round, 0);
  const std::size_t steps = cfg.local_epochs * cursor.batches_per_epoch();
  const std::string who = "round " + std::to_string(round + 1) + " client " +
                          std::to_string(shard.client_id);

  ParamVector local = global_params;
  double loss_sum = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    auto lg = problem.batch_loss_grad(local, cursor.next());
    detail::require_finite_grad(lg.loss, lg.grad, local, who);
    loss_sum += lg.loss;
    detail::descend(local, cfg.eta_l, lg.grad, who);
  }

  ClientUpdate update;
  update.client_id = shard.client_id;
  update.n_samples = shard.size();
  update.train_loss = loss_sum / static_cast<double>(steps);
  update.payload_kind = cfg.update_option;
  update.payload = cfg.update_option == UpdateOption::kDelta
                       ? subtract(local, global_params)
                       : std::move(local);
  return update;
}

// One FedAvg round: sample participants, train them (possibly on several
// threads; results are bit-identical for any thread count), aggregate.
template <Problem P>
RoundResult fedavg_round(const P& problem, const std::vector<ClientShard>& shards,
                         const ParamVector& global_params, const FedConfig& cfg,
                         std::uint64_t round, std::size_t threads = 1) {
  validate(cfg);
  if (shards.size() != cfg.num_clients)
    throw ConfigError("fedavg_round: shard count does not match K");
  for (std::size_t i = 0; i < shards.size(); ++i)
    if (shards[i].client_id != static_cast<int>(i))
      throw ConfigError("fedavg_round: shards must be ordered by client id");

  RoundResult result;
  result.round = round;
  result.participants = sample_participants(cfg.num_clients, cfg.client_fraction, cfg.seed, round);
  result.updates.resize(result.participants.size());

  detail::parallel_for(result.participants.size(), threads, [&](std::size_t i) {
    const int id = result.participants[i];
    result.updates[i] = client_local_train(problem, shards[static_cast<std::size_t>(id)],
                                           global_params, cfg, round);
  });

  result.params =
      aggregate(result.updates, cfg.agg_mode, cfg.update_option, global_params, cfg.eta_g);
  return result;
}

}  // namespace fedlab
