#pragma once

#include <Eigen/Core>
#include <Eigen/LU>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fedlab/dataset.hpp"
#include "fedlab/errors.hpp"
#include "fedlab/model.hpp"
#include "fedlab/param_vector.hpp"
#include "fedlab/rng.hpp"

namespace fedlab::toy {

// 2D quadratic client landscape: f(theta) = 1/2 (theta - m)^T A (theta - m)
// with A symmetric positive definite. Each client owning its own (A, m) makes
// "different local optima" exactly solvable, which is what turns the drift
// story into closed-form oracles.
struct QuadClient {
  Eigen::Matrix2d hessian;
  Eigen::Vector2d minimizer;

  double loss(const Eigen::Vector2d& theta) const {
    const Eigen::Vector2d d = theta - minimizer;
    return 0.5 * d.dot(hessian * d);
  }

  Eigen::Vector2d grad(const Eigen::Vector2d& theta) const {
    return hessian * (theta - minimizer);
  }
};

inline void validate(const QuadClient& c) {
  if (std::fabs(c.hessian(0, 1) - c.hessian(1, 0)) > 1e-12)
    throw ConfigError("QuadClient: Hessian must be symmetric");
  // SPD for symmetric 2x2: positive diagonal entry and positive determinant.
  if (!(c.hessian(0, 0) > 0.0) ||
      !(c.hessian.determinant() > 0.0))
    throw ConfigError("QuadClient: Hessian must be positive definite");
}

inline void validate(const std::vector<QuadClient>& clients) {
  if (clients.empty()) throw ContractError("toy: need at least one client");
  for (const auto& c : clients) validate(c);
}

inline double mean_loss(const std::vector<QuadClient>& clients, const Eigen::Vector2d& theta) {
  double sum = 0.0;
  for (const auto& c : clients) sum += c.loss(theta);
  return sum / static_cast<double>(clients.size());
}

inline Eigen::Vector2d mean_grad(const std::vector<QuadClient>& clients,
                                 const Eigen::Vector2d& theta) {
  Eigen::Vector2d g = Eigen::Vector2d::Zero();
  for (const auto& c : clients) g += c.grad(theta);
  return g / static_cast<double>(clients.size());
}

// Exact minimizer of the average loss: (sum A_k)^-1 (sum A_k m_k), by direct
// 2x2 elimination.
inline Eigen::Vector2d global_optimum(const std::vector<QuadClient>& clients) {
  validate(clients);
  Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
  Eigen::Vector2d b = Eigen::Vector2d::Zero();
  for (const auto& c : clients) {
    a += c.hessian;
    b += c.hessian * c.minimizer;
  }
  const double det = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  return {(b(0) * a(1, 1) - b(1) * a(0, 1)) / det,
          (b(1) * a(0, 0) - b(0) * a(1, 0)) / det};
}

// Mean of the per-client minimizers: the infinite-local-training limit of
// parameter averaging.
inline Eigen::Vector2d naive_parameter_average(const std::vector<QuadClient>& clients) {
  validate(clients);
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  for (const auto& c : clients) sum += c.minimizer;
  return sum / static_cast<double>(clients.size());
}

// || naive average - global optimum ||_2; zero iff averaging local optima is
// globally optimal.
inline double drift_gap(const std::vector<QuadClient>& clients) {
  return (naive_parameter_average(clients) - global_optimum(clients)).norm();
}

enum class DescentMode { kGd, kSgd, kMinibatch };

struct TrajectoryPoint {
  double x = 0.0;
  double y = 0.0;
  double loss = 0.0;  // mean loss over all clients
};

struct Trajectory {
  std::vector<TrajectoryPoint> points;  // steps + 1 entries
};

// Descent on the averaged quadratic objective. gd uses the exact mean
// gradient; sgd samples one client per step; minibatch averages a random
// subset of the given size (without replacement).
inline Trajectory trace_descent(const std::vector<QuadClient>& clients, DescentMode mode,
                                Eigen::Vector2d theta, double eta, std::size_t steps,
                                std::uint64_t seed, std::size_t minibatch_size = 1) {
  validate(clients);
  if (!(eta > 0.0)) throw ConfigError("trace_descent: eta must be > 0");
  if (mode == DescentMode::kMinibatch &&
      (minibatch_size < 1 || minibatch_size > clients.size()))
    throw ConfigError("trace_descent: minibatch size must be in [1, #clients]");

  Rng rng = Rng::from(seed, stream::kToy);
  Trajectory traj;
  traj.points.reserve(steps + 1);
  traj.points.push_back({theta(0), theta(1), mean_loss(clients, theta)});
  for (std::size_t t = 0; t < steps; ++t) {
    Eigen::Vector2d g;
    switch (mode) {
      case DescentMode::kGd:
        g = mean_grad(clients, theta);
        break;
      case DescentMode::kSgd: {
        const auto pick = static_cast<std::size_t>(rng.uniform_int(clients.size()));
        g = clients[pick].grad(theta);
        break;
      }
      case DescentMode::kMinibatch: {
        const auto picks = rng.sample_without_replacement(clients.size(), minibatch_size);
        g = Eigen::Vector2d::Zero();
        for (auto p : picks) g += clients[p].grad(theta);
        g /= static_cast<double>(picks.size());
        break;
      }
    }
    theta -= eta * g;
    const double l = mean_loss(clients, theta);
    if (!std::isfinite(l) || !theta.allFinite())
      throw DivergedError("trace_descent: diverged at step " + std::to_string(t + 1),
                          {traj.points.back().x, traj.points.back().y});
    traj.points.push_back({theta(0), theta(1), l});
  }
  return traj;
}

// Problem adapter: sample i is client i's quadratic, so the optim ladder
// (SGD / Parallel SGD / Local SGD) runs unchanged on quadratic clients.
// Full-batch steps (B >= shard size) are exact gradient descent.
struct QuadProblem {
  std::vector<QuadClient> clients;

  static ParamVector pack(const Eigen::Vector2d& theta) {
    ParamVector p;
    p.values = {theta(0), theta(1)};
    p.layout = {{"theta", 0, 2}};
    return p;
  }

  static Eigen::Vector2d unpack(const ParamVector& p) {
    return {p.values[0], p.values[1]};
  }

  std::size_t sample_count() const { return clients.size(); }

  double batch_loss(const ParamVector& w, std::span<const std::size_t> idx) const {
    const Eigen::Vector2d theta = unpack(w);
    double sum = 0.0;
    for (auto i : idx) sum += clients[i].loss(theta);
    return sum / static_cast<double>(idx.size());
  }

  LossGrad batch_loss_grad(const ParamVector& w, std::span<const std::size_t> idx) const {
    const Eigen::Vector2d theta = unpack(w);
    Eigen::Vector2d g = Eigen::Vector2d::Zero();
    double sum = 0.0;
    for (auto i : idx) {
      sum += clients[i].loss(theta);
      g += clients[i].grad(theta);
    }
    g /= static_cast<double>(idx.size());
    LossGrad out;
    out.loss = sum / static_cast<double>(idx.size());
    out.grad = pack(g);
    return out;
  }
};

// One shard per client, each holding exactly its own quadratic.
inline std::vector<ClientShard> one_shard_per_client(std::size_t count) {
  std::vector<ClientShard> shards(count);
  for (std::size_t i = 0; i < count; ++i) {
    shards[i].client_id = static_cast<int>(i);
    shards[i].indices = {i};
  }
  return shards;
}

}  // namespace fedlab::toy
