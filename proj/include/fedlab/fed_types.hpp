#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "fedlab/errors.hpp"
#include "fedlab/param_vector.hpp"

namespace fedlab {

enum class AggMode { kWeighted, kNaive };

// Option I clients upload updates (delta = theta_k - theta), Option II full
// parameters; equivalent at eta_g = 1.
enum class UpdateOption { kDelta, kParams };

struct FedConfig {
  double eta_g = 1.0;            // global learning rate (Option I only)
  double eta_l = 0.0;            // local learning rate
  std::size_t batch_size = 0;    // B
  std::size_t local_epochs = 0;  // E
  std::size_t num_clients = 0;   // K
  std::size_t rounds = 0;        // R
  double client_fraction = 1.0;  // C, in (0, 1]
  std::size_t sync_period = 1;   // I, LocalSGD only
  AggMode agg_mode = AggMode::kWeighted;
  UpdateOption update_option = UpdateOption::kDelta;
  std::uint64_t seed = 1;
};

inline void validate(const FedConfig& cfg) {
  if (!(cfg.eta_g > 0.0)) throw ConfigError("eta_g must be > 0");
  if (!(cfg.eta_l > 0.0)) throw ConfigError("eta_l must be > 0");
  if (cfg.batch_size < 1) throw ConfigError("B must be >= 1");
  if (cfg.local_epochs < 1) throw ConfigError("E must be >= 1");
  if (cfg.num_clients < 1) throw ConfigError("K must be >= 1");
  if (cfg.rounds < 1) throw ConfigError("R must be >= 1");
  if (cfg.sync_period < 1) throw ConfigError("I must be >= 1");
  if (!(cfg.client_fraction > 0.0) || cfg.client_fraction > 1.0)
    throw ConfigError("C must be in (0, 1]");
}

struct ClientUpdate {
  int client_id = 0;
  ParamVector payload;  // delta for kDelta, parameters for kParams
  UpdateOption payload_kind = UpdateOption::kDelta;
  std::size_t n_samples = 0;  // |D_k|, the client's full shard size
  double train_loss = 0.0;    // mean of all mini-batch losses in the round
};

struct RoundResult {
  std::size_t round = 0;  // 0-based internally
  ParamVector params;     // global model after aggregation
  std::vector<int> participants;
  std::vector<ClientUpdate> updates;
};

// Exact rational for the Eq.-4 matching check: u = eta * (E*N) / (B*K).
struct Rational {
  long long num = 0;
  long long den = 1;

  static Rational make(long long n, long long d) {
    if (d == 0) throw ContractError("Rational: zero denominator");
    if (d < 0) {
      n = -n;
      d = -d;
    }
    const long long g = std::gcd(n < 0 ? -n : n, d);
    return {g ? n / g : n, g ? d / g : d};
  }

  // Parses a plain decimal like "0.005" or "1.25" exactly.
  static Rational from_decimal(const std::string& text) {
    if (text.empty()) throw ContractError("Rational: empty string");
    std::size_t pos = 0;
    bool negative = false;
    if (text[pos] == '+' || text[pos] == '-') {
      negative = text[pos] == '-';
      ++pos;
    }
    long long num = 0;
    long long den = 1;
    bool seen_digit = false;
    bool seen_dot = false;
    for (; pos < text.size(); ++pos) {
      const char c = text[pos];
      if (c == '.') {
        if (seen_dot) throw ContractError("Rational: bad decimal '" + text + "'");
        seen_dot = true;
        continue;
      }
      if (c < '0' || c > '9') throw ContractError("Rational: bad decimal '" + text + "'");
      seen_digit = true;
      num = num * 10 + (c - '0');
      if (seen_dot) den *= 10;
    }
    if (!seen_digit) throw ContractError("Rational: bad decimal '" + text + "'");
    return make(negative ? -num : num, den);
  }

  Rational times(long long n, long long d) const {
    return make(num * n, den * d);
  }

  bool operator==(const Rational&) const = default;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

// Eq.-4 effective update amount per round: u = eta * (E * N) / (B * K).
inline double effective_update_amount(double eta, std::size_t local_epochs, std::size_t n,
                                      std::size_t batch_size, std::size_t k) {
  if (!(eta > 0.0) || local_epochs == 0 || n == 0 || batch_size == 0 || k == 0)
    throw ContractError("effective_update_amount: all arguments must be positive");
  return eta * (static_cast<double>(local_epochs) * static_cast<double>(n)) /
         (static_cast<double>(batch_size) * static_cast<double>(k));
}

inline Rational effective_update_amount_rational(const Rational& eta,
                                                 std::size_t local_epochs, std::size_t n,
                                                 std::size_t batch_size, std::size_t k) {
  return eta.times(static_cast<long long>(local_epochs) * static_cast<long long>(n),
                   static_cast<long long>(batch_size) * static_cast<long long>(k));
}

}  // namespace fedlab
