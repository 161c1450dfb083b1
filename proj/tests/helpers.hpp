#pragma once

#include <cstdint>
#include <vector>

#include "fedlab/dataset.hpp"
#include "fedlab/model.hpp"
#include "fedlab/rng.hpp"

namespace testutil {

inline fedlab::Batch random_batch(std::size_t n, std::size_t dim, int classes,
                                  std::uint64_t seed) {
  fedlab::Rng rng(seed);
  fedlab::Batch b;
  b.n = n;
  b.feature_dim = dim;
  b.features.resize(n * dim);
  b.labels.resize(n);
  for (auto& f : b.features) f = rng.normal();
  for (auto& label : b.labels) label = static_cast<int>(rng.uniform_int(classes));
  return b;
}

inline fedlab::ParamVector random_params(const fedlab::ModelSpec& spec, std::uint64_t seed,
                                         double scale = 0.5) {
  auto p = fedlab::init_params(spec, seed);
  fedlab::Rng rng(seed ^ 0xabcdef);
  for (auto& v : p.values) v += scale * rng.normal() * 0.1;
  return p;
}

// Test-side central-difference gradient, built only on fedlab::loss.
inline std::vector<double> fd_gradient(const fedlab::ModelSpec& spec,
                                       const fedlab::ParamVector& params,
                                       const fedlab::Batch& batch, double eps) {
  fedlab::ParamVector probe = params;
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = probe.values[i];
    probe.values[i] = orig + eps;
    const double lp = fedlab::loss(spec, probe, batch);
    probe.values[i] = orig - eps;
    const double lm = fedlab::loss(spec, probe, batch);
    probe.values[i] = orig;
    g[i] = (lp - lm) / (2.0 * eps);
  }
  return g;
}

}  // namespace testutil
