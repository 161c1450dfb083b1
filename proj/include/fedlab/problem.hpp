#pragma once

#include <concepts>
#include <span>

#include "fedlab/dataset.hpp"
#include "fedlab/model.hpp"
#include "fedlab/param_vector.hpp"

namespace fedlab {

// A differentiable objective over an indexed sample set. batch_loss and
// batch_loss_grad return the mean over the given indices, so full-batch calls
// realize the exact objective gradient.
template <class P>
concept Problem = requires(const P& p, const ParamVector& w, std::span<const std::size_t> idx) {
  { p.sample_count() } -> std::convertible_to<std::size_t>;
  { p.batch_loss(w, idx) } -> std::convertible_to<double>;
  { p.batch_loss_grad(w, idx) } -> std::convertible_to<LossGrad>;
};

// The standard case: cross-entropy classification over a Dataset.
struct ClassifierProblem {
  ModelSpec spec;
  const Dataset* data = nullptr;

  std::size_t sample_count() const { return data->size(); }

  double batch_loss(const ParamVector& w, std::span<const std::size_t> idx) const {
    return loss(spec, w, gather(*data, idx));
  }

  LossGrad batch_loss_grad(const ParamVector& w, std::span<const std::size_t> idx) const {
    return loss_and_grad(spec, w, gather(*data, idx));
  }
};

static_assert(Problem<ClassifierProblem>);

}  // namespace fedlab
