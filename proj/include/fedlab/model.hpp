#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fedlab/dataset.hpp"
#include "fedlab/errors.hpp"
#include "fedlab/param_vector.hpp"
#include "fedlab/rng.hpp"

namespace fedlab {

enum class ModelKind { kLogistic, kMlp, kPaperCnn };

// Architecture description. All models end in a softmax over num_classes and
// are trained with mean cross-entropy.
//
// kPaperCnn: conv 32@5x5 (pad 2) + ReLU + 2x2 max-pool, conv 64@5x5 (pad 2) +
// ReLU + 2x2 max-pool, fc1 512 + ReLU, fc2 -> classes. Input height and width
// must be divisible by 4 (two pooling stages).
struct ModelSpec {
  ModelKind kind = ModelKind::kLogistic;
  std::vector<std::size_t> input_shape;    // {features} or {channels, H, W}
  int num_classes = 0;
  std::vector<std::size_t> hidden_sizes;   // mlp only

  static ModelSpec logistic(std::size_t features, int classes) {
    return {ModelKind::kLogistic, {features}, classes, {}};
  }
  static ModelSpec mlp(std::size_t features, std::vector<std::size_t> hidden, int classes) {
    return {ModelKind::kMlp, {features}, classes, std::move(hidden)};
  }
  static ModelSpec paper_cnn(std::size_t channels, std::size_t h, std::size_t w, int classes) {
    return {ModelKind::kPaperCnn, {channels, h, w}, classes, {}};
  }
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

struct DensePlan {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t seg = 0;  // index into layout
};

struct ConvPlan {
  std::string name;
  std::size_t in_ch = 0, out_ch = 0;
  std::size_t h = 0, w = 0;  // input spatial size; output is h/2 x w/2 after pool
  std::size_t seg = 0;
  static constexpr std::size_t kK = 5;
  static constexpr int kPad = 2;

  std::size_t patch() const { return in_ch * kK * kK; }
};

struct ModelPlan {
  std::vector<ConvPlan> convs;
  std::vector<DensePlan> denses;  // ReLU after every dense layer except the last
  Layout layout;
  std::size_t dim = 0;
  std::size_t input_dim = 0;
  int num_classes = 0;
};

inline ModelPlan build_plan(const ModelSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("model: need at least 2 classes");
  if (spec.input_shape.empty()) throw ConfigError("model: empty input shape");
  for (auto s : spec.input_shape)
    if (s == 0) throw ConfigError("model: zero-sized input dimension");

  ModelPlan plan;
  plan.num_classes = spec.num_classes;
  plan.input_dim = 1;
  for (auto s : spec.input_shape) plan.input_dim *= s;

  std::size_t pos = 0;
  auto add_dense = [&](const std::string& name, std::size_t in, std::size_t out) {
    const std::size_t len = in * out + out;
    plan.denses.push_back({name, in, out, plan.layout.size()});
    plan.layout.push_back({name, pos, len});
    pos += len;
  };

  const auto classes = static_cast<std::size_t>(spec.num_classes);
  switch (spec.kind) {
    case ModelKind::kLogistic:
      add_dense("fc1", plan.input_dim, classes);
      break;
    case ModelKind::kMlp: {
      if (spec.hidden_sizes.empty()) throw ConfigError("mlp: needs at least one hidden layer");
      std::size_t in = plan.input_dim;
      std::size_t layer = 1;
      for (auto hsize : spec.hidden_sizes) {
        if (hsize == 0) throw ConfigError("mlp: zero-width hidden layer");
        add_dense("fc" + std::to_string(layer++), in, hsize);
        in = hsize;
      }
      add_dense("fc" + std::to_string(layer), in, classes);
      break;
    }
    case ModelKind::kPaperCnn: {
      if (spec.input_shape.size() != 3)
        throw ConfigError("paper_cnn: input must be (channels, H, W)");
      const std::size_t ch = spec.input_shape[0];
      const std::size_t h = spec.input_shape[1];
      const std::size_t w = spec.input_shape[2];
      if (h % 4 != 0 || w % 4 != 0)
        throw ConfigError("paper_cnn: H and W must be divisible by 4");
      auto add_conv = [&](const std::string& name, std::size_t in_ch, std::size_t out_ch,
                          std::size_t ih, std::size_t iw) {
        const std::size_t len = out_ch * in_ch * ConvPlan::kK * ConvPlan::kK + out_ch;
        plan.convs.push_back({name, in_ch, out_ch, ih, iw, plan.layout.size()});
        plan.layout.push_back({name, pos, len});
        pos += len;
      };
      add_conv("conv1", ch, 32, h, w);
      add_conv("conv2", 32, 64, h / 2, w / 2);
      add_dense("fc1", 64 * (h / 4) * (w / 4), 512);
      add_dense("fc2", 512, classes);
      break;
    }
  }
  plan.dim = pos;
  return plan;
}

// FNV-1a over the piecewise-linear decisions taken in a forward pass (ReLU
// signs, max-pool argmaxes). Two evaluations with equal hashes lie on the
// same smooth piece of the loss, which is what central differences assume.
struct KinkSignature {
  std::uint64_t hash = 1469598103934665603ULL;

  void add(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      hash ^= (v >> (8 * i)) & 0xff;
      hash *= 1099511628211ULL;
    }
  }
};

inline void check_inputs(const ModelPlan& plan, const ParamVector& params, const Batch& batch) {
  if (params.size() != plan.dim || params.layout != plan.layout)
    throw ContractError("model: parameter vector does not match spec layout");
  if (batch.n == 0) throw ContractError("model: empty batch");
  if (batch.feature_dim != plan.input_dim)
    throw ContractError("model: batch feature dim " + std::to_string(batch.feature_dim) +
                        " != model input dim " + std::to_string(plan.input_dim));
  for (int label : batch.labels)
    if (label < 0 || label >= plan.num_classes)
      throw ContractError("model: batch label out of range");
}

// (ch, h, w) -> patch-major column matrix (patch x h*w), zero-padded borders.
inline void im2col(const double* input, std::size_t in_ch, std::size_t h, std::size_t w,
                   RowMat& cols) {
  const std::size_t k = ConvPlan::kK;
  const int pad = ConvPlan::kPad;
  cols.resize(static_cast<Eigen::Index>(in_ch * k * k), static_cast<Eigen::Index>(h * w));
  for (std::size_t ic = 0; ic < in_ch; ++ic) {
    const double* plane = input + ic * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const auto row = static_cast<Eigen::Index>((ic * k + ky) * k + kx);
        for (std::size_t oy = 0; oy < h; ++oy) {
          const int iy = static_cast<int>(oy + ky) - pad;
          for (std::size_t ox = 0; ox < w; ++ox) {
            const int ix = static_cast<int>(ox + kx) - pad;
            double v = 0.0;
            if (iy >= 0 && iy < static_cast<int>(h) && ix >= 0 && ix < static_cast<int>(w))
              v = plane[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)];
            cols(row, static_cast<Eigen::Index>(oy * w + ox)) = v;
          }
        }
      }
    }
  }
}

inline void col2im_accumulate(const RowMat& dcols, std::size_t in_ch, std::size_t h,
                              std::size_t w, double* dinput) {
  const std::size_t k = ConvPlan::kK;
  const int pad = ConvPlan::kPad;
  for (std::size_t ic = 0; ic < in_ch; ++ic) {
    double* plane = dinput + ic * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const auto row = static_cast<Eigen::Index>((ic * k + ky) * k + kx);
        for (std::size_t oy = 0; oy < h; ++oy) {
          const int iy = static_cast<int>(oy + ky) - pad;
          if (iy < 0 || iy >= static_cast<int>(h)) continue;
          for (std::size_t ox = 0; ox < w; ++ox) {
            const int ix = static_cast<int>(ox + kx) - pad;
            if (ix < 0 || ix >= static_cast<int>(w)) continue;
            plane[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)] +=
                dcols(row, static_cast<Eigen::Index>(oy * w + ox));
          }
        }
      }
    }
  }
}

struct ConvCache {
  std::vector<double> input;        // batch x (in_ch*h*w), post previous stage
  std::vector<double> relu_out;     // batch x (out_ch*h*w)
  std::vector<std::uint8_t> pool_arg;  // batch x (out_ch*(h/2)*(w/2)), window slot 0..3
  std::vector<double> pool_out;     // batch x (out_ch*(h/2)*(w/2))
};

// Forward pass; optionally records caches for backprop and the kink signature.
// Returns per-sample logits (n x C, row-major).
inline RowMat forward(const ModelPlan& plan, const ParamVector& params, const Batch& batch,
                      std::vector<ConvCache>* conv_caches, std::vector<RowMat>* dense_inputs,
                      KinkSignature* kinks) {
  const auto n = static_cast<Eigen::Index>(batch.n);

  RowMat acts;
  if (!plan.convs.empty()) {
    std::vector<double> cur = batch.features;  // batch-major planes
    std::size_t cur_len = plan.input_dim;
    RowMat cols;
    for (const auto& conv : plan.convs) {
      const std::size_t h = conv.h, w = conv.w;
      const std::size_t out_len = conv.out_ch * h * w;
      const std::size_t ph = h / 2, pw = w / 2;
      const std::size_t pool_len = conv.out_ch * ph * pw;
      ConvCache cache;
      cache.input = cur;
      cache.relu_out.resize(batch.n * out_len);
      cache.pool_arg.resize(batch.n * pool_len);
      cache.pool_out.resize(batch.n * pool_len);

      const auto& seg = plan.layout[conv.seg];
      CMapMat weights(params.values.data() + seg.start,
                      static_cast<Eigen::Index>(conv.out_ch),
                      static_cast<Eigen::Index>(conv.patch()));
      const double* bias = params.values.data() + seg.start + conv.out_ch * conv.patch();

      for (std::size_t s = 0; s < batch.n; ++s) {
        im2col(cur.data() + s * cur_len, conv.in_ch, h, w, cols);
        RowMat z = weights * cols;  // out_ch x h*w
        double* relu = cache.relu_out.data() + s * out_len;
        for (std::size_t oc = 0; oc < conv.out_ch; ++oc) {
          for (std::size_t p = 0; p < h * w; ++p) {
            const double v = z(static_cast<Eigen::Index>(oc), static_cast<Eigen::Index>(p)) +
                             bias[oc];
            const bool active = v > 0.0;
            if (kinks) kinks->add(active ? 1 : 0);
            relu[oc * h * w + p] = active ? v : 0.0;
          }
        }
        // 2x2 max-pool, stride 2; ties go to the first element in row-major
        // window order.
        double* pooled = cache.pool_out.data() + s * pool_len;
        std::uint8_t* args = cache.pool_arg.data() + s * pool_len;
        for (std::size_t oc = 0; oc < conv.out_ch; ++oc) {
          const double* plane = relu + oc * h * w;
          for (std::size_t py = 0; py < ph; ++py) {
            for (std::size_t px = 0; px < pw; ++px) {
              double best = plane[(2 * py) * w + 2 * px];
              std::uint8_t arg = 0;
              const std::size_t offs[4] = {(2 * py) * w + 2 * px, (2 * py) * w + 2 * px + 1,
                                           (2 * py + 1) * w + 2 * px,
                                           (2 * py + 1) * w + 2 * px + 1};
              for (std::uint8_t t = 1; t < 4; ++t) {
                if (plane[offs[t]] > best) {
                  best = plane[offs[t]];
                  arg = t;
                }
              }
              if (kinks) kinks->add(arg);
              pooled[oc * ph * pw + py * pw + px] = best;
              args[oc * ph * pw + py * pw + px] = arg;
            }
          }
        }
      }
      cur = cache.pool_out;
      cur_len = pool_len;
      if (conv_caches) conv_caches->push_back(std::move(cache));
    }
    acts = CMapMat(cur.data(), n, static_cast<Eigen::Index>(cur_len));
  } else {
    acts = CMapMat(batch.features.data(), n, static_cast<Eigen::Index>(plan.input_dim));
  }

  for (std::size_t li = 0; li < plan.denses.size(); ++li) {
    const auto& dense = plan.denses[li];
    const auto& seg = plan.layout[dense.seg];
    CMapMat weights(params.values.data() + seg.start, static_cast<Eigen::Index>(dense.out),
                    static_cast<Eigen::Index>(dense.in));
    Eigen::Map<const Eigen::VectorXd> bias(
        params.values.data() + seg.start + dense.in * dense.out,
        static_cast<Eigen::Index>(dense.out));
    if (dense_inputs) dense_inputs->push_back(acts);
    RowMat z = acts * weights.transpose();
    z.rowwise() += bias.transpose();
    if (li + 1 < plan.denses.size()) {
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        for (Eigen::Index j = 0; j < z.cols(); ++j) {
          const bool active = z(i, j) > 0.0;
          if (kinks) kinks->add(active ? 1 : 0);
          if (!active) z(i, j) = 0.0;
        }
      }
    }
    acts = std::move(z);
  }
  return acts;
}

// Mean cross-entropy from logits; optionally per-sample losses and the
// softmax-minus-onehot gradient (already divided by n).
inline double cross_entropy(const RowMat& logits, const std::vector<int>& labels,
                            std::vector<double>* per_sample, RowMat* dlogits) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index c = logits.cols();
  if (dlogits) dlogits->resize(n, c);
  if (per_sample) per_sample->resize(static_cast<std::size_t>(n));
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double m = logits(i, 0);
    for (Eigen::Index j = 1; j < c; ++j) m = std::max(m, logits(i, j));
    double sum = 0.0;
    for (Eigen::Index j = 0; j < c; ++j) sum += std::exp(logits(i, j) - m);
    const double lse = m + std::log(sum);
    const double li = lse - logits(i, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]));
    if (per_sample) (*per_sample)[static_cast<std::size_t>(i)] = li;
    total += li;
    if (dlogits) {
      for (Eigen::Index j = 0; j < c; ++j)
        (*dlogits)(i, j) = std::exp(logits(i, j) - lse) / static_cast<double>(n);
      (*dlogits)(i, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])) -=
          1.0 / static_cast<double>(n);
    }
  }
  return total / static_cast<double>(n);
}

inline double eval(const ModelPlan& plan, const ParamVector& params, const Batch& batch,
                   ParamVector* grad_out, std::vector<double>* logits_out,
                   std::vector<double>* per_sample_loss, KinkSignature* kinks) {
  check_inputs(plan, params, batch);
  std::vector<ConvCache> conv_caches;
  std::vector<RowMat> dense_inputs;
  RowMat logits = forward(plan, params, batch,
                          grad_out ? &conv_caches : nullptr,
                          grad_out ? &dense_inputs : nullptr, kinks);
  if (logits_out)
    logits_out->assign(logits.data(), logits.data() + logits.size());

  RowMat dlogits;
  const double loss =
      cross_entropy(logits, batch.labels, per_sample_loss, grad_out ? &dlogits : nullptr);
  if (!grad_out) return loss;

  ParamVector& grad = *grad_out;
  grad.values.assign(plan.dim, 0.0);
  grad.layout = plan.layout;

  // Dense stack backward.
  RowMat delta = std::move(dlogits);
  for (std::size_t li = plan.denses.size(); li-- > 0;) {
    const auto& dense = plan.denses[li];
    const auto& seg = plan.layout[dense.seg];
    CMapMat weights(params.values.data() + seg.start, static_cast<Eigen::Index>(dense.out),
                    static_cast<Eigen::Index>(dense.in));
    MapMat dweights(grad.values.data() + seg.start, static_cast<Eigen::Index>(dense.out),
                    static_cast<Eigen::Index>(dense.in));
    Eigen::Map<Eigen::VectorXd> dbias(grad.values.data() + seg.start + dense.in * dense.out,
                                      static_cast<Eigen::Index>(dense.out));
    const RowMat& input = dense_inputs[li];
    dweights = delta.transpose() * input;
    dbias = delta.colwise().sum().transpose();
    if (li == 0 && plan.convs.empty()) break;  // no need to push into raw features
    RowMat dinput = delta * weights;
    if (li > 0) {
      // ReLU mask of the previous dense layer's output (== this layer's input).
      for (Eigen::Index i = 0; i < dinput.rows(); ++i)
        for (Eigen::Index j = 0; j < dinput.cols(); ++j)
          if (input(i, j) <= 0.0) dinput(i, j) = 0.0;
    }
    delta = std::move(dinput);
  }

  // Conv stack backward.
  if (!plan.convs.empty()) {
    RowMat cols;
    for (std::size_t ci = plan.convs.size(); ci-- > 0;) {
      const auto& conv = plan.convs[ci];
      const auto& cache = conv_caches[ci];
      const std::size_t h = conv.h, w = conv.w;
      const std::size_t ph = h / 2, pw = w / 2;
      const std::size_t out_len = conv.out_ch * h * w;
      const std::size_t pool_len = conv.out_ch * ph * pw;
      const std::size_t in_len = conv.in_ch * h * w;

      const auto& seg = plan.layout[conv.seg];
      CMapMat weights(params.values.data() + seg.start,
                      static_cast<Eigen::Index>(conv.out_ch),
                      static_cast<Eigen::Index>(conv.patch()));
      MapMat dweights(grad.values.data() + seg.start, static_cast<Eigen::Index>(conv.out_ch),
                      static_cast<Eigen::Index>(conv.patch()));
      double* dbias = grad.values.data() + seg.start + conv.out_ch * conv.patch();

      RowMat dinput_all;
      const bool need_dinput = ci > 0;
      if (need_dinput) {
        dinput_all.resize(static_cast<Eigen::Index>(batch.n),
                          static_cast<Eigen::Index>(in_len));
        dinput_all.setZero();
      }

      for (std::size_t s = 0; s < batch.n; ++s) {
        // Un-pool into the ReLU output grid, applying the ReLU mask.
        RowMat dz(static_cast<Eigen::Index>(conv.out_ch), static_cast<Eigen::Index>(h * w));
        dz.setZero();
        const double* relu = cache.relu_out.data() + s * out_len;
        const std::uint8_t* args = cache.pool_arg.data() + s * pool_len;
        for (std::size_t oc = 0; oc < conv.out_ch; ++oc) {
          for (std::size_t py = 0; py < ph; ++py) {
            for (std::size_t px = 0; px < pw; ++px) {
              const std::size_t cell = oc * ph * pw + py * pw + px;
              const double g = delta(static_cast<Eigen::Index>(s),
                                     static_cast<Eigen::Index>(cell));
              if (g == 0.0) continue;
              const std::uint8_t arg = args[cell];
              const std::size_t oy = 2 * py + (arg >> 1);
              const std::size_t ox = 2 * px + (arg & 1);
              const std::size_t p = oy * w + ox;
              if (relu[oc * h * w + p] > 0.0)
                dz(static_cast<Eigen::Index>(oc), static_cast<Eigen::Index>(p)) += g;
            }
          }
        }
        im2col(cache.input.data() + s * in_len, conv.in_ch, h, w, cols);
        dweights.noalias() += dz * cols.transpose();
        for (std::size_t oc = 0; oc < conv.out_ch; ++oc)
          dbias[oc] += dz.row(static_cast<Eigen::Index>(oc)).sum();
        if (need_dinput) {
          RowMat dcols = weights.transpose() * dz;
          col2im_accumulate(dcols, conv.in_ch, h, w,
                            dinput_all.data() + static_cast<std::size_t>(
                                                    dinput_all.cols()) * s);
        }
      }
      delta = std::move(dinput_all);
    }
  }
  return loss;
}

}  // namespace detail

inline Layout layer_slices(const ModelSpec& spec) { return detail::build_plan(spec).layout; }

inline std::size_t param_count(const ModelSpec& spec) { return detail::build_plan(spec).dim; }

// Deterministic initialization: weights uniform in +-sqrt(6/fan_in), biases
// zero. Layers are drawn in forward order.
inline ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  const auto plan = detail::build_plan(spec);
  ParamVector params;
  params.values.assign(plan.dim, 0.0);
  params.layout = plan.layout;
  Rng rng = Rng::from(seed, stream::kInit);

  for (const auto& conv : plan.convs) {
    const auto& seg = plan.layout[conv.seg];
    const double bound = std::sqrt(6.0 / static_cast<double>(conv.patch()));
    const std::size_t n_weights = conv.out_ch * conv.patch();
    for (std::size_t i = 0; i < n_weights; ++i)
      params.values[seg.start + i] = rng.uniform(-bound, bound);
  }
  for (const auto& dense : plan.denses) {
    const auto& seg = plan.layout[dense.seg];
    const double bound = std::sqrt(6.0 / static_cast<double>(dense.in));
    const std::size_t n_weights = dense.in * dense.out;
    for (std::size_t i = 0; i < n_weights; ++i)
      params.values[seg.start + i] = rng.uniform(-bound, bound);
  }
  return params;
}

inline double loss(const ModelSpec& spec, const ParamVector& params, const Batch& batch) {
  return detail::eval(detail::build_plan(spec), params, batch, nullptr, nullptr, nullptr,
                      nullptr);
}

inline ParamVector grad(const ModelSpec& spec, const ParamVector& params, const Batch& batch) {
  ParamVector g;
  detail::eval(detail::build_plan(spec), params, batch, &g, nullptr, nullptr, nullptr);
  return g;
}

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

inline LossGrad loss_and_grad(const ModelSpec& spec, const ParamVector& params,
                              const Batch& batch) {
  LossGrad out;
  out.loss =
      detail::eval(detail::build_plan(spec), params, batch, &out.grad, nullptr, nullptr, nullptr);
  return out;
}

// n x C logits, row-major.
inline std::vector<double> logits(const ModelSpec& spec, const ParamVector& params,
                                  const Batch& batch) {
  std::vector<double> out;
  detail::eval(detail::build_plan(spec), params, batch, nullptr, &out, nullptr, nullptr);
  return out;
}

inline std::vector<double> per_sample_losses(const ModelSpec& spec, const ParamVector& params,
                                             const Batch& batch) {
  std::vector<double> out;
  detail::eval(detail::build_plan(spec), params, batch, nullptr, nullptr, &out, nullptr);
  return out;
}

// Top-1 accuracy; argmax ties break toward the lowest class index.
inline double accuracy(const ModelSpec& spec, const ParamVector& params, const Batch& batch) {
  const auto z = logits(spec, params, batch);
  const auto c = static_cast<std::size_t>(spec.num_classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batch.n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (z[i * c + j] > z[i * c + best]) best = j;
    if (static_cast<int>(best) == batch.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(batch.n);
}

struct FdCheckStats {
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  // coordinates whose +-eps evals crossed a ReLU/pool kink
};

// Worst relative error between `candidate` and central finite differences.
// Relative error uses a unit floor: |fd - g| / max(|fd|, |g|, 1).
// Coordinates whose perturbed evaluations land on different linear pieces
// (ReLU sign or pool argmax flips) are excluded and counted in stats.
// Checks every coordinate when d <= 2000, otherwise a seeded sample of 256.
inline double fd_max_rel_error(const ModelSpec& spec, const ParamVector& params,
                               const Batch& batch, double epsilon,
                               const ParamVector& candidate, FdCheckStats* stats = nullptr) {
  if (!(epsilon > 0.0) || epsilon > 1e-2)
    throw ContractError("fd_max_rel_error: epsilon must be in (0, 1e-2]");
  const auto plan = detail::build_plan(spec);
  detail::check_inputs(plan, params, batch);
  if (candidate.size() != plan.dim)
    throw ContractError("fd_max_rel_error: candidate gradient has wrong size");

  std::vector<std::size_t> coords;
  if (plan.dim <= 2000) {
    coords.resize(plan.dim);
    for (std::size_t i = 0; i < plan.dim; ++i) coords[i] = i;
  } else {
    Rng rng = Rng::from(plan.dim, stream::kGradCheck);
    coords = rng.sample_without_replacement(plan.dim, 256);
  }

  ParamVector probe = params;
  double worst = 0.0;
  FdCheckStats local;
  for (auto i : coords) {
    const double orig = probe.values[i];
    detail::KinkSignature sig_plus, sig_minus;
    probe.values[i] = orig + epsilon;
    const double lp = detail::eval(plan, probe, batch, nullptr, nullptr, nullptr, &sig_plus);
    probe.values[i] = orig - epsilon;
    const double lm = detail::eval(plan, probe, batch, nullptr, nullptr, nullptr, &sig_minus);
    probe.values[i] = orig;
    if (sig_plus.hash != sig_minus.hash) {
      local.skipped_kinks += 1;
      continue;
    }
    const double fd = (lp - lm) / (2.0 * epsilon);
    const double g = candidate.values[i];
    const double rel = std::fabs(fd - g) / std::max({std::fabs(fd), std::fabs(g), 1.0});
    worst = std::max(worst, rel);
    local.checked += 1;
  }
  if (stats) *stats = local;
  return worst;
}

inline double grad_check(const ModelSpec& spec, const ParamVector& params, const Batch& batch,
                         double epsilon, FdCheckStats* stats = nullptr) {
  return fd_max_rel_error(spec, params, batch, epsilon, grad(spec, params, batch), stats);
}

}  // namespace fedlab
