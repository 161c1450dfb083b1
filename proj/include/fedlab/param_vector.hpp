#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedlab/errors.hpp"

namespace fedlab {

struct LayerSlice {
  std::string name;
  std::size_t start = 0;
  std::size_t len = 0;

  bool operator==(const LayerSlice&) const = default;
};

using Layout = std::vector<LayerSlice>;

// Flat parameter / update / gradient vector plus a layer segmentation map.
// Segments are contiguous, disjoint, and tile [0, size()) in order.
struct ParamVector {
  std::vector<double> values;
  Layout layout;

  std::size_t size() const { return values.size(); }

  std::span<double> segment(const LayerSlice& s) {
    return {values.data() + s.start, s.len};
  }
  std::span<const double> segment(const LayerSlice& s) const {
    return {values.data() + s.start, s.len};
  }

  std::span<const double> segment(const std::string& layer_name) const {
    for (const auto& s : layout) {
      if (s.name == layer_name) return segment(s);
    }
    throw ContractError("no layer named '" + layer_name + "'");
  }

  bool all_finite() const {
    for (double v : values) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool same_layout(const ParamVector& other) const {
    return layout == other.layout && values.size() == other.values.size();
  }
};

inline void check_layout(const ParamVector& v) {
  std::size_t pos = 0;
  for (const auto& s : v.layout) {
    if (s.start != pos) throw ContractError("layout segment '" + s.name + "' is not contiguous");
    pos += s.len;
  }
  if (pos != v.size()) throw ContractError("layout does not cover the parameter vector");
}

inline void require_same_layout(const ParamVector& a, const ParamVector& b,
                                const char* where) {
  if (!a.same_layout(b)) throw ContractError(std::string(where) + ": layout mismatch");
}

// y += alpha * x
inline void axpy(double alpha, const ParamVector& x, ParamVector& y) {
  require_same_layout(x, y, "axpy");
  for (std::size_t i = 0; i < y.values.size(); ++i) y.values[i] += alpha * x.values[i];
}

inline void scale(ParamVector& x, double alpha) {
  for (auto& v : x.values) v *= alpha;
}

inline ParamVector zeros_like(const ParamVector& x) {
  ParamVector z;
  z.values.assign(x.values.size(), 0.0);
  z.layout = x.layout;
  return z;
}

inline ParamVector subtract(const ParamVector& a, const ParamVector& b) {
  require_same_layout(a, b, "subtract");
  ParamVector d = a;
  for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] -= b.values[i];
  return d;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double max_abs_diff(const ParamVector& a, const ParamVector& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = std::fabs(a.values[i] - b.values[i]);
    if (d > m) m = d;
  }
  return m;
}

inline double max_rel_diff(const ParamVector& a, const ParamVector& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double scale = std::max({std::fabs(a.values[i]), std::fabs(b.values[i]), 1.0});
    const double d = std::fabs(a.values[i] - b.values[i]) / scale;
    if (d > m) m = d;
  }
  return m;
}

}  // namespace fedlab
