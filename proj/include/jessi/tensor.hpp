#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "jessi/common.hpp"
#include "jessi/rng.hpp"

namespace jessi {

inline std::size_t numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major tensor. Rank 0 is a scalar (one element). The element type
// selects the precision: float for training, double for gradient checks.
template <typename Real>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<Real> data;

  Tensor() : shape{}, data(1, Real(0)) {}

  explicit Tensor(std::vector<std::size_t> s, Real fill = Real(0))
      : shape(std::move(s)), data(numel(shape), fill) {}

  Tensor(std::vector<std::size_t> s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != data.size())
      throw ShapeError(strf("tensor: shape %s holds %zu elements but %zu given",
                            shape_str(shape).c_str(), numel(shape), data.size()));
  }

  static Tensor scalar(Real v) {
    Tensor t;
    t.data[0] = v;
    return t;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }

  Real* ptr() { return data.data(); }
  const Real* ptr() const { return data.data(); }

  Real& operator[](std::size_t i) { return data[i]; }
  Real operator[](std::size_t i) const { return data[i]; }

  Real& operator()(std::size_t i, std::size_t j) {
    assert(rank() == 2);
    return data[i * shape[1] + j];
  }
  Real operator()(std::size_t i, std::size_t j) const {
    assert(rank() == 2);
    return data[i * shape[1] + j];
  }
  Real& operator()(std::size_t i, std::size_t j, std::size_t k) {
    assert(rank() == 3);
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  Real operator()(std::size_t i, std::size_t j, std::size_t k) const {
    assert(rank() == 3);
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  void fill(Real v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(Real(0)); }

  bool all_finite() const {
    for (Real v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  void check_finite(const char* what) const {
    if (!all_finite()) throw ValueError(strf("non-finite values in %s", what));
  }

  static Tensor uniform(std::vector<std::size_t> s, Real lo, Real hi, RngStream& rng) {
    Tensor t(std::move(s));
    for (Real& v : t.data) v = static_cast<Real>(rng.uniform(lo, hi));
    return t;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> t;
    t.shape = shape;
    t.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) t.data[i] = static_cast<Other>(data[i]);
    return t;
  }
};

// Trainable tensor plus its gradient accumulator. max_norm 0 means no bound.
template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;
  Real max_norm = Real(0);

  Parameter() = default;
  Parameter(std::string n, Tensor<Real> v, Real maxNorm = Real(0))
      : name(std::move(n)), value(std::move(v)), grad(value.shape), max_norm(maxNorm) {}

  void zero_grad() { grad.zero(); }
};

}  // namespace jessi
