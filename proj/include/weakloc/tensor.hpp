#pragma once

#include <cstddef>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "weakloc/errors.hpp"
#include "weakloc/rng.hpp"

namespace weakloc {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= std::size_t(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major double tensor. Plain value type; differentiation happens on
// a Tape (tape.hpp).
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
      throw shape_error("tensor: shape " + shape_str(shape) + " does not match buffer of " +
                        std::to_string(data.size()) + " values");
  }

  std::size_t numel() const { return data.size(); }

  // Unchecked row-major accessors.
  double& operator()(int i) { return data[std::size_t(i)]; }
  double operator()(int i) const { return data[std::size_t(i)]; }
  double& operator()(int i, int j) { return data[std::size_t(i) * shape[1] + j]; }
  double operator()(int i, int j) const { return data[std::size_t(i) * shape[1] + j]; }
  double& operator()(int i, int j, int k) {
    return data[(std::size_t(i) * shape[1] + j) * shape[2] + k];
  }
  double operator()(int i, int j, int k) const {
    return data[(std::size_t(i) * shape[1] + j) * shape[2] + k];
  }
  double& operator()(int i, int j, int k, int l) {
    return data[((std::size_t(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  double operator()(int i, int j, int k, int l) const {
    return data[((std::size_t(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
};

inline Tensor randn(Shape s, Rng& rng, double stddev = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = stddev * normal01(rng);
  return t;
}

inline Tensor rand_uniform(Shape s, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = uniform_in(rng, lo, hi);
  return t;
}

}  // namespace weakloc
