#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tsjepa {

/// Row-major dense matrix; token batches are stored one token per row.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vec = std::vector<double>;

/// Raised for violated preconditions, malformed inputs and shape mismatches.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline std::string shape_str(const Mat& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

inline void require_shape(const Mat& m, Eigen::Index rows, Eigen::Index cols,
                          std::string_view what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(std::string(what) + ": expected [" + std::to_string(rows) + "x" +
                std::to_string(cols) + "], got " + shape_str(m));
  }
}

// Exact (erf) GELU and its derivative.
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double gelu_grad(double x) {
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline std::size_t round_half_up(double x) {
  return static_cast<std::size_t>(std::floor(x + 0.5));
}

/// A named reference to one learnable tensor inside a parameter container.
struct ParamRef {
  std::string name;
  Mat* value;
};

/// Flattens any container exposing `visit(f, prefix)` into an ordered list.
/// Two containers of the same type yield lists in the same order, which is
/// what the optimizer, EMA and checkpoint code rely on.
template <class Params>
std::vector<ParamRef> collect(Params& p, const std::string& prefix = "") {
  std::vector<ParamRef> out;
  p.visit([&](const std::string& name, Mat& m) { out.push_back({name, &m}); }, prefix);
  return out;
}

template <class Params>
Params zeros_like(const Params& p) {
  Params z = p;
  z.visit([](const std::string&, Mat& m) { m.setZero(); }, "");
  return z;
}

template <class Params>
std::size_t parameter_count(Params& p) {
  std::size_t n = 0;
  p.visit([&](const std::string&, Mat& m) { n += static_cast<std::size_t>(m.size()); }, "");
  return n;
}

}  // namespace tsjepa
