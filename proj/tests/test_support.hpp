#pragma once

#include "tsjepa/gradcheck_suite.hpp"
#include "tsjepa/tsjepa.hpp"

namespace tsjepa::testing {

inline ModelConfig mini_config(bool causal = false) { return gradcheck_config(causal); }

inline std::vector<Vec> random_series(std::size_t n, std::size_t T, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec> out(n, Vec(T));
  for (auto& s : out)
    for (double& v : s) v = rng.normal();
  return out;
}

inline std::vector<const Vec*> ptrs(const std::vector<Vec>& v) {
  std::vector<const Vec*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

inline Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace tsjepa::testing
