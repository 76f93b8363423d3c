#pragma once

#include <cstdint>
#include <random>

#include "itst/tensor/graph.hpp"
#include "itst/tensor/tensor.hpp"

namespace itst::testing {

inline Tensor random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

inline Parameter random_param(std::mt19937_64& rng, const char* name, std::size_t rows,
                              std::size_t cols, double lo = -1.0, double hi = 1.0) {
  Parameter p{name, random_tensor(rng, rows, cols, lo, hi), {}};
  p.zero_grad();
  return p;
}

inline std::size_t random_dim(std::mt19937_64& rng, std::size_t lo = 1, std::size_t hi = 8) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace itst::testing
