#pragma once

#include <random>
#include <span>
#include <vector>

namespace wc {

template <typename T>
struct SpectralStep {
  std::vector<T> normalized;  // W / sigma
  std::vector<T> u;           // updated left singular vector estimate
  std::vector<T> v;           // right singular vector estimate
  T sigma = 0;                // u^T W v
};

// One power-iteration step on W viewed as a [rows, size/rows] matrix:
//   v <- W^T u / |W^T u|,  u' <- W v / |W v|,  sigma = u'^T W v,  W_bar = W / sigma.
// Throws DegenerateWeight when W^T u vanishes and no rng is supplied to draw a fresh u;
// with an rng, u is redrawn (a few attempts) before giving up.
template <typename T>
SpectralStep<T> spectral_normalize(std::span<const T> weight, int rows, std::span<const T> u,
                                   std::mt19937_64* rng = nullptr);

// Runs `iterations` steps starting from u and returns the sigma estimate after each.
template <typename T>
std::vector<T> power_iteration_trace(std::span<const T> weight, int rows, std::vector<T>& u,
                                     int iterations);

template <typename T>
std::vector<T> random_unit_vector(int n, std::mt19937_64& rng);

}  // namespace wc
