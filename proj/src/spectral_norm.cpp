#include "windcomfort/spectral_norm.hpp"

#include <cmath>

#include "windcomfort/error.hpp"
#include "windcomfort/rng.hpp"

namespace wc {
namespace {

template <typename T>
T norm2(const std::vector<T>& x) {
  T acc = 0;
  for (T v : x) acc += v * v;
  return std::sqrt(acc);
}

}  // namespace

template <typename T>
std::vector<T> random_unit_vector(int n, std::mt19937_64& rng) {
  std::vector<T> u(n);
  T norm = 0;
  while (norm == T(0)) {
    for (T& x : u) x = static_cast<T>(standard_normal(rng));
    norm = norm2(u);
  }
  for (T& x : u) x /= norm;
  return u;
}

template <typename T>
SpectralStep<T> spectral_normalize(std::span<const T> weight, int rows, std::span<const T> u,
                                   std::mt19937_64* rng) {
  require(rows > 0 && weight.size() % rows == 0, ErrorCode::ShapeError,
          "spectral_normalize: weight size not divisible by rows");
  require(u.size() == static_cast<std::size_t>(rows), ErrorCode::ShapeMismatch,
          "spectral_normalize: u has wrong length");
  const std::size_t cols = weight.size() / rows;
  SpectralStep<T> out;
  out.u.assign(u.begin(), u.end());
  out.v.assign(cols, T(0));

  for (int attempt = 0;; ++attempt) {
    std::fill(out.v.begin(), out.v.end(), T(0));
    for (int i = 0; i < rows; ++i) {
      const T ui = out.u[i];
      const T* wr = weight.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) out.v[j] += wr[j] * ui;
    }
    const T vn = norm2(out.v);
    if (vn > T(0) && std::isfinite(vn)) {
      for (T& x : out.v) x /= vn;
      break;
    }
    if (!rng || attempt >= 4) fail(ErrorCode::DegenerateWeight, "W^T u vanished");
    out.u = random_unit_vector<T>(rows, *rng);
  }

  std::vector<T> wv(rows, T(0));
  for (int i = 0; i < rows; ++i) {
    const T* wr = weight.data() + i * cols;
    T acc = 0;
    for (std::size_t j = 0; j < cols; ++j) acc += wr[j] * out.v[j];
    wv[i] = acc;
  }
  const T un = norm2(wv);
  require(un > T(0) && std::isfinite(un), ErrorCode::DegenerateWeight, "W v vanished");
  for (int i = 0; i < rows; ++i) out.u[i] = wv[i] / un;
  T sigma = 0;
  for (int i = 0; i < rows; ++i) sigma += out.u[i] * wv[i];
  out.sigma = sigma;
  out.normalized.resize(weight.size());
  for (std::size_t i = 0; i < weight.size(); ++i) out.normalized[i] = weight[i] / sigma;
  return out;
}

template <typename T>
std::vector<T> power_iteration_trace(std::span<const T> weight, int rows, std::vector<T>& u,
                                     int iterations) {
  std::vector<T> trace;
  trace.reserve(iterations);
  for (int i = 0; i < iterations; ++i) {
    SpectralStep<T> step = spectral_normalize<T>(weight, rows, u);
    u = std::move(step.u);
    trace.push_back(step.sigma);
  }
  return trace;
}

template SpectralStep<float> spectral_normalize<float>(std::span<const float>, int,
                                                       std::span<const float>, std::mt19937_64*);
template SpectralStep<double> spectral_normalize<double>(std::span<const double>, int,
                                                         std::span<const double>, std::mt19937_64*);
template std::vector<float> power_iteration_trace<float>(std::span<const float>, int,
                                                         std::vector<float>&, int);
template std::vector<double> power_iteration_trace<double>(std::span<const double>, int,
                                                           std::vector<double>&, int);
template std::vector<float> random_unit_vector<float>(int, std::mt19937_64&);
template std::vector<double> random_unit_vector<double>(int, std::mt19937_64&);

}  // namespace wc
