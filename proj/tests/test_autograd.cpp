#include <doctest.h>

#include <functional>
#include <random>

#include "windcomfort/autograd.hpp"
#include "windcomfort/spectral_norm.hpp"

using namespace wc;
using V = ag::Var<double>;

namespace {

V param(Shape s, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  Tensor<double> t(std::move(s));
  for (auto& x : t.data) x = d(rng);
  return V(t, true);
}

// Compares the analytic gradient of f with central differences for every input element.
double grad_error(const std::function<V(const std::vector<V>&)>& f, std::vector<V> inputs) {
  V out = f(inputs);
  out.backward();
  std::vector<Tensor<double>> analytic;
  for (auto& v : inputs) analytic.push_back(v.grad());
  double worst = 0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < inputs[i].value().numel(); ++k) {
      double& x = inputs[i].value().data[k];
      const double keep = x;
      x = keep + h;
      const double up = f(inputs).item();
      x = keep - h;
      const double down = f(inputs).item();
      x = keep;
      const double num = (up - down) / (2 * h);
      const double a = analytic[i].data[k];
      worst = std::max(worst, std::abs(num - a) / std::max(1.0, std::abs(num) + std::abs(a)));
    }
  }
  return worst;
}

// Weighted sum so every output element carries a distinct gradient.
V reduce(const V& y) {
  Tensor<double> w(y.shape());
  for (std::size_t i = 0; i < w.numel(); ++i) w.data[i] = std::sin(0.37 * static_cast<double>(i) + 0.1);
  return ag::mean(ag::mul(y, V(w)));
}

}  // namespace

TEST_SUITE("autograd") {
  TEST_CASE("convolution gradients") {
    CHECK(grad_error([](auto& v) { return reduce(ag::conv2d(v[0], v[1], v[2], 2, 1)); },
                     {param({1, 2, 6, 6}, 1), param({3, 2, 4, 4}, 2), param({3}, 3)}) < 1e-6);
    CHECK(grad_error([](auto& v) { return reduce(ag::conv_transpose2d(v[0], v[1], v[2], 2, 1, 0)); },
                     {param({1, 3, 3, 3}, 4), param({3, 2, 4, 4}, 5), param({2}, 6)}) < 1e-6);
  }

  TEST_CASE("normalisation and activations") {
    CHECK(grad_error([](auto& v) { return reduce(ag::instance_norm(v[0])); }, {param({1, 2, 4, 5}, 7)}) < 1e-5);
    CHECK(grad_error([](auto& v) { return reduce(ag::leaky_relu(v[0], 0.2)); }, {param({1, 1, 4, 4}, 8)}) < 1e-6);
    CHECK(grad_error([](auto& v) { return reduce(ag::tanh(v[0])); }, {param({1, 1, 4, 4}, 9)}) < 1e-6);
    CHECK(grad_error([](auto& v) { return reduce(ag::sigmoid(v[0])); }, {param({1, 1, 4, 4}, 10)}) < 1e-6);
    CHECK(grad_error([](auto& v) { return reduce(ag::reflect_pad(v[0], 2)); }, {param({1, 2, 4, 4}, 11)}) < 1e-6);
  }

  TEST_CASE("structural ops") {
    CHECK(grad_error([](auto& v) { return reduce(ag::concat_channels(v[0], v[1])); },
                     {param({1, 2, 3, 3}, 12), param({1, 1, 3, 3}, 13)}) < 1e-6);
    CHECK(grad_error([](auto& v) { return reduce(ag::bmm(v[0], v[1], true, false)); },
                     {param({2, 3, 4}, 14), param({2, 3, 5}, 15)}) < 1e-6);
    CHECK(grad_error([](auto& v) { return reduce(ag::softmax_last(v[0])); }, {param({2, 3, 4}, 16)}) < 1e-6);
    CHECK(grad_error([](auto& v) { return reduce(ag::mean_spatial(v[0])); }, {param({1, 3, 4, 4}, 17)}) < 1e-6);
    CHECK(grad_error([](auto& v) { return reduce(ag::max_spatial(v[0])); }, {param({1, 3, 4, 4}, 18)}) < 1e-6);
    CHECK(grad_error([](auto& v) { return reduce(ag::mean_channels(v[0])); }, {param({1, 3, 4, 4}, 19)}) < 1e-6);
    CHECK(grad_error([](auto& v) { return reduce(ag::max_channels(v[0])); }, {param({1, 3, 4, 4}, 20)}) < 1e-6);
  }

  TEST_CASE("losses") {
    CHECK(grad_error([](auto& v) { return ag::bce_with_logits(v[0], 1.0); }, {param({1, 1, 3, 3}, 21)}) < 1e-6);
    CHECK(grad_error([](auto& v) { return ag::mse_to_constant(v[0], 0.0); }, {param({1, 1, 3, 3}, 22)}) < 1e-6);
    CHECK(grad_error([](auto& v) { return ag::l1_mean(v[0], v[1]); }, {param({1, 1, 3, 3}, 23), param({1, 1, 3, 3}, 24)}) <
          1e-6);
  }

  TEST_CASE("spectral division treats u and v as constants") {
    std::mt19937_64 rng(3);
    V w = param({4, 2, 3, 3}, 25);
    const auto u0 = random_unit_vector<double>(4, rng);
    const auto step = spectral_normalize<double>(w.value().data, 4, u0);
    CHECK(grad_error([&](auto& v) { return reduce(ag::spectral_divide(v[0], step.u, step.v)); }, {w}) < 1e-6);
  }

  TEST_CASE("no-grad mode records no graph") {
    V x = param({1, 1, 2, 2}, 26);
    ag::NoGradGuard g;
    V y = ag::tanh(x);
    CHECK_FALSE(y.requires_grad());
  }

  TEST_CASE("shared subexpressions accumulate gradients") {
    V x = param({1, 1, 2, 2}, 27);
    V y = ag::mean(ag::mul(x, x));
    y.backward();
    for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad().data[i] == doctest::Approx(x.value().data[i] / 2));
  }
}
