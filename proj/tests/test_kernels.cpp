#include <doctest.h>

#include <random>
#include <vector>

#include "windcomfort/kernels.hpp"

using namespace wc::kernels;

namespace {

std::vector<float> randn(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d;
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("parallel gemm matches the serial reference for every transpose combination") {
    const int shapes[][3] = {{1, 1, 1}, {7, 5, 3}, {37, 130, 65}, {96, 2048, 256}, {101, 17, 300}};
    for (auto [m, n, k] : shapes) {
      for (Trans ta : {Trans::No, Trans::Yes}) {
        for (Trans tb : {Trans::No, Trans::Yes}) {
          const auto a = randn(static_cast<std::size_t>(m) * k, 1);
          const auto b = randn(static_cast<std::size_t>(k) * n, 2);
          auto c0 = randn(static_cast<std::size_t>(m) * n, 3);
          auto c1 = c0;
          const int lda = ta == Trans::No ? k : m;
          const int ldb = tb == Trans::No ? n : k;
          serial::gemm<float>(ta, tb, m, n, k, 0.5f, a.data(), lda, b.data(), ldb, 0.25f, c0.data(), n);
          parallel::gemm<float>(ta, tb, m, n, k, 0.5f, a.data(), lda, b.data(), ldb, 0.25f, c1.data(), n);
          double worst = 0;
          for (std::size_t i = 0; i < c0.size(); ++i) worst = std::max(worst, std::abs(double(c0[i]) - c1[i]));
          CHECK(worst < 1e-3 * std::sqrt(double(k)));
        }
      }
    }
  }

  TEST_CASE("beta zero ignores garbage in the output") {
    const auto a = randn(12, 4), b = randn(12, 5);
    std::vector<float> c(9, std::numeric_limits<float>::quiet_NaN());
    parallel::gemm<float>(Trans::No, Trans::No, 3, 3, 4, 1.0f, a.data(), 4, b.data(), 3, 0.0f, c.data(), 3);
    for (float v : c) CHECK(std::isfinite(v));
  }

  TEST_CASE("double gemm agrees to rounding") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> d;
    const int m = 19, n = 23, k = 31;
    std::vector<double> a(m * k), b(k * n), c0(m * n, 0), c1(m * n, 0);
    for (auto& x : a) x = d(rng);
    for (auto& x : b) x = d(rng);
    serial::gemm<double>(Trans::No, Trans::Yes, m, n, k, 1.0, a.data(), k, b.data(), k, 0.0, c0.data(), n);
    parallel::gemm<double>(Trans::No, Trans::Yes, m, n, k, 1.0, a.data(), k, b.data(), k, 0.0, c1.data(), n);
    for (int i = 0; i < m * n; ++i) CHECK(c0[i] == doctest::Approx(c1[i]).epsilon(1e-12));
  }

  TEST_CASE("im2col and col2im match the serial versions exactly") {
    for (ConvGeom g : {ConvGeom{3, 9, 7, 4, 2, 1}, ConvGeom{2, 8, 8, 3, 1, 1}, ConvGeom{1, 5, 5, 7, 1, 3}}) {
      const auto img = randn(static_cast<std::size_t>(g.channels) * g.height * g.width, 6);
      std::vector<float> c0(static_cast<std::size_t>(g.col_rows()) * g.col_cols());
      auto c1 = c0;
      serial::im2col(g, img.data(), c0.data());
      parallel::im2col(g, img.data(), c1.data());
      CHECK(c0 == c1);
      std::vector<float> i0(img.size(), 0.0f), i1(img.size(), 0.0f);
      serial::col2im(g, c0.data(), i0.data());
      parallel::col2im(g, c0.data(), i1.data());
      CHECK(i0 == i1);
    }
  }

  TEST_CASE("im2col + gemm reproduces the direct convolution") {
    const int cin = 3, cout = 4, h = 10, w = 9, k = 4, s = 2, p = 1;
    const auto x = randn(cin * h * w, 7);
    const auto wt = randn(cout * cin * k * k, 8);
    const auto bias = randn(cout, 9);
    ConvGeom g{cin, h, w, k, s, p};
    std::vector<float> cols(static_cast<std::size_t>(g.col_rows()) * g.col_cols());
    parallel::im2col(g, x.data(), cols.data());
    std::vector<float> y(static_cast<std::size_t>(cout) * g.col_cols());
    parallel::gemm<float>(Trans::No, Trans::No, cout, g.col_cols(), g.col_rows(), 1.0f, wt.data(), g.col_rows(),
                          cols.data(), g.col_cols(), 0.0f, y.data(), g.col_cols());
    for (int o = 0; o < cout; ++o)
      for (int i = 0; i < g.col_cols(); ++i) y[o * g.col_cols() + i] += bias[o];
    std::vector<float> ref(y.size());
    serial::conv2d_direct(x.data(), cin, h, w, wt.data(), bias.data(), cout, k, s, p, ref.data());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-4));
  }

  TEST_CASE("instance norm forward and backward match the serial reference") {
    const int planes = 5, size = 37;
    const auto x = randn(planes * size, 10);
    const auto dy = randn(planes * size, 11);
    std::vector<float> y0(x.size()), y1(x.size()), s0(planes), s1(planes), d0(x.size()), d1(x.size());
    serial::instance_norm_forward(x.data(), planes, size, 1e-5f, y0.data(), s0.data());
    parallel::instance_norm_forward(x.data(), planes, size, 1e-5f, y1.data(), s1.data());
    CHECK(y0 == y1);
    serial::instance_norm_backward(y0.data(), s0.data(), dy.data(), planes, size, d0.data());
    parallel::instance_norm_backward(y1.data(), s1.data(), dy.data(), planes, size, d1.data());
    CHECK(d0 == d1);
    for (int p = 0; p < planes; ++p) {
      double m = 0;
      for (int i = 0; i < size; ++i) m += y0[p * size + i];
      CHECK(std::abs(m / size) < 1e-5);
    }
  }
}
