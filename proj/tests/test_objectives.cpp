#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "windcomfort/objectives.hpp"

using namespace wc;
using D = ag::Var<double>;

namespace {

D grid(double v, Shape s = {2, 1, 3, 3}) { return D(Tensor<double>(std::move(s), v)); }

D from(std::vector<double> vals) {
  const int n = static_cast<int>(vals.size());
  return D(Tensor<double>({1, 1, 1, n}, std::move(vals)));
}

double bce_logit(double z, double label) {
  const double p = 1.0 / (1.0 + std::exp(-z));
  return -(label * std::log(p) + (1 - label) * std::log(1 - p));
}

}  // namespace

TEST_SUITE("objectives") {
  TEST_CASE("even odds give half ln 2") {
    const auto l = adv_loss(grid(0.0), grid(0.0));
    CHECK(l.loss_D.item() == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-12));
    CHECK(l.loss_G_adv.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  TEST_CASE("confident discriminator and fooled discriminator limits") {
    const auto perfect = adv_loss(grid(40.0), grid(-40.0));
    CHECK(perfect.loss_D.item() < 1e-12);
    const auto fooled = adv_loss(grid(0.0), grid(40.0));
    CHECK(fooled.loss_G_adv.item() < 1e-12);
  }

  TEST_CASE("loss_D is half the raw BCE average") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0, 2);
    Tensor<double> real({1, 1, 4, 4}), fake({1, 1, 4, 4});
    for (auto& v : real.data) v = n(rng);
    for (auto& v : fake.data) v = n(rng);
    double raw_real = 0, raw_fake = 0, g = 0;
    for (double z : real.data) raw_real += bce_logit(z, 1);
    for (double z : fake.data) {
      raw_fake += bce_logit(z, 0);
      g += bce_logit(z, 1);
    }
    raw_real /= 16;
    raw_fake /= 16;
    const auto l = adv_loss(D(real), D(fake));
    CHECK(l.loss_D.item() == doctest::Approx(0.5 * 0.5 * (raw_real + raw_fake)).epsilon(1e-12));
    CHECK(l.loss_G_adv.item() == doctest::Approx(g / 16).epsilon(1e-12));
  }

  TEST_CASE("mismatched patch grids") {
    CHECK(oracle::error_code([] { adv_loss(grid(0.0, {1, 1, 2, 2}), grid(0.0, {1, 1, 3, 3})); }) ==
          ErrorCode::ShapeMismatch);
    CHECK(oracle::error_code([] { l1_loss(grid(0.0, {1, 1, 2, 2}), grid(0.0, {1, 1, 3, 3})); }) ==
          ErrorCode::ShapeMismatch);
  }

  TEST_CASE("l1 examples") {
    CHECK(l1_loss(from({0.3, 0.7}), from({0.3, 0.7})).item() == 0.0);
    CHECK(l1_loss(from({0.0, 1.0}), from({1.0, 1.0})).item() == doctest::Approx(0.5));
    CHECK(l1_loss(from({1.25, -0.75, 0.25}), from({1.0, -1.0, 0.0})).item() == doctest::Approx(0.25));
  }

  TEST_CASE("pix2pix objective is affine in l1 with slope lambda") {
    CHECK(pix2pix_objective(0.0, 0.01, 100.0) == doctest::Approx(1.0));
    CHECK(pix2pix_objective(0.7, 0.3, 0.0) == 0.7);
    CHECK(pix2pix_objective(0.0, 0.02) == doctest::Approx(2.0));
    const D t = pix2pix_objective(from({0.5}), from({0.02}), 100.0);
    CHECK(t.item() == doctest::Approx(2.5));
    const double a = pix2pix_objective(0.4, 0.1, 37.0), b = pix2pix_objective(0.4, 0.2, 37.0);
    CHECK(b - a == doctest::Approx(3.7));
  }

  TEST_CASE("least squares targets") {
    CHECK(lsgan_loss(grid(1.0), 1.0).item() == 0.0);
    CHECK(lsgan_loss(grid(0.5), 1.0).item() == doctest::Approx(0.25));
    CHECK(lsgan_loss(grid(0.0), 0.0).item() == 0.0);
  }

  TEST_CASE("cycle loss") {
    const D x = from({0.1, -0.4, 0.9});
    const D y = from({0.5, 0.2, -0.3});
    CHECK(cycle_loss(x, x, y, y, 10.0).item() == 0.0);
    // G(x) = x + c, F(z) = z: F(G(x)) = x + c, G(F(y)) = y + c
    const double c = 0.2;
    const D xc = from({0.1 + c, -0.4 + c, 0.9 + c});
    const D yc = from({0.5 + c, 0.2 + c, -0.3 + c});
    CHECK(cycle_loss(x, xc, y, yc, 10.0).item() == doctest::Approx(10.0 * 2 * c));
    CHECK(cycle_loss(x, xc, y, y, 1.0).item() == doctest::Approx(c));
  }

  TEST_CASE("loss report") {
    LossReport r;
    r.loss_G_adv = 0.7;
    r.loss_G_L1 = 0.01;
    r.loss_G_total = 1.7;
    r.loss_D = 0.3;
    CHECK(r.finite());
    CHECK(r.to_json().at("loss_G_total").get<double>() == 1.7);
    CHECK_FALSE(r.to_json().contains("loss_cycle"));
    r.loss_cycle = NAN;
    CHECK_FALSE(r.finite());
  }

  TEST_CASE("losses are non-negative on random inputs") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0, 3);
    for (int t = 0; t < 20; ++t) {
      Tensor<double> a({1, 1, 3, 3}), b({1, 1, 3, 3});
      for (auto& v : a.data) v = n(rng);
      for (auto& v : b.data) v = n(rng);
      const auto l = adv_loss(D(a), D(b));
      CHECK(l.loss_D.item() >= 0);
      CHECK(l.loss_G_adv.item() >= 0);
      CHECK(lsgan_loss(D(a), 1.0).item() >= 0);
      CHECK(l1_loss(D(a), D(b)).item() > 0);
    }
  }
}
