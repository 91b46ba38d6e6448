#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "windcomfort/layers.hpp"
#include "windcomfort/nets.hpp"
#include "windcomfort/spectral_norm.hpp"

using namespace wc;
using V = ag::Var<float>;

namespace {

V random_input(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d;
  Tensor<float> t(std::move(s));
  for (auto& x : t.data) x = d(rng);
  return V(t);
}

}  // namespace

TEST_SUITE("nets") {
  TEST_CASE("parameter counts at the full-size configuration") {
    GeneratorSpec g;
    DiscriminatorSpec d;
    auto G = build_generator<float>(g, 1);
    auto D = build_discriminator<float>(d, 2);
    CHECK(G->param_count() == 54403457);
    CHECK(D->param_count() == 2763713);
    GeneratorSpec r;
    r.family = GeneratorFamily::ResNet9;
    CHECK(build_generator<float>(r, 3)->param_count() == 11365633);
    CHECK(param_count<float>(nullptr) == 0);
  }

  TEST_CASE("every generator maps H x W x C to H x W x 1 within [-1, 1]") {
    for (int n : {64, 128}) {
      for (auto fam : {GeneratorFamily::UNet, GeneratorFamily::ResNet9}) {
        GeneratorSpec g;
        g.family = fam;
        g.base_filters = 8;
        g.depth = n == 64 ? 6 : 7;
        g.in_channels = 2;
        auto G = build_generator<float>(g, 4);
        G->set_training(false);
        ag::NoGradGuard ng;
        const V y = G->forward(random_input({1, 2, n, n}, 5));
        CHECK(y.shape() == Shape{1, 1, n, n});
        for (float v : y.value().data) CHECK((v >= -1.0f && v <= 1.0f));
      }
    }
  }

  TEST_CASE("unet input side must be divisible by 2^depth") {
    GeneratorSpec g;
    g.base_filters = 4;
    g.depth = 4;
    auto G = build_generator<float>(g, 6);
    ag::NoGradGuard ng;
    CHECK_THROWS_AS(G->forward(random_input({1, 1, 24, 24}, 7)), Error);
  }

  TEST_CASE("patch grid of the five-layer discriminator") {
    DiscriminatorSpec d;
    CHECK(patch_grid_size(d, 256) == 30);
    d.base_filters = 8;
    auto D = build_discriminator<float>(d, 8);
    ag::NoGradGuard ng;
    const V y = D->forward(random_input({1, 2, 256, 256}, 9));
    CHECK(y.shape() == Shape{1, 1, 30, 30});
  }

  TEST_CASE("spectral norm wraps every discriminator conv") {
    DiscriminatorSpec d;
    d.spectral_norm = true;
    auto D = build_discriminator<float>(d, 10);
    CHECK(D->spectral_states().size() == 5);
    for (const auto& st : D->spectral_states()) {
      double n = 0;
      for (float x : st->u) n += double(x) * x;
      CHECK(n == doctest::Approx(1.0).epsilon(1e-5));
    }
  }

  TEST_CASE("same spec and seed give identical weights") {
    GeneratorSpec g;
    g.base_filters = 8;
    g.depth = 5;
    auto a = build_generator<float>(g, 11);
    auto b = build_generator<float>(g, 11);
    auto c = build_generator<float>(g, 12);
    bool same = true, differ = false;
    for (std::size_t i = 0; i < a->parameters().size(); ++i) {
      same = same && a->parameters()[i].var.value().data == b->parameters()[i].var.value().data;
      differ = differ || a->parameters()[i].var.value().data != c->parameters()[i].var.value().data;
    }
    CHECK(same);
    CHECK(differ);
  }

  TEST_CASE("eval mode is deterministic, training mode applies dropout") {
    GeneratorSpec g;
    g.base_filters = 8;
    g.depth = 5;
    auto G = build_generator<float>(g, 13);
    const V x = random_input({1, 1, 32, 32}, 14);
    ag::NoGradGuard ng;
    G->set_training(false);
    const auto e1 = G->forward(x).value().data;
    const auto e2 = G->forward(x).value().data;
    CHECK(e1 == e2);
    G->set_training(true);
    G->seed_runtime(1);
    const auto t1 = G->forward(x).value().data;
    const auto t2 = G->forward(x).value().data;
    CHECK(t1 != t2);
  }

  TEST_CASE("self-attention is the identity at initialisation") {
    ParamRegistry<float> reg(15);
    SelfAttention<float> sa(reg, "sa", 16, false);
    std::mt19937_64 r1(1), r2(2);
    ForwardContext ctx{false, &r1, &r2};
    const V x = random_input({1, 16, 5, 7}, 16);
    const V y = sa(x, ctx);
    CHECK(y.shape() == x.shape());
    CHECK(y.value().data == x.value().data);
    const V a = sa.attention_map(x, ctx);
    CHECK(a.shape() == Shape{1, 35, 35});
    for (int i = 0; i < 35; ++i) {
      double s = 0;
      for (int j = 0; j < 35; ++j) s += a.value().data[i * 35 + j];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
    CHECK_THROWS_AS(SelfAttention<float>(reg, "bad", 12, false), Error);
  }

  TEST_CASE("cbam maps are gates of the documented shapes") {
    ParamRegistry<float> reg(17);
    Cbam<float> cb(reg, "cbam", 32, false);
    std::mt19937_64 r1(1), r2(2);
    ForwardContext ctx{false, &r1, &r2};
    const V x = random_input({1, 32, 6, 6}, 18);
    const V mc = cb.channel_map(x, ctx);
    CHECK(mc.shape() == Shape{1, 32, 1, 1});
    const V refined = ag::mul(x, mc);
    const V ms = cb.spatial_map(refined, ctx);
    CHECK(ms.shape() == Shape{1, 1, 6, 6});
    for (float v : mc.value().data) CHECK((v > 0 && v < 1));
    for (float v : ms.value().data) CHECK((v > 0 && v < 1));
    CHECK(cb(x, ctx).shape() == x.shape());
  }

  TEST_CASE("cbam with unit maps returns its input") {
    const V x = random_input({1, 4, 3, 3}, 19);
    const V y = cbam_refine(x, V(Tensor<float>({1, 4, 1, 1}, 1.0f)), V(Tensor<float>({1, 1, 3, 3}, 1.0f)));
    CHECK(y.value().data == x.value().data);
  }

  TEST_CASE("coordinate channels span [-1, 1]") {
    const auto t = coord_tensor<float>(1, 4, 5);
    CHECK(t.at(0, 0, 0, 0) == -1.0f);
    CHECK(t.at(0, 0, 3, 0) == 1.0f);
    CHECK(t.at(0, 1, 0, 4) == 1.0f);
    CHECK(t.at(0, 1, 2, 2) == 0.0f);
  }
}

TEST_SUITE("spectral_norm") {
  TEST_CASE("isotropic scaling converges in one step") {
    std::vector<double> w{2, 0, 0, 0, 2, 0, 0, 0, 2};
    std::vector<double> u{0.6, 0.8, 0.0};
    const auto s = spectral_normalize<double>(w, 3, u);
    CHECK(s.sigma == doctest::Approx(2.0));
    CHECK(s.normalized[0] == doctest::Approx(1.0));
    CHECK(s.normalized[1] == doctest::Approx(0.0));
  }

  TEST_CASE("power iteration is non-decreasing and reaches the SVD value") {
    std::mt19937_64 rng(20);
    std::normal_distribution<double> d;
    std::vector<double> w(4 * 6);
    for (auto& x : w) x = d(rng);
    auto u = random_unit_vector<double>(4, rng);
    const auto trace = power_iteration_trace<double>(w, 4, u, 30);
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] >= trace[i - 1] - 1e-12);
    CHECK(trace.back() == doctest::Approx(oracle::largest_singular_value(w, 4, 6)).epsilon(1e-3));
  }

  TEST_CASE("zero weight is degenerate") {
    std::vector<double> w(6, 0.0);
    std::vector<double> u{1.0, 0.0};
    CHECK_THROWS_AS(spectral_normalize<double>(w, 2, u), Error);
  }
}
