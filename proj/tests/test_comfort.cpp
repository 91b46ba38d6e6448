#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "windcomfort/comfort.hpp"

using namespace wc;

namespace {

const Model& small_model() {
  static const Model m = [] {
    ModelHeader h;
    h.arch = "unet";
    h.generator.depth = 5;
    h.generator.base_filters = 4;
    h.norm = {8.0, 40.0};
    h.v_ref = 5.0;
    h.size = 32;
    h.seed = 5;
    return build_model(h);
  }();
  return m;
}

WindRose uniform_rose() {
  WindRose r;
  r.bin_edges_ms = {2, 4, 6, 8, 10};
  r.freq.assign(8, std::vector<double>(5, 1.0 / 40));
  return r;
}

WindRose random_rose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  WindRose r;
  r.bin_edges_ms = {1.5, 3, 5, 7, 10, 14};
  r.freq.assign(8, std::vector<double>(6));
  double total = 0;
  for (auto& row : r.freq)
    for (auto& f : row) total += (f = u(rng) < 0.3 ? 0.0 : u(rng));
  for (auto& row : r.freq)
    for (auto& f : row) f /= total;
  return r;
}

std::vector<std::uint8_t> rot90(const std::vector<std::uint8_t>& v, int n) {
  std::vector<std::uint8_t> out(v.size());
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) out[r * n + c] = v[c * n + (n - 1 - r)];
  return out;
}

FieldGrid disk(int n, double radius) {
  FieldGrid g(n, n, {Channel::Mask});
  const double cc = 0.5 * (n - 1);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      if ((r - cc) * (r - cc) + (c - cc) * (c - cc) <= radius * radius) g.at(r, c, 0) = 1.0f;
  return g;
}

}  // namespace

TEST_SUITE("comfort") {
  TEST_CASE("sector names and rotations") {
    CHECK(sector_names()[0] == "N");
    CHECK(sector_names()[6] == "W");
    CHECK(parse_sector("SE") == 3);
    CHECK(oracle::error_code([] { parse_sector("NNE"); }) == ErrorCode::UnsupportedAngle);
    CHECK(sector_rotation(6) == 0);
    CHECK(sector_rotation(0) == 90);
    CHECK(sector_rotation(2) == 180);
    CHECK(sector_rotation(4) == 270);
    CHECK(sector_rotation(7) == 45);
    CHECK(oracle::error_code([&] { predict_direction_degrees(small_model(), disk(32, 5), 30); }) ==
          ErrorCode::UnsupportedAngle);
  }

  TEST_CASE("wind from the west needs no rotation") {
    std::mt19937_64 rng(1);
    const FieldGrid geo = rasterize(oracle::random_scene(rng, 2), 32, false);
    CHECK(same_values(predict_direction(small_model(), geo, 6), predict_flow(small_model(), geo)));
  }

  TEST_CASE("quarter-turn sectors are definitional rotations") {
    std::mt19937_64 rng(2);
    const FieldGrid geo = rasterize(oracle::random_scene(rng, 2), 32, false);
    const FieldGrid east = predict_direction(small_model(), geo, 2);
    const FieldGrid want = rotate_field(predict_flow(small_model(), rotate_field(geo, 180)), 180);
    CHECK(same_values(east, want));
    CHECK(same_values(predict_direction_degrees(small_model(), geo, 90), east));
  }

  TEST_CASE("a symmetric disk gives rotated predictions") {
    const FieldGrid geo = disk(32, 6.5);
    const FieldGrid west = predict_direction(small_model(), geo, 6);
    CHECK(same_values(predict_direction(small_model(), geo, 0), rotate_field(west, 270)));
    CHECK(same_values(predict_direction(small_model(), geo, 4), rotate_field(west, 90)));
    const FieldGrid nw = predict_direction(small_model(), geo, 7);
    CHECK(same_values(predict_direction(small_model(), geo, 1), rotate_field(nw, 270)));
  }

  TEST_CASE("rose validation and json") {
    WindRose r = uniform_rose();
    CHECK_NOTHROW(r.validate());
    CHECK(r.bin_speed(0) == 1.0);
    CHECK(r.bin_speed(4) == 9.0);
    CHECK(r.sector_mass(3) == doctest::Approx(1.0 / 8));
    r.freq[0][0] += 0.01;
    CHECK(oracle::error_code([&] { r.validate(); }) == ErrorCode::UnnormalizedRose);
    r = uniform_rose();
    r.freq[1][1] = -r.freq[1][1];
    r.freq[1][2] *= 3;
    CHECK(oracle::error_code([&] { r.validate(); }) == ErrorCode::UnnormalizedRose);

    std::mt19937_64 rng(3);
    const WindRose a = random_rose(rng);
    auto j = a.to_json();
    CHECK(j.at("sectors").size() == 8);
    // reversed sector order in the file
    nlohmann::json rev = j;
    rev["sectors"] = nlohmann::json::array();
    rev["freq"] = nlohmann::json::array();
    for (int s = 7; s >= 0; --s) {
      rev["sectors"].push_back(j["sectors"][s]);
      rev["freq"].push_back(j["freq"][s]);
    }
    const WindRose b = WindRose::from_json(rev);
    CHECK(b.freq == a.freq);
    CHECK(a.shifted(2).freq[0] == a.freq[2]);
    CHECK(a.shifted(2).freq[7] == a.freq[1]);
  }

  TEST_CASE("criteria validation") {
    ComfortCriteria c;
    CHECK_NOTHROW(c.validate());
    c.thresholds_ms = {2.5, 4, 6};
    CHECK(oracle::error_code([&] { c.validate(); }) == ErrorCode::CriteriaShapeMismatch);
    c = ComfortCriteria{};
    c.thresholds_ms = {2.5, 6, 4, 8};
    CHECK(oracle::error_code([&] { c.validate(); }) == ErrorCode::InvalidArgument);
    c = ComfortCriteria{};
    c.p_exc = 1.0;
    CHECK(oracle::error_code([&] { c.validate(); }) == ErrorCode::InvalidArgument);
    const ComfortCriteria d = ComfortCriteria::from_json(ComfortCriteria{}.to_json());
    CHECK(d.thresholds_ms == ComfortCriteria{}.thresholds_ms);
    CHECK(oracle::error_code([] { classify({{0.0}}, ComfortCriteria{}, 1, 1); }) ==
          ErrorCode::CriteriaShapeMismatch);
  }

  TEST_CASE("exceedance examples") {
    std::vector<FieldGrid> zero(8, FieldGrid(4, 4, {Channel::Velocity}));
    for (double thr : {0.1, 2.5, 8.0})
      for (double v : exceedance_values(zero, uniform_rose(), thr, 5.0)) CHECK(v == 0.0);

    std::vector<FieldGrid> speeds(8, FieldGrid(4, 4, {Channel::Velocity}));
    for (auto& s : speeds)
      for (float& v : s.values) v = 3.0f;
    for (double v : exceedance_values(speeds, uniform_rose(), 1e-9, 5.0)) CHECK(v == doctest::Approx(1.0));

    WindRose one;
    one.bin_edges_ms = {2, 4, 6};
    one.freq.assign(8, std::vector<double>(3, 0.0));
    one.freq[5][1] = 1.0;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> u(0, 9);
    std::vector<FieldGrid> rnd(8, FieldGrid(6, 6, {Channel::Velocity}));
    for (auto& s : rnd)
      for (float& v : s.values) v = u(rng);
    for (double v : exceedance_values(rnd, one, 4.0, 5.0)) CHECK((v == 0.0 || v == 1.0));
    // bin speed 3 with v_ref 5: exceeds 4 m/s when the prediction is above 20/3
    const auto e = exceedance_values(rnd, one, 4.0, 5.0);
    for (std::size_t p = 0; p < e.size(); ++p) CHECK(e[p] == (rnd[5].values[p] * 3.0 / 5.0 > 4.0 ? 1.0 : 0.0));

    WindRose bad = uniform_rose();
    bad.freq[0][0] = 0.5;
    CHECK(oracle::error_code([&] { exceedance_values(speeds, bad, 1.0, 5.0); }) == ErrorCode::UnnormalizedRose);
  }

  TEST_CASE("exceedance is non-increasing in threshold") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(0, 12);
    for (int t = 0; t < 10; ++t) {
      std::vector<FieldGrid> sp(8, FieldGrid(8, 8, {Channel::Velocity}));
      for (auto& s : sp)
        for (float& v : s.values) v = u(rng);
      const WindRose rose = random_rose(rng);
      std::vector<double> prev(64, 2.0);
      for (double thr = 0.0; thr < 30.0; thr += 0.37) {
        const auto e = exceedance_values(sp, rose, thr, 5.0);
        for (std::size_t p = 0; p < e.size(); ++p) {
          CHECK(e[p] <= prev[p]);
          CHECK(e[p] >= 0.0);
        }
        prev = e;
      }
    }
  }

  TEST_CASE("classification rules") {
    const ComfortCriteria c;
    // pixels: calm, saturated, on the sitting boundary, strolling, just over p_exc everywhere
    const std::vector<std::vector<double>> exc{
        {0.0, 1.0, 0.05, 0.5, 0.0501},
        {0.0, 1.0, 0.01, 0.2, 0.0501},
        {0.0, 1.0, 0.0, 0.04, 0.0501},
        {0.0, 1.0, 0.0, 0.0, 0.0501},
    };
    const ComfortMap m = classify(exc, c, 1, 5, {false, false, false, false, false});
    CHECK(m.classes == std::vector<std::uint8_t>{0, 4, 0, 2, 4});
    const ComfortMap masked = classify(exc, c, 1, 5, {true, false, false, false, false});
    CHECK(masked.classes[0] == kNoData);
    const auto h = m.histogram();
    CHECK(h[0] == 2);
    CHECK(h[4] == 2);
  }

  TEST_CASE("more wind never improves comfort") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0, 0.2);
    const ComfortCriteria c;
    for (int t = 0; t < 200; ++t) {
      std::vector<std::vector<double>> a(4, std::vector<double>(1)), b(4, std::vector<double>(1));
      double run = 1.0;
      for (int k = 0; k < 4; ++k) a[k][0] = run = std::min(run, u(rng));
      for (int k = 0; k < 4; ++k) b[k][0] = std::min(1.0, a[k][0] + u(rng));
      CHECK(classify(b, c, 1, 1).classes[0] >= classify(a, c, 1, 1).classes[0]);
    }
  }

  TEST_CASE("calm rose is sitting everywhere off the buildings") {
    std::mt19937_64 rng(7);
    const FieldGrid geo = rasterize(oracle::random_scene(rng, 2), 32, false);
    WindRose calm;
    calm.bin_edges_ms = {0, 3, 6};
    calm.freq.assign(8, std::vector<double>(3, 0.0));
    for (int s = 0; s < 8; ++s) calm.freq[s][0] = 1.0 / 8;
    const ComfortMap m = comfort_map(small_model(), geo, calm, ComfortCriteria{});
    CHECK(m.provenance.at("predicted_sectors").empty());
    for (std::size_t p = 0; p < geo.pixels(); ++p) {
      if (geo.values[p] > 0.5f) {
        CHECK(m.classes[p] == kNoData);
      } else {
        CHECK(m.classes[p] == 0);
      }
    }
  }

  TEST_CASE("co-rotating geometry and rose rotates the comfort map") {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 3; ++t) {
      const FieldGrid geo = rasterize(oracle::random_scene(rng, 1 + t), 32, false);
      const WindRose rose = random_rose(rng);
      const ComfortMap a = comfort_map(small_model(), geo, rose, ComfortCriteria{});
      const ComfortMap b = comfort_map(small_model(), rotate_field(geo, 90), rose.shifted(2), ComfortCriteria{});
      CHECK(b.classes == rot90(a.classes, 32));
    }
  }

  TEST_CASE("pixels outside the disk are no-data only with diagonal wind") {
    const FieldGrid geo = disk(32, 4);
    WindRose cardinal = uniform_rose();
    for (int s = 1; s < 8; s += 2) std::fill(cardinal.freq[s].begin(), cardinal.freq[s].end(), 0.0);
    for (int s = 0; s < 8; s += 2)
      for (auto& f : cardinal.freq[s]) f = 1.0 / 20;
    const ComfortMap a = comfort_map(small_model(), geo, cardinal, ComfortCriteria{});
    CHECK(a.classes[0] != kNoData);
    CHECK(a.provenance.at("predicted_sectors").size() == 4);
    const ComfortMap b = comfort_map(small_model(), geo, uniform_rose(), ComfortCriteria{});
    CHECK(b.classes[0] == kNoData);
    CHECK(b.classes[16 * 32 + 16] == kNoData);
    CHECK(b.classes[16 * 32 + 3] != kNoData);
  }

  TEST_CASE("same inputs give the same map and a legend image") {
    std::mt19937_64 rng(9);
    const FieldGrid geo = rasterize(oracle::random_scene(rng, 2), 32, false);
    const ComfortMap a = comfort_map(small_model(), geo, uniform_rose(), ComfortCriteria{});
    const ComfortMap b = comfort_map(small_model(), geo, uniform_rose(), ComfortCriteria{});
    CHECK(a.classes == b.classes);
    CHECK(a.to_json() == b.to_json());
    const auto j = a.to_json();
    CHECK(j.at("legend").size() == 5);
    CHECK(j.at("histogram").size() == 5);
    CHECK(j.contains("provenance"));
    const RgbImage img = render_comfort(a);
    CHECK(img.width == 32);
    CHECK(img.height == 32 + 8);
    const auto& pal = comfort_palette();
    const std::uint8_t* px = &img.pixels[(static_cast<std::size_t>(35) * 32 + 1) * 3];
    CHECK(Rgb{px[0], px[1], px[2]} == pal[0]);
  }
}
