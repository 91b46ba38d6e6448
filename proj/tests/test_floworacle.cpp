#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "windcomfort/floworacle.hpp"

using namespace wc;

namespace {

SolverConfig small_solver(int grid) {
  SolverConfig c;
  c.grid = grid;
  c.max_steps = 20000;
  return c;
}

Scene mirrored(const Scene& s) {
  Scene m = s;
  for (auto& b : m.buildings) {
    for (auto& p : b.polygon) p.y = s.extent - p.y;
    std::reverse(b.polygon.begin(), b.polygon.end());
  }
  return m;
}

}  // namespace

TEST_SUITE("floworacle") {
  TEST_CASE("empty domain carries the reference speed") {
    const SolveResult r = solve(FieldGrid(32, 32, {Channel::Mask}), small_solver(32));
    CHECK(r.converged);
    for (float v : r.speed.values) CHECK(std::abs(v - 5.0) <= 0.02 * 5.0);
    CHECK(r.mass_drift() < 1e-3);
  }

  TEST_CASE("solid cells are at rest and mass is conserved") {
    Scene s;
    s.buildings.push_back({{{40, 40}, {60, 40}, {60, 60}, {40, 60}}, 20});
    const FieldGrid mask = rasterize(s, 32, false);
    const SolveResult r = solve(mask, small_solver(32));
    CHECK(r.converged);
    for (std::size_t i = 0; i < mask.pixels(); ++i) {
      if (mask.values[i] > 0.5f) CHECK(r.speed.values[i] == 0.0f);
    }
    CHECK(r.mass_drift() < 1e-3);
    float peak = 0;
    for (float v : r.speed.values) peak = std::max(peak, v);
    CHECK(peak > 5.0f);
  }

  TEST_CASE("mirroring the scene north-south mirrors the flow") {
    Scene s;
    s.buildings.push_back({{{30, 55}, {45, 55}, {45, 80}, {30, 80}}, 20});
    const SolveResult a = solve(rasterize(s, 32, false), small_solver(32));
    const SolveResult b = solve(rasterize(mirrored(s), 32, false), small_solver(32));
    double worst = 0;
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c)
        worst = std::max(worst, static_cast<double>(std::abs(a.speed.at(r, c, 0) - b.speed.at(31 - r, c, 0))));
    CHECK(worst <= 1e-4 * 5.0);
  }

  TEST_CASE("families are pure functions of seed and index") {
    for (const auto& fam : family_names()) {
      FamilySpec f;
      f.family = fam;
      f.seed = 9;
      const Scene a = family_scene(f, 3);
      const Scene b = family_scene(f, 3);
      CHECK(scene_to_json(a) == scene_to_json(b));
      CHECK(scene_to_json(a) != scene_to_json(family_scene(f, 4)));
    }
  }

  TEST_CASE("generated set is bucketized and annotated") {
    const auto& ds = oracle::desk_fixture();
    CHECK(ds.samples.size() == 8);
    CHECK(ds.unconverged == 0);
    CHECK(ds.manifest.v_max >= ds.manifest.extra.at("observed_max_ms").get<double>());
    const double width = ds.manifest.v_max / ds.manifest.n_bins;
    for (const auto& s : ds.samples) {
      CHECK(s.geometry.height == 64);
      for (float v : s.flow.values) {
        const double k = v / width - 0.5;
        CHECK(std::abs(k - std::round(k)) < 1e-4);
      }
    }
  }

  TEST_CASE("bad configurations are rejected") {
    SolverConfig c;
    c.tau = 0.5;
    CHECK(oracle::error_code([&] { c.validate(); }) == ErrorCode::InvalidArgument);
    FamilySpec f;
    f.family = "tower";
    CHECK(oracle::error_code([&] { f.validate(); }) == ErrorCode::InvalidArgument);
  }
}
