#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "windcomfort/eval.hpp"
#include "windcomfort/image.hpp"

using namespace wc;

namespace {

std::vector<double> random_field(std::mt19937_64& rng, int n, double hi) {
  std::uniform_real_distribution<double> u(0.0, hi);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = u(rng);
  return v;
}

FieldGrid flow_of(std::vector<float> vals, int h, int w) {
  FieldGrid g(h, w, {Channel::Velocity});
  g.values = std::move(vals);
  return g;
}

Model tiny_model(const DatasetManifest& m, std::uint64_t seed) {
  GeneratorSpec g;
  g.depth = 6;
  g.base_filters = 2;
  TrainData d{m, {}, {}, {}};
  d.samples = oracle::desk_fixture().samples;
  return build_model(training_header("unet", g, std::nullopt, d, seed));
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("hand-derived metric values") {
    const std::vector<double> y{0, 1}, yh{1, 1};
    CHECK(std::abs(mae(y, yh) - 0.5) <= 1e-9);
    CHECK(std::abs(rmse(y, yh) - std::sqrt(0.5)) <= 1e-9);
    CHECK(mae(y, y) == 0.0);
    CHECK(rmse(y, y) == 0.0);
    const std::vector<double> a{1, 2}, ah{1.1, 1.8};
    CHECK(std::abs(mre(a, ah, 0.05).value - 0.1) <= 1e-9);
    const std::vector<double> shifted{1.3, 1.3};
    CHECK(std::abs(mae(std::vector<double>{1, 1}, shifted) - 0.3) <= 1e-9);
  }

  TEST_CASE("zero targets are excluded from mre") {
    const std::vector<double> y{0, 2, 4}, yh{1, 3, 4};
    const MreResult r = mre(y, yh, 0.5);
    CHECK(r.included == 2);
    CHECK(r.excluded == 1);
    CHECK(r.value == doctest::Approx(0.25));
    CHECK(oracle::error_code([] { mre(std::vector<double>{0, 0.1}, std::vector<double>{1, 1}, 0.5); }) ==
          ErrorCode::AllPixelsExcluded);
  }

  TEST_CASE("shape and emptiness errors") {
    CHECK(oracle::error_code([] { mae(std::vector<double>{1, 2}, std::vector<double>{1}); }) ==
          ErrorCode::ShapeMismatch);
    CHECK(oracle::error_code([] { rmse(std::vector<double>{}, std::vector<double>{}); }) ==
          ErrorCode::InvalidArgument);
  }

  TEST_CASE("rmse dominates mae and both are symmetric") {
    std::mt19937_64 rng(13);
    for (int t = 0; t < 1000; ++t) {
      const int n = 1 + static_cast<int>(rng() % 40);
      const auto y = random_field(rng, n, 5.0), yh = random_field(rng, n, 5.0);
      CHECK(rmse(y, yh) >= mae(y, yh) - 1e-15);
      CHECK(mae(y, yh) == mae(yh, y));
      CHECK(rmse(y, yh) == rmse(yh, y));
    }
  }

  TEST_CASE("scale law") {
    std::mt19937_64 rng(14);
    const auto y = random_field(rng, 64, 3.0), yh = random_field(rng, 64, 3.0);
    const double m = mae(y, yh), r = rmse(y, yh), e = mre(y, yh, 0.1).value;
    for (double c : {0.5, 2.0, 10.0}) {
      std::vector<double> cy(y), cyh(yh);
      for (auto& v : cy) v *= c;
      for (auto& v : cyh) v *= c;
      CHECK(mae(cy, cyh) == doctest::Approx(c * m).epsilon(1e-12));
      CHECK(rmse(cy, cyh) == doctest::Approx(c * r).epsilon(1e-12));
      CHECK(mre(cy, cyh, 0.1 * c).value == doctest::Approx(e).epsilon(1e-12));
    }
  }

  TEST_CASE("metrics ignore pixel order") {
    std::mt19937_64 rng(15);
    auto y = random_field(rng, 50, 2.0), yh = random_field(rng, 50, 2.0);
    const double m = mae(y, yh), r = rmse(y, yh);
    std::vector<int> perm(50);
    for (int i = 0; i < 50; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> py(50), pyh(50);
    for (int i = 0; i < 50; ++i) {
      py[i] = y[perm[i]];
      pyh[i] = yh[perm[i]];
    }
    CHECK(mae(py, pyh) == doctest::Approx(m).epsilon(1e-12));
    CHECK(rmse(py, pyh) == doctest::Approx(r).epsilon(1e-12));
  }

  TEST_CASE("residual map") {
    const FieldGrid y = flow_of({0, 1, 2, 3, 4, 5}, 2, 3);
    const FieldGrid yh = flow_of({1, 1, 2, 5, 4, 4.5f}, 2, 3);
    const FieldGrid r = residual_map(y, yh);
    CHECK(r.values == std::vector<float>{1, 0, 0, 2, 0, 0.5f});
    std::vector<double> a(y.values.begin(), y.values.end()), b(yh.values.begin(), yh.values.end());
    CHECK(r.meta.at("mean") == doctest::Approx(mae(a, b)).epsilon(1e-12));
    CHECK(residual_map(y, y).meta.at("mean") == 0.0);
    const auto png = encode_png(render_viridis(r.values, r.height, r.width, 0, 2));
    CHECK(png_dimensions(png) == std::pair<int, int>{3, 2});
  }

  TEST_CASE("targets as predictions score zero") {
    const auto& fx = oracle::desk_fixture();
    std::vector<FieldGrid> t;
    for (const auto& s : fx.samples) t.push_back(s.flow);
    const MetricReport r = evaluate_predictions(t, t, fx.manifest.v_max);
    CHECK(r.mae == 0.0);
    CHECK(r.rmse == 0.0);
    CHECK(r.mre == 0.0);
    CHECK(r.samples.size() == t.size());
    CHECK(r.pixels == t.size() * 64 * 64);
    CHECK(r.to_json().at("units").get<std::string>().find("normalized") != std::string::npos);
  }

  TEST_CASE("evaluate is deterministic and splits the dataset") {
    const auto& fx = oracle::desk_fixture();
    const Model m = tiny_model(fx.manifest, 1);
    const MetricReport a = evaluate(m, fx.manifest, fx.samples);
    const MetricReport b = evaluate(m, fx.manifest, fx.samples);
    CHECK(a.to_json() == b.to_json());
    CHECK(a.samples.size() == split_members(fx.manifest, 8, SplitPart::Test).size());
    CHECK(a.rmse >= a.mae);
    CHECK(evaluate(m, fx.manifest, fx.samples, SplitPart::All).samples.size() == 8);
    CHECK(parse_split("train") == SplitPart::Train);
    CHECK(oracle::error_code([] { parse_split("validation"); }) == ErrorCode::InvalidArgument);
  }

  TEST_CASE("several seeds aggregate to mean and spread") {
    const auto& fx = oracle::desk_fixture();
    const Model m1 = tiny_model(fx.manifest, 1), m2 = tiny_model(fx.manifest, 2);
    const MetricReport r = evaluate({&m1, &m2}, fx.manifest, fx.samples);
    REQUIRE(r.seed_mae.size() == 2);
    CHECK(r.mae == doctest::Approx(0.5 * (r.seed_mae[0] + r.seed_mae[1])));
    CHECK(r.mae_std == doctest::Approx(std::abs(r.seed_mae[0] - r.seed_mae[1]) / std::sqrt(2.0)));
  }

  TEST_CASE("cross evaluation labels both families") {
    const auto& fx = oracle::desk_fixture();
    const Model m = tiny_model(fx.manifest, 1);
    DatasetManifest other = fx.manifest;
    other.family = "two";
    const MetricReport r = cross_evaluate(m, other, fx.samples);
    CHECK(r.source_family == "single");
    CHECK(r.target_family == "two");
    CHECK(r.samples.size() == 8);
    CHECK(std::isfinite(r.mae));
    const MetricReport same = cross_evaluate(m, fx.manifest, fx.samples);
    CHECK(same.to_json().at("mae") == evaluate(m, fx.manifest, fx.samples).to_json().at("mae"));
  }

  TEST_CASE("metric files") {
    const auto& fx = oracle::desk_fixture();
    const MetricReport r = evaluate(tiny_model(fx.manifest, 1), fx.manifest, fx.samples);
    const auto dir = oracle::temp_dir("metrics");
    write_metrics_json(dir / "metrics.json", r);
    write_metrics_csv(dir / "metrics.csv", r);
    std::ifstream j(dir / "metrics.json");
    const auto parsed = nlohmann::json::parse(j);
    for (const char* k : {"mae", "rmse", "mre"}) CHECK(parsed.contains(k));
    std::ifstream c(dir / "metrics.csv");
    std::string header;
    std::getline(c, header);
    CHECK(header == "sample,mae,rmse,mre");
    std::filesystem::remove_all(dir);
  }
}
