#include "oracles.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <unistd.h>

namespace oracle {

using namespace wc;

std::vector<double> brute_force_sdf(const std::vector<std::uint8_t>& mask, int h, int w) {
  auto covered = [&](int r, int c) { return r >= 0 && r < h && c >= 0 && c < w && mask[r * w + c] != 0; };
  std::vector<std::pair<int, int>> boundary;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!covered(r, c)) continue;
      if (!covered(r - 1, c) || !covered(r + 1, c) || !covered(r, c - 1) || !covered(r, c + 1)) {
        boundary.emplace_back(r, c);
      }
    }
  }
  std::vector<double> out(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double best = std::numeric_limits<double>::infinity();
      for (auto [br, bc] : boundary) {
        best = std::min(best, std::hypot(static_cast<double>(r - br), static_cast<double>(c - bc)));
      }
      out[r * w + c] = covered(r, c) ? -best : best;
    }
  }
  return out;
}

double largest_singular_value(const std::vector<double>& m, int rows, int cols) {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> a(m.data(), rows, cols);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return svd.singularValues()(0);
}

FieldGrid random_mask(int n, std::mt19937_64& rng, double density) {
  FieldGrid g(n, n, {Channel::Mask});
  std::bernoulli_distribution blob(density);
  // A few random rectangles plus scattered pixels.
  std::uniform_int_distribution<int> pos(0, n - 1);
  const int rects = 1 + static_cast<int>(rng() % 4);
  for (int k = 0; k < rects; ++k) {
    int r0 = pos(rng), r1 = pos(rng), c0 = pos(rng), c1 = pos(rng);
    if (r0 > r1) std::swap(r0, r1);
    if (c0 > c1) std::swap(c0, c1);
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) g.at(r, c, 0) = 1.0f;
  }
  for (auto& v : g.values) {
    if (blob(rng)) v = 1.0f;
  }
  return g;
}

const GeneratedDataset& desk_fixture() {
  static const GeneratedDataset ds = [] {
    FamilySpec fs;
    fs.family = "single";
    fs.count = 8;
    fs.seed = 3;
    fs.size = 64;
    SolverConfig sc;
    sc.grid = 64;
    return generate(fs, sc);
  }();
  return ds;
}

TrainData desk_train_data() {
  const auto& ds = desk_fixture();
  TrainData d = TrainData::from_dataset(ds.manifest, ds.samples);
  d.train.clear();
  for (int i = 0; i < static_cast<int>(ds.samples.size()); ++i) d.train.push_back(i);
  d.val.clear();
  return d;
}

GeneratorSpec desk_generator() {
  GeneratorSpec g;
  g.depth = 6;
  g.base_filters = 16;
  return g;
}

Scene random_scene(std::mt19937_64& rng, int buildings) {
  Scene s;
  std::uniform_real_distribution<double> pos(15.0, 75.0), side(5.0, 15.0), height(5.0, 40.0);
  for (int k = 0; k < buildings; ++k) {
    const double x = pos(rng), y = pos(rng), a = side(rng), b = side(rng);
    s.buildings.push_back({{{x, y}, {x + a, y}, {x + a, y + b}, {x, y + b}}, height(rng)});
  }
  return s;
}

std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("windcomfort_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace oracle
