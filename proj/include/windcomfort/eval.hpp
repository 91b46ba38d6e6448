#pragma once

// Error metrics, residual maps and dataset evaluation.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "windcomfort/model.hpp"
#include "windcomfort/raster.hpp"

namespace wc {

double mae(std::span<const double> y, std::span<const double> y_hat);
double rmse(std::span<const double> y, std::span<const double> y_hat);

struct MreResult {
  double value = 0;
  std::size_t included = 0;
  std::size_t excluded = 0;
};
// Mean relative error over pixels with y >= eps.
MreResult mre(std::span<const double> y, std::span<const double> y_hat, double eps);

FieldGrid residual_map(const FieldGrid& y, const FieldGrid& y_hat);

// Relative guard of the MRE denominator, as a fraction of the velocity range.
inline constexpr double kMreGuard = 0.05;

struct SampleMetrics {
  int index = 0;
  double mae = 0;
  double rmse = 0;
  double mre = 0;
};

struct MetricReport {
  double mae = 0;
  double rmse = 0;
  double mre = 0;
  std::size_t mre_excluded = 0;
  std::size_t pixels = 0;
  std::vector<SampleMetrics> samples;
  // Multi-checkpoint aggregation.
  std::vector<double> seed_mae, seed_rmse, seed_mre;
  double mae_std = 0, rmse_std = 0, mre_std = 0;
  std::string dataset;
  std::string source_family;
  std::string target_family;
  std::string spec_hash;
  std::string split = "test";

  nlohmann::json to_json() const;
};

// Metrics in normalised units (speeds divided by v_max) over a set of flow pairs.
MetricReport evaluate_predictions(const std::vector<FieldGrid>& targets, const std::vector<FieldGrid>& predictions,
                                  double v_max);

enum class SplitPart { Train, Test, All };
SplitPart parse_split(const std::string& s);

std::vector<int> split_members(const DatasetManifest& m, std::size_t count, SplitPart part);

MetricReport evaluate(const Model& model, const DatasetManifest& manifest, const std::vector<SamplePair>& samples,
                      SplitPart part = SplitPart::Test);
// Several checkpoints (seeds) of one configuration: mean and standard deviation across them.
MetricReport evaluate(const std::vector<const Model*>& models, const DatasetManifest& manifest,
                      const std::vector<SamplePair>& samples, SplitPart part = SplitPart::Test);
// Model trained on one family evaluated on another dataset; the whole target set is used.
MetricReport cross_evaluate(const Model& model, const DatasetManifest& manifest, const std::vector<SamplePair>& samples);

void write_metrics_json(const std::filesystem::path& path, const MetricReport& r);
void write_metrics_csv(const std::filesystem::path& path, const MetricReport& r);

}  // namespace wc
