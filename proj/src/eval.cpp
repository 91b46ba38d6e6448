#include "windcomfort/eval.hpp"

#include <cmath>
#include <fstream>

namespace wc {

using nlohmann::json;

namespace {

void check_pair(std::span<const double> y, std::span<const double> y_hat) {
  require(y.size() == y_hat.size(), ErrorCode::ShapeMismatch, "metric inputs differ in length");
  require(!y.empty(), ErrorCode::InvalidArgument, "metric inputs are empty");
}

std::vector<double> scaled(const FieldGrid& g, double v_max) {
  std::vector<double> out(g.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = g.values[i] / v_max;
  return out;
}

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  sd = 0;
  if (v.size() > 1) {
    for (double x : v) sd += (x - mean) * (x - mean);
    sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
  }
}

}  // namespace

double mae(std::span<const double> y, std::span<const double> y_hat) {
  check_pair(y, y_hat);
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - y_hat[i]);
  return s / static_cast<double>(y.size());
}

double rmse(std::span<const double> y, std::span<const double> y_hat) {
  check_pair(y, y_hat);
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

MreResult mre(std::span<const double> y, std::span<const double> y_hat, double eps) {
  check_pair(y, y_hat);
  require(eps > 0, ErrorCode::InvalidArgument, "MRE guard must be positive");
  MreResult r;
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < eps) {
      ++r.excluded;
      continue;
    }
    s += std::abs(y[i] - y_hat[i]) / y[i];
    ++r.included;
  }
  require(r.included > 0, ErrorCode::AllPixelsExcluded, "every pixel is below the MRE guard");
  r.value = s / static_cast<double>(r.included);
  return r;
}

FieldGrid residual_map(const FieldGrid& y, const FieldGrid& y_hat) {
  require(y.height == y_hat.height && y.width == y_hat.width && y.channels() == y_hat.channels(),
          ErrorCode::ShapeMismatch, "residual_map inputs differ in shape");
  FieldGrid out = y;
  out.schema.assign(y.channels(), Channel::Velocity);
  double s = 0;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const double d = std::abs(static_cast<double>(y.values[i]) - static_cast<double>(y_hat.values[i]));
    out.values[i] = static_cast<float>(d);
    s += d;
  }
  out.meta["mean"] = out.values.empty() ? 0.0 : s / static_cast<double>(out.values.size());
  return out;
}

json MetricReport::to_json() const {
  json per = json::array();
  for (const auto& s : samples) per.push_back({{"sample", s.index}, {"mae", s.mae}, {"rmse", s.rmse}, {"mre", s.mre}});
  json j{{"mae", mae},
         {"rmse", rmse},
         {"mre", mre},
         {"mre_guard", kMreGuard},
         {"mre_excluded_pixels", mre_excluded},
         {"pixels", pixels},
         {"units", "normalized (speed / v_max)"},
         {"dataset", dataset},
         {"split", split},
         {"source_family", source_family},
         {"target_family", target_family},
         {"spec_hash", spec_hash},
         {"samples", per}};
  if (!seed_mae.empty()) {
    j["seeds"] = {{"count", seed_mae.size()},
                  {"mae", seed_mae},
                  {"rmse", seed_rmse},
                  {"mre", seed_mre},
                  {"mae_std", mae_std},
                  {"rmse_std", rmse_std},
                  {"mre_std", mre_std}};
  }
  return j;
}

MetricReport evaluate_predictions(const std::vector<FieldGrid>& targets, const std::vector<FieldGrid>& predictions,
                                  double v_max) {
  require(targets.size() == predictions.size() && !targets.empty(), ErrorCode::ShapeMismatch,
          "evaluation needs matching, non-empty target and prediction lists");
  std::vector<double> all_y, all_p;
  MetricReport r;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    require(targets[i].values.size() == predictions[i].values.size(), ErrorCode::ShapeMismatch,
            "prediction and target differ in size");
    const auto y = scaled(targets[i], v_max);
    const auto p = scaled(predictions[i], v_max);
    SampleMetrics s;
    s.index = static_cast<int>(i);
    s.mae = mae(y, p);
    s.rmse = rmse(y, p);
    try {
      s.mre = mre(y, p, kMreGuard).value;
    } catch (const Error&) {
      s.mre = 0;
    }
    r.samples.push_back(s);
    all_y.insert(all_y.end(), y.begin(), y.end());
    all_p.insert(all_p.end(), p.begin(), p.end());
  }
  r.mae = mae(all_y, all_p);
  r.rmse = rmse(all_y, all_p);
  const MreResult m = mre(all_y, all_p, kMreGuard);
  r.mre = m.value;
  r.mre_excluded = m.excluded;
  r.pixels = all_y.size();
  return r;
}

SplitPart parse_split(const std::string& s) {
  if (s == "train") return SplitPart::Train;
  if (s == "test") return SplitPart::Test;
  if (s == "all") return SplitPart::All;
  fail(ErrorCode::InvalidArgument, "split must be train, test or all");
}

std::vector<int> split_members(const DatasetManifest& m, std::size_t count, SplitPart part) {
  if (part == SplitPart::All) {
    std::vector<int> all(count);
    for (std::size_t i = 0; i < count; ++i) all[i] = static_cast<int>(i);
    return all;
  }
  const Split s = split_indices(count, m.train_fraction, m.split_seed);
  return part == SplitPart::Train ? s.train : s.test;
}

namespace {

MetricReport evaluate_indices(const Model& model, const DatasetManifest& manifest,
                              const std::vector<SamplePair>& samples, const std::vector<int>& idx) {
  require(!idx.empty(), ErrorCode::InvalidArgument, "evaluation split is empty");
  std::vector<FieldGrid> targets, preds;
  for (int i : idx) {
    targets.push_back(samples.at(i).flow);
    preds.push_back(predict_flow(model, samples.at(i).geometry));
  }
  MetricReport r = evaluate_predictions(targets, preds, manifest.v_max);
  for (std::size_t k = 0; k < idx.size(); ++k) r.samples[k].index = idx[k];
  r.dataset = manifest.name;
  r.source_family = model.header.family;
  r.target_family = manifest.family;
  r.spec_hash = model.header.spec_hash();
  return r;
}

}  // namespace

MetricReport evaluate(const Model& model, const DatasetManifest& manifest, const std::vector<SamplePair>& samples,
                      SplitPart part) {
  MetricReport r = evaluate_indices(model, manifest, samples, split_members(manifest, samples.size(), part));
  r.split = part == SplitPart::Train ? "train" : part == SplitPart::Test ? "test" : "all";
  return r;
}

MetricReport evaluate(const std::vector<const Model*>& models, const DatasetManifest& manifest,
                      const std::vector<SamplePair>& samples, SplitPart part) {
  require(!models.empty(), ErrorCode::InvalidArgument, "no checkpoints to evaluate");
  MetricReport agg;
  for (const Model* m : models) {
    MetricReport r = evaluate(*m, manifest, samples, part);
    agg.seed_mae.push_back(r.mae);
    agg.seed_rmse.push_back(r.rmse);
    agg.seed_mre.push_back(r.mre);
    if (agg.samples.empty()) {
      agg.dataset = r.dataset;
      agg.source_family = r.source_family;
      agg.target_family = r.target_family;
      agg.spec_hash = r.spec_hash;
      agg.split = r.split;
      agg.pixels = r.pixels;
      agg.mre_excluded = r.mre_excluded;
      agg.samples = r.samples;
    }
  }
  mean_std(agg.seed_mae, agg.mae, agg.mae_std);
  mean_std(agg.seed_rmse, agg.rmse, agg.rmse_std);
  mean_std(agg.seed_mre, agg.mre, agg.mre_std);
  return agg;
}

MetricReport cross_evaluate(const Model& model, const DatasetManifest& manifest,
                            const std::vector<SamplePair>& samples) {
  if (manifest.family == model.header.family) return evaluate(model, manifest, samples, SplitPart::Test);
  MetricReport r = evaluate(model, manifest, samples, SplitPart::All);
  return r;
}

void write_metrics_json(const std::filesystem::path& path, const MetricReport& r) {
  std::ofstream f(path);
  require(f.good(), ErrorCode::Io, "cannot write " + path.string());
  f << r.to_json().dump(2) << '\n';
}

void write_metrics_csv(const std::filesystem::path& path, const MetricReport& r) {
  std::ofstream f(path);
  require(f.good(), ErrorCode::Io, "cannot write " + path.string());
  f << "sample,mae,rmse,mre\n";
  char buf[128];
  for (const auto& s : r.samples) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", s.index, s.mae, s.rmse, s.mre);
    f << buf;
  }
}

}  // namespace wc
