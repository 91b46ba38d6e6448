#include "windcomfort/comfort.hpp"

#include <algorithm>
#include <cmath>

namespace wc {

using nlohmann::json;

const std::array<std::string, kSectors>& sector_names() {
  static const std::array<std::string, kSectors> names{"N", "NE", "E", "SE", "S", "SW", "W", "NW"};
  return names;
}

int parse_sector(const std::string& name) {
  const auto& n = sector_names();
  const auto it = std::find(n.begin(), n.end(), name);
  require(it != n.end(), ErrorCode::UnsupportedAngle, "unknown sector '" + name + "'");
  return static_cast<int>(it - n.begin());
}

double WindRose::bin_speed(int bin) const {
  const double lo = bin == 0 ? 0.0 : bin_edges_ms.at(bin - 1);
  return 0.5 * (lo + bin_edges_ms.at(bin));
}

double WindRose::sector_mass(int sector) const {
  double s = 0;
  for (double f : freq.at(sector)) s += f;
  return s;
}

void WindRose::validate() const {
  require(!bin_edges_ms.empty(), ErrorCode::InvalidArgument, "wind rose needs at least one speed bin");
  require(bin_edges_ms.front() >= 0, ErrorCode::InvalidArgument, "bin edges must be non-negative");
  for (std::size_t i = 1; i < bin_edges_ms.size(); ++i) {
    require(bin_edges_ms[i] > bin_edges_ms[i - 1], ErrorCode::InvalidArgument, "bin edges must strictly increase");
  }
  require(freq.size() == kSectors, ErrorCode::InvalidArgument, "wind rose needs 8 sectors");
  double total = 0;
  for (const auto& row : freq) {
    require(row.size() == bin_edges_ms.size(), ErrorCode::InvalidArgument, "one frequency per bin expected");
    for (double f : row) {
      require(std::isfinite(f) && f >= 0, ErrorCode::UnnormalizedRose, "frequencies must be finite and >= 0");
      total += f;
    }
  }
  require(std::abs(total - 1.0) <= 1e-6, ErrorCode::UnnormalizedRose,
          "frequencies sum to " + std::to_string(total) + ", expected 1");
}

json WindRose::to_json() const {
  return {{"sectors", sector_names()}, {"bin_edges_ms", bin_edges_ms}, {"freq", freq}};
}

WindRose WindRose::from_json(const json& j) {
  WindRose r;
  try {
    const auto names = j.at("sectors").get<std::vector<std::string>>();
    r.bin_edges_ms = j.at("bin_edges_ms").get<std::vector<double>>();
    const auto rows = j.at("freq").get<std::vector<std::vector<double>>>();
    require(names.size() == kSectors && rows.size() == kSectors, ErrorCode::InvalidArgument,
            "wind rose needs 8 sectors");
    r.freq.assign(kSectors, {});
    for (int i = 0; i < kSectors; ++i) {
      const int s = parse_sector(names[i]);
      require(r.freq[s].empty(), ErrorCode::InvalidArgument, "sector '" + names[i] + "' listed twice");
      r.freq[s] = rows[i];
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("wind rose: ") + e.what());
  }
  r.validate();
  return r;
}

WindRose WindRose::shifted(int k) const {
  WindRose r = *this;
  for (int s = 0; s < kSectors; ++s) r.freq[s] = freq[((s + k) % kSectors + kSectors) % kSectors];
  return r;
}

void ComfortCriteria::validate() const {
  require(thresholds_ms.size() == kComfortClasses - 1, ErrorCode::CriteriaShapeMismatch,
          "criteria need " + std::to_string(kComfortClasses - 1) + " thresholds");
  for (std::size_t i = 0; i < thresholds_ms.size(); ++i) {
    require(std::isfinite(thresholds_ms[i]) && thresholds_ms[i] > 0, ErrorCode::InvalidArgument,
            "thresholds must be positive");
    if (i > 0) require(thresholds_ms[i] > thresholds_ms[i - 1], ErrorCode::InvalidArgument,
                       "thresholds must strictly increase");
  }
  require(p_exc > 0 && p_exc < 1, ErrorCode::InvalidArgument, "p_exc must lie in (0, 1)");
}

json ComfortCriteria::to_json() const {
  return {{"classes", classes}, {"thresholds_ms", thresholds_ms}, {"p_exc", p_exc}};
}

ComfortCriteria ComfortCriteria::from_json(const json& j) {
  ComfortCriteria c;
  try {
    if (j.contains("thresholds_ms")) c.thresholds_ms = j.at("thresholds_ms").get<std::vector<double>>();
    if (j.contains("p_exc")) c.p_exc = j.at("p_exc").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("criteria: ") + e.what());
  }
  c.validate();
  return c;
}

std::array<std::size_t, kComfortClasses> ComfortMap::histogram() const {
  std::array<std::size_t, kComfortClasses> h{};
  for (auto c : classes) {
    if (c < kComfortClasses) ++h[c];
  }
  return h;
}

json ComfortMap::to_json() const {
  const auto h = histogram();
  json hist = json::object();
  json legend = json::array();
  for (int k = 0; k < kComfortClasses; ++k) {
    hist[criteria.classes[k]] = h[k];
    const Rgb c = comfort_palette()[k];
    char hex[8];
    std::snprintf(hex, sizeof hex, "#%02x%02x%02x", c[0], c[1], c[2]);
    legend.push_back({{"class", k}, {"name", criteria.classes[k]}, {"color", hex}});
  }
  const auto no_data = static_cast<std::size_t>(std::count(classes.begin(), classes.end(), kNoData));
  return {{"height", height},    {"width", width},       {"histogram", hist}, {"no_data", no_data},
          {"legend", legend},    {"criteria", criteria.to_json()}, {"provenance", provenance}};
}

int sector_rotation(int sector) {
  require(sector >= 0 && sector < kSectors, ErrorCode::UnsupportedAngle,
          "sector index " + std::to_string(sector) + " outside 0..7");
  return (45 * sector + 90) % 360;
}

FieldGrid predict_direction(const Model& model, const FieldGrid& geometry, int sector) {
  require(geometry.height == geometry.width, ErrorCode::ShapeError, "comfort prediction needs a square raster");
  const int a = sector_rotation(sector);
  const int q = a / 90;
  const bool half = a % 90 != 0;
  // Quarter turns permute pixels exactly; a remaining 45 degree step resamples.
  FieldGrid g = rotate_field(geometry, 90 * q);
  if (half) g = rotate_45(g, +1, Interp::Bilinear);
  FieldGrid pred = predict_flow(model, g);
  if (half) pred = rotate_45(pred, -1, Interp::Bilinear);
  return rotate_field(pred, (360 - 90 * q) % 360);
}

FieldGrid predict_direction_degrees(const Model& model, const FieldGrid& geometry, int bearing_deg) {
  require(bearing_deg % 45 == 0, ErrorCode::UnsupportedAngle,
          "bearing " + std::to_string(bearing_deg) + " is not on the 45 degree lattice");
  return predict_direction(model, geometry, ((bearing_deg / 45) % kSectors + kSectors) % kSectors);
}

std::vector<double> exceedance_values(const std::vector<FieldGrid>& speeds, const WindRose& rose, double threshold_ms,
                                      double v_ref) {
  rose.validate();
  require(speeds.size() == kSectors, ErrorCode::ShapeMismatch, "one prediction per sector expected");
  require(v_ref > 0, ErrorCode::InvalidArgument, "v_ref must be positive");
  std::size_t n = 0;
  for (const auto& s : speeds) {
    if (s.values.empty()) continue;
    require(s.channels() == 1, ErrorCode::ShapeMismatch, "predictions must be single-channel");
    require(n == 0 || s.pixels() == n, ErrorCode::ShapeMismatch, "sector predictions differ in size");
    n = s.pixels();
  }
  require(n > 0, ErrorCode::InvalidArgument, "no sector predictions supplied");
  std::vector<double> out(n);
  std::array<double, kSectors> part{};
  for (std::size_t p = 0; p < n; ++p) {
    for (int s = 0; s < kSectors; ++s) {
      part[s] = 0;
      if (speeds[s].values.empty()) continue;
      const double pred = speeds[s].values[p];
      for (int b = 0; b < rose.bins(); ++b) {
        if (pred * (rose.bin_speed(b) / v_ref) > threshold_ms) part[s] += rose.freq[s][b];
      }
    }
    // Summing in sorted order makes the result independent of sector labelling.
    std::sort(part.begin(), part.end());
    double total = 0;
    for (double v : part) total += v;
    out[p] = total;
  }
  return out;
}

FieldGrid exceedance(const std::vector<FieldGrid>& speeds, const WindRose& rose, double threshold_ms, double v_ref) {
  const auto values = exceedance_values(speeds, rose, threshold_ms, v_ref);
  const FieldGrid* ref = nullptr;
  for (const auto& s : speeds) {
    if (!s.values.empty()) ref = &s;
  }
  FieldGrid out(ref->height, ref->width, {Channel::Velocity}, ref->extent_m);
  for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<float>(values[i]);
  return out;
}

ComfortMap classify(const std::vector<std::vector<double>>& exceedance, const ComfortCriteria& criteria, int height,
                    int width, const std::vector<bool>& no_data) {
  criteria.validate();
  require(exceedance.size() == criteria.thresholds_ms.size(), ErrorCode::CriteriaShapeMismatch,
          "one exceedance map per threshold expected");
  const std::size_t n = static_cast<std::size_t>(height) * width;
  for (const auto& e : exceedance) {
    require(e.size() == n, ErrorCode::CriteriaShapeMismatch, "exceedance map has the wrong size");
  }
  require(no_data.empty() || no_data.size() == n, ErrorCode::ShapeMismatch, "no-data mask has the wrong size");
  ComfortMap m;
  m.height = height;
  m.width = width;
  m.criteria = criteria;
  m.classes.assign(n, kNoData);
  const int k_max = static_cast<int>(exceedance.size());
  for (std::size_t p = 0; p < n; ++p) {
    if (!no_data.empty() && no_data[p]) continue;
    int k = 0;
    while (k < k_max && exceedance[k][p] > criteria.p_exc) ++k;
    m.classes[p] = static_cast<std::uint8_t>(k);
  }
  return m;
}

ComfortMap comfort_map(const Model& model, const FieldGrid& geometry, const WindRose& rose,
                       const ComfortCriteria& criteria) {
  rose.validate();
  criteria.validate();
  const int m = geometry.index_of(Channel::Mask);
  require(m >= 0, ErrorCode::ShapeError, "geometry raster has no mask channel");
  std::vector<FieldGrid> speeds(kSectors);
  bool oblique = false;
  for (int s = 0; s < kSectors; ++s) {
    bool moving = false;
    for (int b = 0; b < rose.bins() && !moving; ++b) moving = rose.freq[s][b] > 0 && rose.bin_speed(b) > 0;
    if (!moving) continue;
    speeds[s] = predict_direction(model, geometry, s);
    if (s % 2 == 1) oblique = true;
  }
  const int n = geometry.height;
  std::vector<bool> no_data(geometry.pixels());
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      no_data[static_cast<std::size_t>(r) * n + c] =
          geometry.at(r, c, m) > 0.5f || (oblique && !inside_inscribed_circle(r, c, n));
    }
  }
  std::vector<std::vector<double>> exc;
  if (std::any_of(speeds.begin(), speeds.end(), [](const FieldGrid& g) { return !g.values.empty(); })) {
    for (double t : criteria.thresholds_ms) exc.push_back(exceedance_values(speeds, rose, t, model.header.v_ref));
  } else {
    exc.assign(criteria.thresholds_ms.size(), std::vector<double>(geometry.pixels(), 0.0));
  }
  ComfortMap out = classify(exc, criteria, n, n, no_data);
  json sectors = json::array();
  for (int s = 0; s < kSectors; ++s) {
    if (!speeds[s].values.empty()) sectors.push_back(sector_names()[s]);
  }
  out.provenance = {{"arch", model.header.arch},
                    {"spec_hash", model.header.spec_hash()},
                    {"family", model.header.family},
                    {"v_ref", model.header.v_ref},
                    {"wind_rose", rose.to_json()},
                    {"predicted_sectors", sectors},
                    {"amplification", "linear: pred * bin_speed / v_ref"},
                    {"bin_speed", "midpoint"}};
  return out;
}

const std::array<Rgb, kComfortClasses>& comfort_palette() {
  static const std::array<Rgb, kComfortClasses> p{Rgb{44, 123, 182}, Rgb{171, 217, 233}, Rgb{255, 255, 191},
                                                  Rgb{253, 174, 97}, Rgb{215, 25, 28}};
  return p;
}

RgbImage render_comfort(const ComfortMap& map) {
  const int band = std::max(8, map.height / 8);
  RgbImage img;
  img.width = map.width;
  img.height = map.height + band;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * 3, 0);
  const Rgb no_data{96, 96, 96};
  for (int r = 0; r < map.height; ++r) {
    for (int c = 0; c < map.width; ++c) {
      const auto k = map.classes[static_cast<std::size_t>(r) * map.width + c];
      const Rgb col = k < kComfortClasses ? comfort_palette()[k] : no_data;
      std::copy(col.begin(), col.end(), img.pixels.begin() + (static_cast<std::size_t>(r) * img.width + c) * 3);
    }
  }
  for (int r = map.height; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const int k = std::min(kComfortClasses - 1, c * kComfortClasses / img.width);
      const Rgb col = comfort_palette()[k];
      std::copy(col.begin(), col.end(), img.pixels.begin() + (static_cast<std::size_t>(r) * img.width + c) * 3);
    }
  }
  return img;
}

}  // namespace wc
