#pragma once

// Wind roses, eight-direction prediction, exceedance statistics and comfort classes.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "windcomfort/image.hpp"
#include "windcomfort/model.hpp"
#include "windcomfort/raster.hpp"

namespace wc {

inline constexpr int kSectors = 8;
// Sector i is the bearing 45 * i degrees the wind blows from, clockwise from north.
const std::array<std::string, kSectors>& sector_names();
int parse_sector(const std::string& name);

struct WindRose {
  std::vector<double> bin_edges_ms;  // upper edges; the first bin starts at 0
  std::vector<std::vector<double>> freq;  // [sector][bin]

  int bins() const { return static_cast<int>(bin_edges_ms.size()); }
  double bin_speed(int bin) const;  // bin midpoint
  double sector_mass(int sector) const;
  void validate() const;

  nlohmann::json to_json() const;
  static WindRose from_json(const nlohmann::json& j);
  // Sector s of the result is sector s + k of this rose.
  WindRose shifted(int k) const;
};

inline constexpr int kComfortClasses = 5;
inline constexpr std::uint8_t kNoData = 255;

struct ComfortCriteria {
  std::array<std::string, kComfortClasses> classes{"sitting", "standing", "strolling", "business_walking",
                                                   "uncomfortable"};
  std::vector<double> thresholds_ms{2.5, 4.0, 6.0, 8.0};  // upper speed of each class but the last
  double p_exc = 0.05;

  void validate() const;
  nlohmann::json to_json() const;
  static ComfortCriteria from_json(const nlohmann::json& j);
};

struct ComfortMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> classes;  // 0..4, kNoData on buildings and outside valid sectors
  ComfortCriteria criteria;
  nlohmann::json provenance = nlohmann::json::object();

  std::array<std::size_t, kComfortClasses> histogram() const;
  nlohmann::json to_json() const;  // histogram, legend, provenance
};

// Rotation that brings wind from `sector` to the training direction (from the west).
int sector_rotation(int sector);

// Generator prediction in m/s for wind from `sector`.
FieldGrid predict_direction(const Model& model, const FieldGrid& geometry, int sector);
FieldGrid predict_direction_degrees(const Model& model, const FieldGrid& geometry, int bearing_deg);

// Per-pixel probability that the speed exceeds `threshold_ms`. Sectors with an empty
// prediction grid contribute nothing. Predictions are at inlet speed v_ref.
std::vector<double> exceedance_values(const std::vector<FieldGrid>& speeds, const WindRose& rose, double threshold_ms,
                                      double v_ref);
FieldGrid exceedance(const std::vector<FieldGrid>& speeds, const WindRose& rose, double threshold_ms, double v_ref);

// exceedance[k] belongs to criteria.thresholds_ms[k]. `no_data[p]` forces kNoData.
ComfortMap classify(const std::vector<std::vector<double>>& exceedance, const ComfortCriteria& criteria, int height,
                    int width, const std::vector<bool>& no_data = {});

ComfortMap comfort_map(const Model& model, const FieldGrid& geometry, const WindRose& rose,
                       const ComfortCriteria& criteria);

const std::array<Rgb, kComfortClasses>& comfort_palette();
// Map with a five-swatch legend band underneath.
RgbImage render_comfort(const ComfortMap& map);

}  // namespace wc
