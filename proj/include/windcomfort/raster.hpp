#pragma once

// Scenes, rasters, positional channels, velocity quantisation, rotation, dataset container.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "windcomfort/tensor.hpp"

namespace wc {

struct Point {
  double x = 0;
  double y = 0;
};

struct Building {
  std::vector<Point> polygon;  // metres, y pointing north
  double height = 10.0;
};

struct Scene {
  std::vector<Building> buildings;
  double extent = 100.0;  // square side in metres; wind enters at x = 0

  void validate() const;
};

nlohmann::json scene_to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);

enum class Channel { Mask, Height, Sdf, CoordI, CoordJ, Velocity, Class };

std::string to_string(Channel c);
Channel parse_channel(const std::string& s);

// H x W x C raster, channels interleaved per pixel (row-major HWC), row 0 = north edge.
struct FieldGrid {
  int height = 0;
  int width = 0;
  std::vector<Channel> schema;
  double extent_m = 100.0;
  std::vector<float> values;
  std::map<std::string, double> meta;

  FieldGrid() = default;
  FieldGrid(int h, int w, std::vector<Channel> channels, double extent = 100.0);

  int channels() const { return static_cast<int>(schema.size()); }
  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  float& at(int r, int c, int ch) {
    return values[(static_cast<std::size_t>(r) * width + c) * schema.size() + ch];
  }
  float at(int r, int c, int ch) const {
    return values[(static_cast<std::size_t>(r) * width + c) * schema.size() + ch];
  }
  int index_of(Channel c) const;  // -1 if absent
  bool has(Channel c) const { return index_of(c) >= 0; }
  std::vector<float> plane(int ch) const;
  FieldGrid select(int ch) const;  // single-channel copy
  void validate() const;
};

bool same_values(const FieldGrid& a, const FieldGrid& b);

// Pixel (r, c) covers the square whose centre is ((c + 0.5) s, extent - (r + 0.5) s).
bool point_in_polygon(const std::vector<Point>& poly, Point p);
FieldGrid rasterize(const Scene& scene, int size, bool with_height);

// Distances in pixels; meta["sdf_scale"] holds the grid diagonal used to normalise.
std::vector<double> signed_distance_values(const FieldGrid& mask);
FieldGrid signed_distance(const FieldGrid& mask);

FieldGrid coord_channels(int h, int w);

float bucket_center(double value, double v_max, int n_bins);
FieldGrid bucketize(const FieldGrid& flow, double v_max, int n_bins);

// Velocity in [0, v_max] <-> [-1, 1].
FieldGrid normalize(const FieldGrid& grid, double v_max);
FieldGrid denormalize(const FieldGrid& grid, double v_max);

enum class Interp { Nearest, Bilinear };

// Counter-clockwise rotation as displayed (north up). Multiples of 90 degrees permute
// pixels; odd multiples of 45 resample and zero everything outside the inscribed circle.
FieldGrid rotate_field(const FieldGrid& grid, int angle_deg, Interp interp = Interp::Bilinear);
// One 45 degree step: sign +1 counter-clockwise, -1 clockwise.
FieldGrid rotate_45(const FieldGrid& grid, int sign, Interp interp = Interp::Bilinear);
bool inside_inscribed_circle(int r, int c, int n);

// Model tensors.
struct Normalization {
  double v_max = 1.0;
  double h_max = 1.0;
};

Tensor<float> pack_geometry(const FieldGrid& geometry, const Normalization& norm, bool with_sdf);
Tensor<float> pack_flow(const FieldGrid& flow, const Normalization& norm);
FieldGrid unpack_flow(const Tensor<float>& t, const Normalization& norm, double extent_m);

struct SamplePair {
  FieldGrid geometry;
  FieldGrid flow;
};

struct DatasetManifest {
  std::string name;
  std::string family;
  int size = 0;
  double extent_m = 100.0;
  std::vector<Channel> channel_schema;
  double v_max = 1.0;
  double h_max = 1.0;
  double v_ref = 5.0;
  int n_bins = 20;
  std::uint64_t split_seed = 0;
  double train_fraction = 0.8;
  std::vector<std::string> samples;
  nlohmann::json extra = nlohmann::json::object();

  void validate() const;
  Normalization normalization() const { return {v_max, h_max}; }
};

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

void write_sample(const std::filesystem::path& path, const SamplePair& s);
SamplePair read_sample(const std::filesystem::path& path);
// WGF1 blob; flow may be empty (C_flow = 0). Decoded geometry channels are mask[, height].
std::vector<std::uint8_t> encode_wgf(const SamplePair& s);
SamplePair decode_wgf(const std::vector<std::uint8_t>& bytes, double extent_m = 100.0);

void write_dataset(const DatasetManifest& manifest, const std::vector<SamplePair>& samples,
                   const std::filesystem::path& dir, bool previews = true);
std::pair<DatasetManifest, std::vector<SamplePair>> read_dataset(const std::filesystem::path& dir);

struct Split {
  std::vector<int> train;
  std::vector<int> test;
};
Split split_indices(std::size_t count, double train_fraction, std::uint64_t seed);

}  // namespace wc
