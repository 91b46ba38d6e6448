#include "windcomfort/raster.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "windcomfort/coords.hpp"
#include "windcomfort/image.hpp"
#include "windcomfort/rng.hpp"

namespace wc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double cross(Point o, Point a, Point b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

bool on_segment(Point p, Point a, Point b) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

bool segments_intersect(Point a, Point b, Point c, Point d) {
  const double d1 = cross(c, d, a);
  const double d2 = cross(c, d, b);
  const double d3 = cross(a, b, c);
  const double d4 = cross(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  if (d1 == 0 && on_segment(a, c, d)) return true;
  if (d2 == 0 && on_segment(b, c, d)) return true;
  if (d3 == 0 && on_segment(c, a, b)) return true;
  if (d4 == 0 && on_segment(d, a, b)) return true;
  return false;
}

bool is_simple(const std::vector<Point>& poly) {
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point a = poly[i];
    const Point b = poly[(i + 1) % n];
    if (a.x == b.x && a.y == b.y) return false;
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_intersect(a, b, poly[j], poly[(j + 1) % n])) return false;
    }
  }
  // Adjacent edges folding back onto each other.
  for (std::size_t i = 0; i < n; ++i) {
    const Point a = poly[(i + n - 1) % n];
    const Point b = poly[i];
    const Point c = poly[(i + 1) % n];
    if (cross(a, b, c) == 0 && ((b.x - a.x) * (c.x - b.x) + (b.y - a.y) * (c.y - b.y)) < 0) return false;
  }
  return true;
}

// 1-D squared distance transform (lower envelope of parabolas).
void edt_1d(const double* f, int n, double* d, int* v, double* z) {
  const double inf = std::numeric_limits<double>::infinity();
  int k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (int q = 1; q < n; ++q) {
    if (f[q] == inf) continue;
    if (f[v[k]] == inf) {
      v[k] = q;
      continue;
    }
    double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = f[v[k]] == inf ? inf : dq * dq + f[v[k]];
  }
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[off + i]) << (8 * i);
  return v;
}

void put_floats(std::vector<std::uint8_t>& out, const std::vector<float>& vals) {
  for (float f : vals) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

std::vector<Channel> geometry_schema(std::uint32_t c) {
  if (c == 1) return {Channel::Mask};
  if (c == 2) return {Channel::Mask, Channel::Height};
  fail(ErrorCode::CorruptContainer, "unsupported geometry channel count " + std::to_string(c));
}

std::string sample_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

}  // namespace

void Scene::validate() const {
  require(extent > 0 && std::isfinite(extent), ErrorCode::InvalidScene, "scene extent must be positive");
  for (std::size_t i = 0; i < buildings.size(); ++i) {
    const auto& b = buildings[i];
    const std::string tag = "building " + std::to_string(i);
    require(b.polygon.size() >= 3, ErrorCode::InvalidScene, tag + " has fewer than 3 vertices");
    require(b.height > 0 && std::isfinite(b.height), ErrorCode::InvalidScene, tag + " height must be positive");
    for (const Point& p : b.polygon) {
      require(std::isfinite(p.x) && std::isfinite(p.y) && p.x >= 0 && p.x <= extent && p.y >= 0 &&
                  p.y <= extent,
              ErrorCode::InvalidScene, tag + " has a vertex outside the extent");
    }
    require(is_simple(b.polygon), ErrorCode::InvalidScene, tag + " polygon is not simple");
  }
}

json scene_to_json(const Scene& scene) {
  json bs = json::array();
  for (const auto& b : scene.buildings) {
    json poly = json::array();
    for (const Point& p : b.polygon) poly.push_back({p.x, p.y});
    bs.push_back({{"polygon", poly}, {"height", b.height}});
  }
  return {{"extent", scene.extent}, {"buildings", bs}};
}

Scene scene_from_json(const json& j) {
  Scene s;
  try {
    s.extent = j.value("extent", 100.0);
    for (const auto& b : j.at("buildings")) {
      Building bd;
      bd.height = b.value("height", 10.0);
      for (const auto& p : b.at("polygon")) bd.polygon.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      s.buildings.push_back(std::move(bd));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidScene, std::string("malformed scene JSON: ") + e.what());
  }
  s.validate();
  return s;
}

std::string to_string(Channel c) {
  switch (c) {
    case Channel::Mask: return "mask";
    case Channel::Height: return "height";
    case Channel::Sdf: return "sdf";
    case Channel::CoordI: return "coord_i";
    case Channel::CoordJ: return "coord_j";
    case Channel::Velocity: return "velocity";
    case Channel::Class: return "class";
  }
  return "?";
}

Channel parse_channel(const std::string& s) {
  for (Channel c : {Channel::Mask, Channel::Height, Channel::Sdf, Channel::CoordI, Channel::CoordJ,
                    Channel::Velocity, Channel::Class}) {
    if (to_string(c) == s) return c;
  }
  fail(ErrorCode::InvalidArgument, "unknown channel tag '" + s + "'");
}

FieldGrid::FieldGrid(int h, int w, std::vector<Channel> channels, double extent)
    : height(h), width(w), schema(std::move(channels)), extent_m(extent),
      values(static_cast<std::size_t>(h) * w * schema.size(), 0.0f) {
  require(h >= 0 && w >= 0, ErrorCode::ShapeError, "negative raster dimensions");
}

int FieldGrid::index_of(Channel c) const {
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (schema[i] == c) return static_cast<int>(i);
  }
  return -1;
}

std::vector<float> FieldGrid::plane(int ch) const {
  require(ch >= 0 && ch < channels(), ErrorCode::ShapeError, "channel index out of range");
  std::vector<float> out(pixels());
  const std::size_t c = schema.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = values[i * c + ch];
  return out;
}

FieldGrid FieldGrid::select(int ch) const {
  FieldGrid out(height, width, {schema.at(ch)}, extent_m);
  out.values = plane(ch);
  out.meta = meta;
  return out;
}

void FieldGrid::validate() const {
  require(values.size() == pixels() * schema.size(), ErrorCode::ShapeError, "raster value count mismatch");
  for (float v : values) require(std::isfinite(v), ErrorCode::OutOfRange, "raster holds a non-finite value");
  const int m = index_of(Channel::Mask);
  const int h = index_of(Channel::Height);
  for (std::size_t i = 0; i < pixels(); ++i) {
    const std::size_t base = i * schema.size();
    if (m >= 0) {
      const float mv = values[base + m];
      require(mv == 0.0f || mv == 1.0f, ErrorCode::OutOfRange, "mask channel must be binary");
      if (h >= 0 && mv == 0.0f) require(values[base + h] == 0.0f, ErrorCode::OutOfRange, "height set off-mask");
    }
    if (h >= 0) require(values[base + h] >= 0.0f, ErrorCode::OutOfRange, "negative height");
  }
}

bool same_values(const FieldGrid& a, const FieldGrid& b) {
  return a.height == b.height && a.width == b.width && a.schema == b.schema &&
         std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0;
}

bool point_in_polygon(const std::vector<Point>& poly, Point p) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point a = poly[i];
    const Point b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

FieldGrid rasterize(const Scene& scene, int size, bool with_height) {
  require(size >= 8, ErrorCode::InvalidArgument, "raster size must be at least 8");
  scene.validate();
  std::vector<Channel> schema{Channel::Mask};
  if (with_height) schema.push_back(Channel::Height);
  FieldGrid g(size, size, schema, scene.extent);
  const double s = scene.extent / size;
  for (const auto& b : scene.buildings) {
    double xmin = scene.extent, xmax = 0, ymin = scene.extent, ymax = 0;
    for (const Point& p : b.polygon) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
    const int c0 = std::max(0, static_cast<int>(std::floor(xmin / s - 0.5)));
    const int c1 = std::min(size - 1, static_cast<int>(std::ceil(xmax / s - 0.5)));
    const int r0 = std::max(0, static_cast<int>(std::floor((scene.extent - ymax) / s - 0.5)));
    const int r1 = std::min(size - 1, static_cast<int>(std::ceil((scene.extent - ymin) / s - 0.5)));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const Point p{(c + 0.5) * s, scene.extent - (r + 0.5) * s};
        if (!point_in_polygon(b.polygon, p)) continue;
        g.at(r, c, 0) = 1.0f;
        if (with_height) g.at(r, c, 1) = std::max(g.at(r, c, 1), static_cast<float>(b.height));
      }
    }
  }
  return g;
}

std::vector<double> signed_distance_values(const FieldGrid& mask) {
  require(mask.channels() >= 1 && mask.schema[0] == Channel::Mask, ErrorCode::ShapeError,
          "signed_distance expects a mask raster");
  const int h = mask.height;
  const int w = mask.width;
  auto covered = [&](int r, int c) {
    return r >= 0 && r < h && c >= 0 && c < w && mask.at(r, c, 0) > 0.5f;
  };
  // Boundary: covered pixels with an uncovered 4-neighbour; the frame counts as uncovered.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> f(static_cast<std::size_t>(h) * w, inf);
  bool any = false;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!covered(r, c)) continue;
      if (!covered(r - 1, c) || !covered(r + 1, c) || !covered(r, c - 1) || !covered(r, c + 1)) {
        f[static_cast<std::size_t>(r) * w + c] = 0.0;
        any = true;
      }
    }
  }
  const double diag = std::sqrt(static_cast<double>(h) * h + static_cast<double>(w) * w);
  std::vector<double> out(f.size(), diag);
  if (!any) return out;

  const int n = std::max(h, w);
  std::vector<double> line(n), dist(n), z(n + 1);
  std::vector<int> v(n);
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) line[r] = f[static_cast<std::size_t>(r) * w + c];
    edt_1d(line.data(), h, dist.data(), v.data(), z.data());
    for (int r = 0; r < h; ++r) f[static_cast<std::size_t>(r) * w + c] = dist[r];
  }
  for (int r = 0; r < h; ++r) {
    edt_1d(&f[static_cast<std::size_t>(r) * w], w, dist.data(), v.data(), z.data());
    for (int c = 0; c < w; ++c) {
      const double d = std::sqrt(dist[c]);
      out[static_cast<std::size_t>(r) * w + c] = covered(r, c) ? -d : d;
    }
  }
  return out;
}

FieldGrid signed_distance(const FieldGrid& mask) {
  const auto d = signed_distance_values(mask);
  FieldGrid out(mask.height, mask.width, {Channel::Sdf}, mask.extent_m);
  for (std::size_t i = 0; i < d.size(); ++i) out.values[i] = static_cast<float>(d[i]);
  const double diag = std::sqrt(static_cast<double>(mask.height) * mask.height +
                                static_cast<double>(mask.width) * mask.width);
  out.meta["sdf_scale"] = diag;
  bool empty = true;
  for (std::size_t i = 0; i < mask.pixels() && empty; ++i) empty = mask.values[i * mask.channels()] <= 0.5f;
  out.meta["sdf_empty"] = empty ? 1.0 : 0.0;
  return out;
}

FieldGrid coord_channels(int h, int w) {
  require(h >= 1 && w >= 1, ErrorCode::InvalidArgument, "coord_channels needs H, W >= 1");
  FieldGrid g(h, w, {Channel::CoordI, Channel::CoordJ});
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      g.at(r, c, 0) = static_cast<float>(normalized_coord(r, h));
      g.at(r, c, 1) = static_cast<float>(normalized_coord(c, w));
    }
  }
  return g;
}

float bucket_center(double value, double v_max, int n_bins) {
  require(n_bins >= 2, ErrorCode::InvalidArgument, "n_bins must be at least 2");
  require(v_max > 0, ErrorCode::InvalidArgument, "v_max must be positive");
  require(value >= -1e-6 && value <= v_max + 1e-6, ErrorCode::OutOfRange,
          "velocity " + std::to_string(value) + " outside [0, " + std::to_string(v_max) + "]");
  const double width = v_max / n_bins;
  const int bin = std::clamp(static_cast<int>(std::floor(value / width)), 0, n_bins - 1);
  return static_cast<float>((bin + 0.5) * width);
}

FieldGrid bucketize(const FieldGrid& flow, double v_max, int n_bins) {
  FieldGrid out = flow;
  for (float& v : out.values) v = bucket_center(v, v_max, n_bins);
  out.meta["n_bins"] = n_bins;
  out.meta["v_max"] = v_max;
  return out;
}

FieldGrid normalize(const FieldGrid& grid, double v_max) {
  FieldGrid out = grid;
  for (float& v : out.values) v = static_cast<float>(2.0 * v / v_max - 1.0);
  return out;
}

FieldGrid denormalize(const FieldGrid& grid, double v_max) {
  FieldGrid out = grid;
  for (float& v : out.values) v = static_cast<float>((static_cast<double>(v) + 1.0) * 0.5 * v_max);
  return out;
}

bool inside_inscribed_circle(int r, int c, int n) {
  const long dr = 2L * r - (n - 1);
  const long dc = 2L * c - (n - 1);
  return dr * dr + dc * dc <= static_cast<long>(n) * n;
}

namespace {

FieldGrid rotate90_ccw(const FieldGrid& g) {
  FieldGrid out = g;
  const int n = g.height;
  const int ch = g.channels();
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      for (int k = 0; k < ch; ++k) out.at(r, c, k) = g.at(c, n - 1 - r, k);
    }
  }
  return out;
}

}  // namespace

FieldGrid rotate_45(const FieldGrid& g, int sign, Interp interp) {
  const int n = g.height;
  const int ch = g.channels();
  FieldGrid out = g;
  std::fill(out.values.begin(), out.values.end(), 0.0f);
  const double cc = 0.5 * (n - 1);
  const double s = std::sqrt(0.5);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if (!inside_inscribed_circle(r, c, n)) continue;
      const double x = c - cc;
      const double y = cc - r;
      // Sample the source at the output position rotated back by the same angle.
      const double xs = sign > 0 ? (x + y) * s : (x - y) * s;
      const double ys = sign > 0 ? (y - x) * s : (y + x) * s;
      const double sc = cc + xs;
      const double sr = cc - ys;
      for (int k = 0; k < ch; ++k) {
        double v = 0;
        if (interp == Interp::Nearest) {
          const int rr = static_cast<int>(std::lround(sr));
          const int cc2 = static_cast<int>(std::lround(sc));
          if (rr >= 0 && rr < n && cc2 >= 0 && cc2 < n) v = g.at(rr, cc2, k);
        } else {
          const int r0 = static_cast<int>(std::floor(sr));
          const int c0 = static_cast<int>(std::floor(sc));
          const double fr = sr - r0;
          const double fc = sc - c0;
          auto px = [&](int rr, int cx) -> double {
            return (rr >= 0 && rr < n && cx >= 0 && cx < n) ? g.at(rr, cx, k) : 0.0;
          };
          v = (1 - fr) * ((1 - fc) * px(r0, c0) + fc * px(r0, c0 + 1)) +
              fr * ((1 - fc) * px(r0 + 1, c0) + fc * px(r0 + 1, c0 + 1));
        }
        out.at(r, c, k) = static_cast<float>(v);
      }
    }
  }
  return out;
}

FieldGrid rotate_field(const FieldGrid& grid, int angle_deg, Interp interp) {
  require(angle_deg % 45 == 0, ErrorCode::UnsupportedAngle,
          "rotation angle " + std::to_string(angle_deg) + " is not a multiple of 45 degrees");
  require(grid.height == grid.width, ErrorCode::ShapeError, "rotation needs a square raster");
  const int steps = ((angle_deg / 45) % 8 + 8) % 8;
  FieldGrid out = grid;
  for (int i = 0; i < steps / 2; ++i) out = rotate90_ccw(out);
  if (steps % 2 == 1) out = rotate_45(out, +1, interp);
  return out;
}

Tensor<float> pack_geometry(const FieldGrid& geometry, const Normalization& norm, bool with_sdf) {
  const int m = geometry.index_of(Channel::Mask);
  require(m >= 0, ErrorCode::ShapeError, "geometry raster has no mask channel");
  const int hc = geometry.index_of(Channel::Height);
  const int c = 1 + (hc >= 0 ? 1 : 0) + (with_sdf ? 1 : 0);
  const int h = geometry.height;
  const int w = geometry.width;
  Tensor<float> t({1, c, h, w});
  std::vector<double> sdf;
  double scale = 1;
  if (with_sdf) {
    sdf = signed_distance_values(geometry);
    scale = std::sqrt(static_cast<double>(h) * h + static_cast<double>(w) * w);
  }
  for (int r = 0; r < h; ++r) {
    for (int x = 0; x < w; ++x) {
      int k = 0;
      t.at(0, k++, r, x) = 2.0f * geometry.at(r, x, m) - 1.0f;
      if (hc >= 0) t.at(0, k++, r, x) = static_cast<float>(geometry.at(r, x, hc) / norm.h_max);
      if (with_sdf) t.at(0, k++, r, x) = static_cast<float>(sdf[static_cast<std::size_t>(r) * w + x] / scale);
    }
  }
  return t;
}

Tensor<float> pack_flow(const FieldGrid& flow, const Normalization& norm) {
  const int v = flow.index_of(Channel::Velocity);
  require(v >= 0, ErrorCode::ShapeError, "flow raster has no velocity channel");
  Tensor<float> t({1, 1, flow.height, flow.width});
  for (int r = 0; r < flow.height; ++r) {
    for (int c = 0; c < flow.width; ++c) {
      t.at(0, 0, r, c) = static_cast<float>(2.0 * flow.at(r, c, v) / norm.v_max - 1.0);
    }
  }
  return t;
}

FieldGrid unpack_flow(const Tensor<float>& t, const Normalization& norm, double extent_m) {
  require(t.rank() == 4 && t.dim(0) == 1 && t.dim(1) == 1, ErrorCode::ShapeError,
          "unpack_flow expects a [1, 1, H, W] tensor");
  FieldGrid out(t.dim(2), t.dim(3), {Channel::Velocity}, extent_m);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = static_cast<float>((static_cast<double>(t.data[i]) + 1.0) * 0.5 * norm.v_max);
  }
  return out;
}

void DatasetManifest::validate() const {
  require(n_bins >= 2, ErrorCode::CorruptContainer, "manifest n_bins must be >= 2");
  require(train_fraction > 0 && train_fraction < 1, ErrorCode::CorruptContainer,
          "manifest train_fraction must be in (0, 1)");
  require(v_max > 0 && h_max > 0, ErrorCode::CorruptContainer, "manifest normalisation constants must be positive");
}

json manifest_to_json(const DatasetManifest& m) {
  json schema = json::array();
  for (Channel c : m.channel_schema) schema.push_back(to_string(c));
  return {{"name", m.name},
          {"family", m.family},
          {"size", m.size},
          {"extent_m", m.extent_m},
          {"channel_schema", schema},
          {"v_max", m.v_max},
          {"h_max", m.h_max},
          {"v_ref", m.v_ref},
          {"n_bins", m.n_bins},
          {"split_seed", m.split_seed},
          {"train_fraction", m.train_fraction},
          {"sample_count", m.samples.size()},
          {"samples", m.samples},
          {"extra", m.extra}};
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.family = j.at("family").get<std::string>();
    m.size = j.at("size").get<int>();
    m.extent_m = j.at("extent_m").get<double>();
    for (const auto& c : j.at("channel_schema")) m.channel_schema.push_back(parse_channel(c.get<std::string>()));
    m.v_max = j.at("v_max").get<double>();
    m.h_max = j.at("h_max").get<double>();
    m.v_ref = j.value("v_ref", 5.0);
    m.n_bins = j.at("n_bins").get<int>();
    m.split_seed = j.at("split_seed").get<std::uint64_t>();
    m.train_fraction = j.at("train_fraction").get<double>();
    m.samples = j.at("samples").get<std::vector<std::string>>();
    m.extra = j.value("extra", json::object());
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptContainer, std::string("malformed manifest: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::CorruptContainer, e.what());
  }
  m.validate();
  return m;
}

std::vector<std::uint8_t> encode_wgf(const SamplePair& s) {
  const FieldGrid& g = s.geometry;
  const bool has_flow = s.flow.channels() > 0;
  if (has_flow) {
    require(s.flow.height == g.height && s.flow.width == g.width, ErrorCode::ShapeMismatch,
            "geometry and flow dimensions differ");
  }
  std::vector<std::uint8_t> out{'W', 'G', 'F', '1'};
  put_u32(out, static_cast<std::uint32_t>(g.height));
  put_u32(out, static_cast<std::uint32_t>(g.width));
  put_u32(out, static_cast<std::uint32_t>(g.channels()));
  put_u32(out, has_flow ? static_cast<std::uint32_t>(s.flow.channels()) : 0u);
  put_floats(out, g.values);
  if (has_flow) put_floats(out, s.flow.values);
  return out;
}

SamplePair decode_wgf(const std::vector<std::uint8_t>& in, double extent_m) {
  require(in.size() >= 20 && std::memcmp(in.data(), "WGF1", 4) == 0, ErrorCode::CorruptContainer,
          "bad WGF1 magic");
  const std::uint32_t h = get_u32(in, 4), w = get_u32(in, 8), cg = get_u32(in, 12), cf = get_u32(in, 16);
  require(h > 0 && w > 0 && h <= 8192 && w <= 8192 && cg >= 1 && cf <= 1, ErrorCode::CorruptContainer,
          "implausible WGF1 dimensions");
  const std::size_t px = static_cast<std::size_t>(h) * w;
  require(in.size() == 20 + 4 * px * (cg + cf), ErrorCode::CorruptContainer, "WGF1 payload size mismatch");
  SamplePair s;
  s.geometry = FieldGrid(static_cast<int>(h), static_cast<int>(w), geometry_schema(cg), extent_m);
  std::size_t off = 20;
  for (float& v : s.geometry.values) {
    v = std::bit_cast<float>(get_u32(in, off));
    off += 4;
  }
  if (cf == 1) {
    s.flow = FieldGrid(static_cast<int>(h), static_cast<int>(w), {Channel::Velocity}, extent_m);
    for (float& v : s.flow.values) {
      v = std::bit_cast<float>(get_u32(in, off));
      off += 4;
    }
  }
  return s;
}

void write_sample(const fs::path& path, const SamplePair& s) {
  const auto bytes = encode_wgf(s);
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::Io, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(f.good(), ErrorCode::Io, "short write to " + path.string());
}

SamplePair read_sample(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::CorruptContainer, "missing sample " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_wgf(bytes);
}

void write_dataset(const DatasetManifest& manifest, const std::vector<SamplePair>& samples,
                   const fs::path& dir, bool previews) {
  manifest.validate();
  fs::create_directories(dir);
  DatasetManifest m = manifest;
  m.samples.clear();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string stem = sample_name(i);
    write_sample(dir / (stem + ".wgf"), samples[i]);
    if (previews && samples[i].flow.channels() > 0) {
      const auto plane = samples[i].flow.plane(0);
      write_png(dir / (stem + ".png"), render_viridis(plane, samples[i].flow.height, samples[i].flow.width, 0.0, m.v_max));
    }
    m.samples.push_back(stem + ".wgf");
  }
  std::ofstream f(dir / "manifest.json");
  require(f.good(), ErrorCode::Io, "cannot write manifest in " + dir.string());
  f << manifest_to_json(m).dump(2) << '\n';
}

std::pair<DatasetManifest, std::vector<SamplePair>> read_dataset(const fs::path& dir) {
  std::ifstream f(dir / "manifest.json");
  require(f.good(), ErrorCode::CorruptContainer, "no manifest.json in " + dir.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptContainer, std::string("manifest.json does not parse: ") + e.what());
  }
  DatasetManifest m = manifest_from_json(j);
  std::vector<SamplePair> samples;
  samples.reserve(m.samples.size());
  for (const auto& name : m.samples) {
    SamplePair s = read_sample(dir / name);
    require(s.geometry.height == m.size && s.geometry.width == m.size, ErrorCode::CorruptContainer,
            name + " dimensions disagree with the manifest");
    require(s.geometry.channels() == static_cast<int>(m.channel_schema.size()), ErrorCode::CorruptContainer,
            name + " channel count disagrees with the manifest");
    s.geometry.schema = m.channel_schema;
    s.geometry.extent_m = m.extent_m;
    s.flow.extent_m = m.extent_m;
    samples.push_back(std::move(s));
  }
  return {std::move(m), std::move(samples)};
}

Split split_indices(std::size_t count, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0 && train_fraction < 1, ErrorCode::InvalidArgument, "train_fraction must be in (0, 1)");
  std::vector<int> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = static_cast<int>(i);
  std::mt19937_64 rng(derive_seed(seed, "split"));
  for (std::size_t i = count; i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
  const std::size_t n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(count)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<long>(n_train));
  s.test.assign(idx.begin() + static_cast<long>(n_train), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

}  // namespace wc
