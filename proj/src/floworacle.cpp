#include "windcomfort/floworacle.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <numbers>
#include <random>

#include "windcomfort/rng.hpp"

namespace wc {

namespace {

// D2Q9 velocities as (column step, row step); rows grow southwards.
constexpr int kQ = 9;
constexpr std::array<int, kQ> kCx{0, 1, 0, -1, 0, 1, -1, -1, 1};
constexpr std::array<int, kQ> kCr{0, 0, -1, 0, 1, -1, -1, 1, 1};
constexpr std::array<double, kQ> kW{4.0 / 9, 1.0 / 9, 1.0 / 9, 1.0 / 9, 1.0 / 9,
                                    1.0 / 36, 1.0 / 36, 1.0 / 36, 1.0 / 36};
constexpr std::array<int, kQ> kOpposite{0, 3, 4, 1, 2, 7, 8, 5, 6};
constexpr std::array<int, kQ> kMirrorRow{0, 1, 4, 3, 2, 8, 7, 6, 5};

inline void equilibrium(double rho, double ux, double ur, double* feq) {
  const double usq = 1.5 * (ux * ux + ur * ur);
  for (int i = 0; i < kQ; ++i) {
    const double eu = 3.0 * (kCx[i] * ux + kCr[i] * ur);
    feq[i] = kW[i] * rho * (1.0 + eu + 0.5 * eu * eu - usq);
  }
}

inline void moments(const std::vector<double>& f, std::size_t cells, std::size_t idx, double& rho,
                    double& ux, double& ur) {
  double fi[kQ];
  for (int i = 0; i < kQ; ++i) fi[i] = f[i * cells + idx];
  // Pairwise sums keep mirrored cells numerically symmetric.
  rho = fi[0] + (fi[1] + fi[3]) + (fi[2] + fi[4]) + ((fi[5] + fi[8]) + (fi[6] + fi[7]));
  ux = ((fi[1] - fi[3]) + ((fi[5] + fi[8]) - (fi[6] + fi[7]))) / rho;
  ur = ((fi[4] - fi[2]) + ((fi[7] + fi[8]) - (fi[5] + fi[6]))) / rho;
}

struct Rect {
  double cx, cy, w, l, angle_deg, height;
};

Building rect_building(const Rect& r) {
  const double a = r.angle_deg * std::numbers::pi / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  Building b;
  b.height = r.height;
  const double hw = r.w / 2, hl = r.l / 2;
  const std::array<std::array<double, 2>, 4> corners{{{-hw, -hl}, {hw, -hl}, {hw, hl}, {-hw, hl}}};
  for (const auto& c : corners) b.polygon.push_back({r.cx + c[0] * ca - c[1] * sa, r.cy + c[0] * sa + c[1] * ca});
  return b;
}

double radius(const Rect& r) { return 0.5 * std::hypot(r.w, r.l); }

bool fits(const Rect& r, double extent) {
  const double margin = 0.1 * extent;
  const double rad = radius(r);
  return r.cx - rad >= margin && r.cx + rad <= extent - margin && r.cy - rad >= margin &&
         r.cy + rad <= extent - margin;
}

bool separated(const Rect& a, const Rect& b, double gap) {
  return std::hypot(a.cx - b.cx, a.cy - b.cy) >= radius(a) + radius(b) + gap;
}

FieldGrid resample_bilinear(const FieldGrid& src, int size) {
  FieldGrid out(size, size, src.schema, src.extent_m);
  const int n = src.height;
  const double ratio = static_cast<double>(n) / size;
  for (int r = 0; r < size; ++r) {
    const double sr = std::clamp((r + 0.5) * ratio - 0.5, 0.0, n - 1.0);
    const int r0 = std::min(static_cast<int>(sr), n - 2 < 0 ? 0 : n - 2);
    const double fr = sr - r0;
    for (int c = 0; c < size; ++c) {
      const double sc = std::clamp((c + 0.5) * ratio - 0.5, 0.0, n - 1.0);
      const int c0 = std::min(static_cast<int>(sc), n - 2 < 0 ? 0 : n - 2);
      const double fc = sc - c0;
      const int r1 = std::min(r0 + 1, n - 1), c1 = std::min(c0 + 1, n - 1);
      for (int k = 0; k < src.channels(); ++k) {
        const double v = (1 - fr) * ((1 - fc) * src.at(r0, c0, k) + fc * src.at(r0, c1, k)) +
                         fr * ((1 - fc) * src.at(r1, c0, k) + fc * src.at(r1, c1, k));
        out.at(r, c, k) = static_cast<float>(v);
      }
    }
  }
  return out;
}

FieldGrid crop_center(const FieldGrid& g, int size) {
  const int off = (g.height - size) / 2;
  FieldGrid out(size, size, g.schema, g.extent_m * size / g.height);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      for (int k = 0; k < g.channels(); ++k) out.at(r, c, k) = g.at(r + off, c + off, k);
    }
  }
  return out;
}

}  // namespace

void SolverConfig::validate() const {
  require(grid >= 8, ErrorCode::InvalidArgument, "solver grid must be at least 8");
  require(tau > 0.5, ErrorCode::InvalidArgument, "relaxation time must exceed 0.5");
  require(u_in > 0 && u_in < 0.2, ErrorCode::InvalidArgument, "inlet speed must lie in (0, 0.2)");
  require(tolerance > 0, ErrorCode::InvalidArgument, "tolerance must be positive");
  require(max_steps > 0 && check_every > 0, ErrorCode::InvalidArgument, "step counts must be positive");
  require(v_ref > 0, ErrorCode::InvalidArgument, "v_ref must be positive");
}

SolveResult solve(const FieldGrid& mask, const SolverConfig& cfg) {
  cfg.validate();
  require(mask.height == mask.width && mask.has(Channel::Mask), ErrorCode::ShapeError,
          "solver expects a square mask raster");
  const int n = mask.height;
  const std::size_t cells = static_cast<std::size_t>(n) * n;
  const int mi = mask.index_of(Channel::Mask);
  const int hi = mask.index_of(Channel::Height);

  std::vector<std::uint8_t> solid(cells);
  for (std::size_t i = 0; i < cells; ++i) solid[i] = mask.values[i * mask.channels() + mi] > 0.5f;

  // Drag coefficient in the one-cell halo around buildings, scaled by the tallest neighbour.
  std::vector<double> alpha(cells, 0.0);
  if (hi >= 0) {
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        if (solid[r * n + c]) continue;
        double h = 0;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr < 0 || rr >= n || cc < 0 || cc >= n || !solid[rr * n + cc]) continue;
            h = std::max(h, static_cast<double>(mask.at(rr, cc, hi)));
          }
        }
        alpha[r * n + c] = cfg.drag * h / cfg.height_ref;
      }
    }
  }

  // Source of every pulled population, resolved once: index into the post-collision buffer.
  std::vector<std::uint32_t> source(kQ * cells, 0);
  for (int r = 0; r < n; ++r) {
    for (int c = 1; c < n - 1; ++c) {
      const std::size_t idx = static_cast<std::size_t>(r) * n + c;
      for (int i = 0; i < kQ; ++i) {
        const int sr = r - kCr[i];
        const int sc = c - kCx[i];
        std::size_t src;
        if (sr < 0 || sr >= n) {
          const std::size_t side = static_cast<std::size_t>(r) * n + sc;
          src = solid[side] ? kOpposite[i] * cells + idx : kMirrorRow[i] * cells + side;
        } else {
          const std::size_t from = static_cast<std::size_t>(sr) * n + sc;
          src = solid[from] ? kOpposite[i] * cells + idx : i * cells + from;
        }
        source[i * cells + idx] = static_cast<std::uint32_t>(src);
      }
    }
  }

  double feq_in[kQ];
  equilibrium(1.0, cfg.u_in, 0.0, feq_in);
  std::vector<double> f(kQ * cells, 0.0), g(kQ * cells, 0.0);
  for (std::size_t idx = 0; idx < cells; ++idx) {
    if (solid[idx]) continue;
    for (int i = 0; i < kQ; ++i) f[i * cells + idx] = feq_in[i];
  }

  SolveResult res;
  for (std::size_t idx = 0; idx < cells; ++idx) res.mass_initial += solid[idx] ? 0.0 : 1.0;

  const double omega = 1.0 / cfg.tau;
  const double gain = 0.25 / n;
  double rho_out = 1.0;
  double mass_error = 0;
  std::vector<double> prev_ux(cells, 0.0), prev_ur(cells, 0.0);
  bool have_prev = false;
  int step = 0;
  while (step < cfg.max_steps) {
    for (int r = 0; r < n; ++r) {
      for (int c = 1; c < n - 1; ++c) {
        const std::size_t idx = static_cast<std::size_t>(r) * n + c;
        if (solid[idx]) continue;
        double fi[kQ];
        for (int i = 0; i < kQ; ++i) fi[i] = f[source[i * cells + idx]];
        const double rho = fi[0] + (fi[1] + fi[3]) + (fi[2] + fi[4]) + ((fi[5] + fi[8]) + (fi[6] + fi[7]));
        double ux = ((fi[1] - fi[3]) + ((fi[5] + fi[8]) - (fi[6] + fi[7]))) / rho;
        double ur = ((fi[4] - fi[2]) + ((fi[7] + fi[8]) - (fi[5] + fi[6]))) / rho;
        if (alpha[idx] > 0) {
          ux /= 1.0 + alpha[idx];
          ur /= 1.0 + alpha[idx];
        }
        double feq[kQ];
        equilibrium(rho, ux, ur, feq);
        for (int i = 0; i < kQ; ++i) g[i * cells + idx] = fi[i] + omega * (feq[i] - fi[i]);
      }
      const std::size_t in = static_cast<std::size_t>(r) * n;
      if (!solid[in]) {
        for (int i = 0; i < kQ; ++i) g[i * cells + in] = feq_in[i];
      }
      const std::size_t out = in + n - 1;
      if (!solid[out] && !solid[out - 1]) {
        double rho, ux, ur, feq[kQ];
        moments(g, cells, out - 1, rho, ux, ur);
        equilibrium(rho_out, ux, ur, feq);
        for (int i = 0; i < kQ; ++i) g[i * cells + out] = feq[i];
      }
    }
    f.swap(g);
    ++step;

    // The outlet density sets the pressure level; steer it so total mass returns to its
    // initial value. The gain is kept well below the inverse acoustic crossing time.
    double mass = 0;
    for (std::size_t idx = 0; idx < cells; ++idx) {
      if (solid[idx]) continue;
      double m = 0;
      for (int i = 0; i < kQ; ++i) m += f[i * cells + idx];
      mass += m;
    }
    mass_error = mass / res.mass_initial - 1.0;
    rho_out -= gain * mass_error;

    if (step % cfg.check_every == 0 || step == cfg.max_steps) {
      double diff = 0, norm = 0;
      bool finite = true;
      for (std::size_t idx = 0; idx < cells; ++idx) {
        if (solid[idx]) continue;
        double rho, ux, ur;
        moments(f, cells, idx, rho, ux, ur);
        if (!std::isfinite(rho) || !std::isfinite(ux) || !std::isfinite(ur)) {
          finite = false;
          break;
        }
        diff += (ux - prev_ux[idx]) * (ux - prev_ux[idx]) + (ur - prev_ur[idx]) * (ur - prev_ur[idx]);
        norm += ux * ux + ur * ur;
        prev_ux[idx] = ux;
        prev_ur[idx] = ur;
      }
      if (!finite) fail(ErrorCode::Diverged, "non-finite lattice state at step " + std::to_string(step));
      res.residual = norm > 0 ? std::sqrt(diff / norm) : 0.0;
      if (have_prev && res.residual < cfg.tolerance && std::abs(mass_error) < 0.1 * cfg.tolerance * n) {
        res.converged = true;
        break;
      }
      have_prev = true;
    }
  }
  res.steps = step;

  res.speed = FieldGrid(n, n, {Channel::Velocity}, mask.extent_m);
  const double scale = cfg.v_ref / cfg.u_in;
  for (std::size_t idx = 0; idx < cells; ++idx) {
    if (solid[idx]) continue;
    double rho, ux, ur;
    moments(f, cells, idx, rho, ux, ur);
    res.mass_final += rho;
    res.speed.values[idx] = static_cast<float>(std::sqrt(ux * ux + ur * ur) * scale);
  }
  return res;
}

void FamilySpec::validate() const {
  const auto& names = family_names();
  require(std::find(names.begin(), names.end(), family) != names.end(), ErrorCode::InvalidArgument,
          "unknown dataset family '" + family + "'");
  require(count >= 1, ErrorCode::InvalidArgument, "count must be positive");
  require(size >= 8, ErrorCode::InvalidArgument, "raster size must be at least 8");
  require(extent > 0, ErrorCode::InvalidArgument, "extent must be positive");
  require(n_bins >= 2, ErrorCode::InvalidArgument, "n_bins must be at least 2");
  require(train_fraction > 0 && train_fraction < 1, ErrorCode::InvalidArgument, "train_fraction must be in (0, 1)");
}

const std::vector<std::string>& family_names() {
  static const std::vector<std::string> names{"wall", "single", "two", "two_height", "urban"};
  return names;
}

Scene family_scene(const FamilySpec& spec, int index) {
  std::mt19937_64 rng(derive_seed(spec.seed, "scene/" + spec.family + "/" + std::to_string(index)));
  const double e = spec.family == "urban" ? 2 * spec.extent : spec.extent;
  auto u = [&](double lo, double hi) { return uniform(rng, lo, hi); };
  Scene scene;
  scene.extent = e;
  std::vector<Rect> rects;
  auto place = [&](auto draw, int wanted, double gap) {
    for (int attempt = 0; attempt < 1000 && static_cast<int>(rects.size()) < wanted; ++attempt) {
      Rect r = draw();
      if (!fits(r, e)) continue;
      bool ok = true;
      for (const Rect& o : rects) ok = ok && separated(r, o, gap);
      if (ok) rects.push_back(r);
    }
  };
  if (spec.family == "wall") {
    place([&] { return Rect{e * (0.5 + u(-0.15, 0.15)), e * (0.5 + u(-0.15, 0.15)), e * u(0.03, 0.06),
                            e * u(0.2, 0.4), u(0, 180), 10.0}; }, 1, 0);
  } else if (spec.family == "single") {
    place([&] { return Rect{e * (0.5 + u(-0.15, 0.15)), e * (0.5 + u(-0.15, 0.15)), e * u(0.1, 0.25),
                            e * u(0.1, 0.25), u(0, 90), 10.0}; }, 1, 0);
  } else if (spec.family == "two" || spec.family == "two_height") {
    const bool tall = spec.family == "two_height";
    auto draw = [&](double x) {
      return [&, x] { return Rect{e * (x + u(-0.1, 0.1)), e * (0.5 + u(-0.15, 0.15)), e * u(0.08, 0.18),
                                  e * u(0.08, 0.18), u(0, 90), tall ? u(10, 60) : 10.0}; };
    };
    place(draw(0.33), 1, 0);
    place(draw(0.67), 2, 0.02 * e);
  } else {
    const int wanted = 10 + static_cast<int>(uniform_index(rng, 9));
    place([&] { return Rect{e * u(0.1, 0.9), e * u(0.1, 0.9), e * u(0.04, 0.09), e * u(0.04, 0.09),
                            u(0, 90), u(8, 40)}; }, wanted, 0.02 * e);
  }
  for (const Rect& r : rects) scene.buildings.push_back(rect_building(r));
  return scene;
}

GeneratedDataset generate(const FamilySpec& spec, const SolverConfig& cfg) {
  spec.validate();
  cfg.validate();
  const bool urban = spec.family == "urban";
  const bool height = spec.with_height();
  const int out_size = urban ? 2 * spec.size : spec.size;
  SolverConfig solver = cfg;
  if (urban) solver.grid = 2 * cfg.grid;

  // Draw scenes up front so the sample order never depends on solver scheduling.
  std::vector<Scene> scenes;
  GeneratedDataset ds;
  for (int attempt = 0; static_cast<int>(scenes.size()) < spec.count; ++attempt) {
    Scene s = family_scene(spec, attempt);
    bool valid = !s.buildings.empty();
    try {
      s.validate();
    } catch (const Error& err) {
      valid = false;
      std::clog << "gen-data: skipping scene " << attempt << ": " << err.what() << '\n';
    }
    if (!valid) {
      ++ds.rejected_scenes;
      require(ds.rejected_scenes < 10 * spec.count + 100, ErrorCode::InvalidArgument,
              "family parameters keep producing invalid scenes");
      continue;
    }
    scenes.push_back(std::move(s));
  }

  const int n = spec.count;
  std::vector<FieldGrid> geometry(n), speed(n);
  std::vector<int> converged(n, 0);
  std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      const FieldGrid coarse = rasterize(scenes[i], solver.grid, height);
      SolveResult res = solve(coarse, solver);
      converged[i] = res.converged;
      FieldGrid geo = rasterize(scenes[i], out_size, height);
      FieldGrid flow = res.speed.height == out_size ? res.speed : resample_bilinear(res.speed, out_size);
      for (std::size_t p = 0; p < geo.pixels(); ++p) {
        if (geo.values[p * geo.channels()] > 0.5f) flow.values[p] = 0.0f;
      }
      if (urban) {
        geo = crop_center(geo, spec.size);
        flow = crop_center(flow, spec.size);
        for (int r = 0; r < spec.size; ++r) {
          for (int c = 0; c < spec.size; ++c) {
            if (inside_inscribed_circle(r, c, spec.size)) continue;
            for (int k = 0; k < geo.channels(); ++k) geo.at(r, c, k) = 0.0f;
            flow.at(r, c, 0) = 0.0f;
          }
        }
      }
      geometry[i] = std::move(geo);
      speed[i] = std::move(flow);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (int i = 0; i < n; ++i) {
    if (!errors[i].empty()) fail(ErrorCode::Diverged, "sample " + std::to_string(i) + ": " + errors[i]);
  }

  double observed = 0, h_max = 0;
  for (int i = 0; i < n; ++i) {
    for (float v : speed[i].values) observed = std::max(observed, static_cast<double>(v));
    const int hc = geometry[i].index_of(Channel::Height);
    if (hc >= 0) {
      for (std::size_t p = 0; p < geometry[i].pixels(); ++p) {
        h_max = std::max(h_max, static_cast<double>(geometry[i].values[p * geometry[i].channels() + hc]));
      }
    }
  }
  const double v_max = urban ? 15.0 : std::max(0.5, std::ceil(observed / 0.5) * 0.5);
  int clamped = 0;

  auto& m = ds.manifest;
  m.name = spec.family + "-" + std::to_string(spec.seed);
  m.family = spec.family;
  m.size = spec.size;
  m.extent_m = spec.extent;
  m.channel_schema = height ? std::vector<Channel>{Channel::Mask, Channel::Height} : std::vector<Channel>{Channel::Mask};
  m.v_max = v_max;
  m.h_max = h_max > 0 ? h_max : 1.0;
  m.v_ref = cfg.v_ref;
  m.n_bins = spec.n_bins;
  m.split_seed = spec.seed;
  m.train_fraction = spec.train_fraction;

  for (int i = 0; i < n; ++i) {
    for (float& v : speed[i].values) {
      if (v > v_max) {
        v = static_cast<float>(v_max);
        ++clamped;
      }
    }
    SamplePair s{std::move(geometry[i]), bucketize(speed[i], v_max, spec.n_bins)};
    s.geometry.extent_m = s.flow.extent_m = spec.extent;
    ds.unconverged += converged[i] ? 0 : 1;
    ds.samples.push_back(std::move(s));
    m.samples.push_back("");
  }
  m.extra = {{"solver",
              {{"grid", solver.grid},
               {"tau", cfg.tau},
               {"u_in", cfg.u_in},
               {"max_steps", cfg.max_steps},
               {"tolerance", cfg.tolerance},
               {"drag", cfg.drag},
               {"height_ref", cfg.height_ref}}},
             {"seed", spec.seed},
             {"unconverged", ds.unconverged},
             {"rejected_scenes", ds.rejected_scenes},
             {"clamped_pixels", clamped},
             {"observed_max_ms", observed}};
  return ds;
}

}  // namespace wc
