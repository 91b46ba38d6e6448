#pragma once

// Desk-scale 2D flow solver (D2Q9 lattice Boltzmann) and dataset generator.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "windcomfort/raster.hpp"

namespace wc {

struct SolverConfig {
  int grid = 128;
  double tau = 0.8;
  double u_in = 0.08;  // lattice units
  int max_steps = 20000;
  double tolerance = 1e-6;  // relative change of the velocity field per check interval
  int check_every = 100;
  double v_ref = 5.0;  // m/s represented by u_in
  // Halo drag around buildings when a height channel is present: alpha = drag * h / height_ref.
  double drag = 0.5;
  double height_ref = 50.0;

  void validate() const;
};

struct SolveResult {
  FieldGrid speed;  // m/s, same size as the mask
  bool converged = false;
  int steps = 0;
  double residual = 0;
  double mass_initial = 0;
  double mass_final = 0;

  double mass_drift() const { return mass_initial > 0 ? std::abs(mass_final - mass_initial) / mass_initial : 0; }
};

// Inlet on the left edge, zero-gradient outlet on the right, free-slip top and bottom,
// bounce-back on mask cells. A height channel, if present, drives the halo drag.
SolveResult solve(const FieldGrid& mask, const SolverConfig& cfg);

struct FamilySpec {
  std::string family = "single";  // wall | single | two | two_height | urban
  int count = 64;
  std::uint64_t seed = 0;
  int size = 256;  // output raster side
  double extent = 100.0;
  int n_bins = 20;
  double train_fraction = 0.8;

  void validate() const;
  bool with_height() const { return family == "two_height" || family == "urban"; }
};

const std::vector<std::string>& family_names();

// The i-th random scene of a family (pure function of seed and index).
Scene family_scene(const FamilySpec& spec, int index);

struct GeneratedDataset {
  DatasetManifest manifest;
  std::vector<SamplePair> samples;
  int unconverged = 0;
  int rejected_scenes = 0;
};

GeneratedDataset generate(const FamilySpec& spec, const SolverConfig& cfg);

}  // namespace wc
