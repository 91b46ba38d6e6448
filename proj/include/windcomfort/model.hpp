#pragma once

// Trained model bundle, checkpoint container, and inference.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "windcomfort/nets.hpp"
#include "windcomfort/raster.hpp"

namespace wc {

nlohmann::json spec_to_json(const GeneratorSpec& s);
GeneratorSpec generator_spec_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const DiscriminatorSpec& s);
DiscriminatorSpec discriminator_spec_from_json(const nlohmann::json& j);

struct ModelHeader {
  std::string arch = "unet";  // pix2pix | cyclegan | unet
  GeneratorSpec generator;
  std::optional<DiscriminatorSpec> discriminator;  // cyclegan: shared by D_X and D_Y (in_channels of D_Y)
  int epoch = 0;
  Normalization norm;
  double v_ref = 5.0;
  int size = 0;
  double extent_m = 100.0;
  std::string family;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
  static ModelHeader from_json(const nlohmann::json& j);
  // Stable hash of the architecture fields, hex encoded.
  std::string spec_hash() const;
};

// Networks by role: pix2pix {G, D}; cyclegan {G: X->Y, F: Y->X, D_Y (in D), D_X}; unet {G}.
struct Model {
  ModelHeader header;
  std::unique_ptr<Network<float>> G;
  std::unique_ptr<Network<float>> D;
  std::unique_ptr<Network<float>> F;
  std::unique_ptr<Network<float>> D_X;

  std::vector<std::pair<std::string, Network<float>*>> networks() const;
  std::size_t param_count() const;
  void set_training(bool on);
};

// Discriminator spec of the CycleGAN X-domain critic for a given header.
DiscriminatorSpec cyclegan_dx_spec(const ModelHeader& h);
GeneratorSpec cyclegan_f_spec(const ModelHeader& h);

Model build_model(const ModelHeader& header);

void save_checkpoint(const std::filesystem::path& path, const Model& model);
std::vector<std::uint8_t> checkpoint_bytes(const Model& model);
Model load_checkpoint(const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path, const ModelHeader& expected);
Model checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes);

// Geometry raster -> generator input tensor using the model's normalisation and flags.
Tensor<float> model_input(const Model& model, const FieldGrid& geometry);

// Eval-mode forward of G (no dropout, no graph). Safe to call concurrently.
Tensor<float> generator_forward(const Model& model, const Tensor<float>& x);

// Geometry -> velocity magnitude in m/s.
FieldGrid predict_flow(const Model& model, const FieldGrid& geometry);

}  // namespace wc
