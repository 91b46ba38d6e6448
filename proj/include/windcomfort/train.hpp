#pragma once

// Training loops for pix2pix, CycleGAN and the supervised U-Net.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include <json.hpp>

#include "windcomfort/model.hpp"
#include "windcomfort/objectives.hpp"
#include "windcomfort/raster.hpp"

namespace wc {

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 1;
  int epochs = 70;
  int decay_epochs = 20;  // the last decay_epochs epochs ramp the rate linearly to zero
  int pool_size = 50;
  double lambda_l1 = 100.0;
  double lambda_cycle = 10.0;
  std::uint64_t seed = 0;
  int eval_every = 1;         // validation cadence in epochs; 0 disables validation
  int checkpoint_every = 0;   // extra checkpoints every n epochs; the final one is always written
  long max_steps = 0;         // stop after this many generator updates (0: run all epochs)
  std::filesystem::path out_dir;  // empty: no logs or checkpoints

  int flat_epochs() const { return epochs - decay_epochs; }
  void validate() const;
};

// 0-based epoch -> learning rate. Flat for the first flat_epochs(), then linear to 0 at e = epochs.
double lr_at_epoch(int epoch, const TrainConfig& cfg);

// History buffer of generated samples replayed to a discriminator.
class ImagePool {
 public:
  ImagePool(int capacity, std::uint64_t seed);

  // Fill phase: store and return the fresh sample. Full: with probability 1/2 return it
  // unchanged, otherwise swap it with a random stored sample and return that one.
  Tensor<float> query(const Tensor<float>& fresh);
  std::size_t size() const { return buffer_.size(); }
  int capacity() const { return capacity_; }
  long fresh_returns() const { return fresh_returns_; }

 private:
  int capacity_;
  std::mt19937_64 rng_;
  std::vector<Tensor<float>> buffer_;
  long fresh_returns_ = 0;
};

// Per image, mean patch probability > 0.5 means "real". Fraction of images classified correctly.
double disc_accuracy(const std::vector<std::vector<double>>& patch_probs, const std::vector<bool>& is_real);
// Same from a [N, 1, h, w] tensor of scores; logits go through a sigmoid first.
double disc_accuracy(const Tensor<float>& scores, bool is_real, bool logits);

struct UpdateCounts {
  long G = 0, D = 0, F = 0, D_X = 0;
};

struct EpochStats {
  int epoch = 0;
  double lr = 0;
  double train_l1 = 0;  // mean generator L1 over the epoch's steps (normalised tensor units)
  double disc_accuracy = 0;
  std::optional<double> val_mae;
  std::optional<double> val_mre;
  nlohmann::json sn_sigma = nlohmann::json::object();  // layer -> tracked sigma of the normalised weight
};

struct TrainResult {
  Model model;
  UpdateCounts updates;
  long steps = 0;
  std::vector<EpochStats> epochs;
  LossReport last;
};

struct TrainData {
  DatasetManifest manifest;
  std::vector<SamplePair> samples;
  std::vector<int> train;
  std::vector<int> val;

  // Manifest split; with an empty test split every sample is used for training.
  static TrainData from_dataset(DatasetManifest manifest, std::vector<SamplePair> samples);
};

// Header for a fresh run on this dataset; channel counts follow the manifest.
ModelHeader training_header(const std::string& arch, GeneratorSpec gen, std::optional<DiscriminatorSpec> disc,
                            const TrainData& data, std::uint64_t seed);

TrainResult train_pix2pix(const TrainData& data, const GeneratorSpec& gen, const DiscriminatorSpec& disc,
                          const TrainConfig& cfg);
TrainResult train_cyclegan(const TrainData& data, const GeneratorSpec& gen, const DiscriminatorSpec& disc,
                           const TrainConfig& cfg);
TrainResult train_unet(const TrainData& data, const GeneratorSpec& gen, const TrainConfig& cfg);

// FNV-1a over the raw parameter bytes of every network.
std::uint64_t weight_checksum(const Model& model);

}  // namespace wc
