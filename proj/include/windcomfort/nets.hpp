#pragma once

// Architecture zoo: U-Net and ResNet-9 generators, PatchGAN discriminator.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "windcomfort/layers.hpp"

namespace wc {

enum class GeneratorFamily { UNet, ResNet9 };
enum class AttentionKind { None, Self, Cbam };

std::string to_string(GeneratorFamily f);
std::string to_string(AttentionKind a);
GeneratorFamily parse_generator_family(const std::string& s);
AttentionKind parse_attention(const std::string& s);

struct GeneratorSpec {
  GeneratorFamily family = GeneratorFamily::UNet;
  int in_channels = 1;  // geometry channels (mask[, height])
  int out_channels = 1;
  int base_filters = 64;
  int depth = 8;  // U-Net down/up blocks; input side must be divisible by 2^depth
  double dropout_p = 0.5;
  AttentionKind attention = AttentionKind::None;
  // 1-based decoder block indices counted from the innermost block.
  std::vector<int> attention_placement{5, 6};
  bool coordconv_first = false;
  bool sdf_channel = false;  // model input carries an extra SDF channel after the geometry

  int input_channels() const { return in_channels + (sdf_channel ? 1 : 0); }
  void validate() const;
  bool operator==(const GeneratorSpec&) const = default;
};

struct DiscriminatorSpec {
  int in_channels = 2;  // conditioning input + flow, concatenated
  int base_filters = 64;
  int n_layers = 5;  // total conv layers, >= 3
  bool spectral_norm = false;
  AttentionKind attention = AttentionKind::None;
  std::vector<int> attention_placement{2, 3};  // 1-based conv block indices
  bool coordconv_first = false;

  void validate() const;
  bool operator==(const DiscriminatorSpec&) const = default;
};

template <typename T>
class Network {
 public:
  explicit Network(std::uint64_t seed);
  virtual ~Network() = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  virtual ag::Var<T> forward(const ag::Var<T>& x) = 0;

  const std::vector<NamedParam<T>>& parameters() const { return reg_.params(); }
  std::vector<std::unique_ptr<SpectralNormState<T>>>& spectral_states() {
    return reg_.spectral_states();
  }
  const std::vector<std::unique_ptr<SpectralNormState<T>>>& spectral_states() const {
    return reg_.spectral_states();
  }
  std::vector<ag::Var<T>> parameter_vars() const;
  std::size_t param_count() const;

  // Training mode enables dropout and advances spectral-norm power iteration.
  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }
  void set_requires_grad(bool on);
  void zero_grad();
  void seed_runtime(std::uint64_t seed);

 protected:
  ForwardContext context() { return {training_, &dropout_rng_, &sn_rng_}; }
  ParamRegistry<T> reg_;

 private:
  bool training_ = true;
  std::mt19937_64 dropout_rng_;
  std::mt19937_64 sn_rng_;
};

template <typename T>
std::unique_ptr<Network<T>> build_generator(const GeneratorSpec& spec, std::uint64_t seed);

template <typename T>
std::unique_ptr<Network<T>> build_discriminator(const DiscriminatorSpec& spec,
                                                std::uint64_t seed);

template <typename T>
std::size_t param_count(const Network<T>* net) {
  return net ? net->param_count() : 0;
}

// Patch-grid side for an input side, following the discriminator's stride pattern.
int patch_grid_size(const DiscriminatorSpec& spec, int input_side);

}  // namespace wc
