#pragma once

// Building blocks shared by the generators and the discriminator.

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "windcomfort/autograd.hpp"

namespace wc {

template <typename T>
struct NamedParam {
  std::string name;
  ag::Var<T> var;
};

// Persistent power-iteration state of one spectrally normalised weight.
template <typename T>
struct SpectralNormState {
  std::string name;
  int rows = 0;
  std::vector<T> u;
  std::vector<T> v;
  T last_sigma = 0;

  // Returns W / sigma(W); in training mode first advances (u, v) by one step.
  ag::Var<T> apply(const ag::Var<T>& weight, bool training, std::mt19937_64& rng);

  // u^T (W / last_sigma) v for the current weight: the tracked spectral norm of the
  // normalised weight, ~1 once the estimate has converged.
  T normalized_sigma(const ag::Var<T>& weight) const;
};

template <typename T>
class ParamRegistry {
 public:
  explicit ParamRegistry(std::uint64_t seed);

  ag::Var<T> gaussian(const std::string& name, Shape shape, double stddev);
  ag::Var<T> constant(const std::string& name, Shape shape, T value);
  SpectralNormState<T>* spectral(const std::string& name, const ag::Var<T>& weight);

  const std::vector<NamedParam<T>>& params() const { return params_; }
  std::vector<std::unique_ptr<SpectralNormState<T>>>& spectral_states() { return sn_; }
  const std::vector<std::unique_ptr<SpectralNormState<T>>>& spectral_states() const { return sn_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::vector<NamedParam<T>> params_;
  std::vector<std::unique_ptr<SpectralNormState<T>>> sn_;
  std::mt19937_64 rng_;
};

// Runtime switches passed down through a forward pass.
struct ForwardContext {
  bool training = false;
  std::mt19937_64* dropout_rng = nullptr;
  std::mt19937_64* sn_rng = nullptr;
};

template <typename T>
class Conv {
 public:
  struct Options {
    int in = 1;
    int out = 1;
    int kernel = 4;
    int stride = 2;
    int pad = 1;
    int reflect_pad = 0;  // reflection padding applied before the (unpadded) conv
    bool bias = true;
    bool coordconv = false;  // append normalised i/j coordinate channels to the input
    bool spectral_norm = false;
  };

  Conv() = default;
  Conv(ParamRegistry<T>& reg, const std::string& name, const Options& opt);

  ag::Var<T> operator()(const ag::Var<T>& x, const ForwardContext& ctx) const;
  const ag::Var<T>& weight() const { return weight_; }
  SpectralNormState<T>* spectral_state() const { return sn_; }

 private:
  Options opt_;
  ag::Var<T> weight_;
  ag::Var<T> bias_;
  SpectralNormState<T>* sn_ = nullptr;
};

template <typename T>
class ConvTranspose {
 public:
  struct Options {
    int in = 1;
    int out = 1;
    int kernel = 4;
    int stride = 2;
    int pad = 1;
    int out_pad = 0;
    bool bias = true;
  };

  ConvTranspose() = default;
  ConvTranspose(ParamRegistry<T>& reg, const std::string& name, const Options& opt);

  ag::Var<T> operator()(const ag::Var<T>& x) const;

 private:
  Options opt_;
  ag::Var<T> weight_;
  ag::Var<T> bias_;
};

// SAGAN-style self-attention: y = x + gamma * attend(x), gamma initialised to 0.
template <typename T>
class SelfAttention {
 public:
  SelfAttention() = default;
  SelfAttention(ParamRegistry<T>& reg, const std::string& name, int channels, bool spectral_norm);

  ag::Var<T> operator()(const ag::Var<T>& x, const ForwardContext& ctx) const;
  // Softmax attention weights [N, HW, HW]; row i holds the weights of query position i.
  ag::Var<T> attention_map(const ag::Var<T>& x, const ForwardContext& ctx) const;
  const ag::Var<T>& gamma() const { return gamma_; }

 private:
  int channels_ = 0;
  Conv<T> query_;
  Conv<T> key_;
  Conv<T> value_;
  ag::Var<T> gamma_;
};

// Channel-then-spatial attention gating.
template <typename T>
class Cbam {
 public:
  Cbam() = default;
  Cbam(ParamRegistry<T>& reg, const std::string& name, int channels, bool spectral_norm,
       int reduction = 16, int spatial_kernel = 7);

  ag::Var<T> operator()(const ag::Var<T>& x, const ForwardContext& ctx) const;
  // Channel map M_c [N, C, 1, 1] and spatial map M_s [N, 1, H, W] for input x.
  ag::Var<T> channel_map(const ag::Var<T>& x, const ForwardContext& ctx) const;
  ag::Var<T> spatial_map(const ag::Var<T>& refined, const ForwardContext& ctx) const;

 private:
  Conv<T> mlp_in_;
  Conv<T> mlp_out_;
  Conv<T> spatial_;
};

// F' = M_c (x) F,  F'' = M_s (x) F'.
template <typename T>
ag::Var<T> cbam_refine(const ag::Var<T>& features, const ag::Var<T>& channel_map,
                       const ag::Var<T>& spatial_map_of_refined);

// Coordinate channels [N, 2, H, W] (i then j), each normalised to [-1, 1].
template <typename T>
Tensor<T> coord_tensor(int n, int h, int w);

}  // namespace wc
