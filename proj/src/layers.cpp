#include "windcomfort/layers.hpp"

#include <algorithm>
#include <cmath>

#include "windcomfort/coords.hpp"
#include "windcomfort/rng.hpp"
#include "windcomfort/spectral_norm.hpp"

namespace wc {

template <typename T>
ag::Var<T> SpectralNormState<T>::apply(const ag::Var<T>& weight, bool training,
                                       std::mt19937_64& rng) {
  // Evaluation-mode forwards leave the state untouched so they can run concurrently.
  if (training || v.empty()) {
    SpectralStep<T> step = spectral_normalize<T>(weight.value().view(), rows, u, &rng);
    u = std::move(step.u);
    v = std::move(step.v);
    last_sigma = step.sigma;
  }
  return ag::spectral_divide(weight, u, v);
}

template <typename T>
T SpectralNormState<T>::normalized_sigma(const ag::Var<T>& weight) const {
  if (v.empty() || last_sigma == T(0)) return T(0);
  const std::size_t cols = weight.value().numel() / rows;
  T acc = 0;
  for (int i = 0; i < rows; ++i) {
    T wv = 0;
    for (std::size_t j = 0; j < cols; ++j) wv += weight.value().data[i * cols + j] * v[j];
    acc += u[i] * wv;
  }
  return acc / last_sigma;
}

template <typename T>
ParamRegistry<T>::ParamRegistry(std::uint64_t seed) : rng_(seed) {}

template <typename T>
ag::Var<T> ParamRegistry<T>::gaussian(const std::string& name, Shape shape, double stddev) {
  Tensor<T> t(std::move(shape));
  for (T& x : t.data) x = static_cast<T>(stddev * standard_normal(rng_));
  ag::Var<T> var(std::move(t), true);
  params_.push_back({name, var});
  return var;
}

template <typename T>
ag::Var<T> ParamRegistry<T>::constant(const std::string& name, Shape shape, T value) {
  ag::Var<T> var(Tensor<T>(std::move(shape), value), true);
  params_.push_back({name, var});
  return var;
}

template <typename T>
SpectralNormState<T>* ParamRegistry<T>::spectral(const std::string& name,
                                                 const ag::Var<T>& weight) {
  auto state = std::make_unique<SpectralNormState<T>>();
  state->name = name;
  state->rows = weight.dim(0);
  state->u = random_unit_vector<T>(state->rows, rng_);
  sn_.push_back(std::move(state));
  return sn_.back().get();
}

template <typename T>
Tensor<T> coord_tensor(int n, int h, int w) {
  Tensor<T> t({n, 2, h, w});
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        t.at(b, 0, i, j) = static_cast<T>(normalized_coord(i, h));
        t.at(b, 1, i, j) = static_cast<T>(normalized_coord(j, w));
      }
    }
  }
  return t;
}

template <typename T>
Conv<T>::Conv(ParamRegistry<T>& reg, const std::string& name, const Options& opt) : opt_(opt) {
  const int in = opt.in + (opt.coordconv ? 2 : 0);
  weight_ = reg.gaussian(name + ".weight", {opt.out, in, opt.kernel, opt.kernel}, 0.02);
  if (opt.bias) bias_ = reg.constant(name + ".bias", {opt.out}, T(0));
  if (opt.spectral_norm) sn_ = reg.spectral(name + ".weight", weight_);
}

template <typename T>
ag::Var<T> Conv<T>::operator()(const ag::Var<T>& x, const ForwardContext& ctx) const {
  ag::Var<T> in = x;
  if (opt_.coordconv) {
    in = ag::concat_channels(in, ag::Var<T>(coord_tensor<T>(x.dim(0), x.dim(2), x.dim(3))));
  }
  if (opt_.reflect_pad > 0) in = ag::reflect_pad(in, opt_.reflect_pad);
  ag::Var<T> w = weight_;
  if (sn_) {
    std::mt19937_64 fallback(0);
    w = sn_->apply(weight_, ctx.training, ctx.sn_rng ? *ctx.sn_rng : fallback);
  }
  return ag::conv2d(in, w, bias_, opt_.stride, opt_.pad);
}

template <typename T>
ConvTranspose<T>::ConvTranspose(ParamRegistry<T>& reg, const std::string& name,
                                const Options& opt)
    : opt_(opt) {
  weight_ = reg.gaussian(name + ".weight", {opt.in, opt.out, opt.kernel, opt.kernel}, 0.02);
  if (opt.bias) bias_ = reg.constant(name + ".bias", {opt.out}, T(0));
}

template <typename T>
ag::Var<T> ConvTranspose<T>::operator()(const ag::Var<T>& x) const {
  return ag::conv_transpose2d(x, weight_, bias_, opt_.stride, opt_.pad, opt_.out_pad);
}

template <typename T>
SelfAttention<T>::SelfAttention(ParamRegistry<T>& reg, const std::string& name, int channels,
                                bool spectral_norm)
    : channels_(channels) {
  require(channels >= 8 && channels % 8 == 0, ErrorCode::ShapeError,
          "self-attention needs channels divisible by 8, got " + std::to_string(channels));
  typename Conv<T>::Options o;
  o.kernel = 1;
  o.stride = 1;
  o.pad = 0;
  o.spectral_norm = spectral_norm;
  o.in = channels;
  o.out = channels / 8;
  query_ = Conv<T>(reg, name + ".query", o);
  key_ = Conv<T>(reg, name + ".key", o);
  o.out = channels;
  value_ = Conv<T>(reg, name + ".value", o);
  gamma_ = reg.constant(name + ".gamma", {1, 1, 1, 1}, T(0));
}

template <typename T>
ag::Var<T> SelfAttention<T>::attention_map(const ag::Var<T>& x, const ForwardContext& ctx) const {
  require(x.dim(1) == channels_, ErrorCode::ShapeError, "self-attention: channel mismatch");
  const int n = x.dim(0);
  const int hw = x.dim(2) * x.dim(3);
  auto q = ag::reshape(query_(x, ctx), {n, channels_ / 8, hw});
  auto k = ag::reshape(key_(x, ctx), {n, channels_ / 8, hw});
  return ag::softmax_last(ag::bmm(q, k, true, false));
}

template <typename T>
ag::Var<T> SelfAttention<T>::operator()(const ag::Var<T>& x, const ForwardContext& ctx) const {
  const int n = x.dim(0);
  const int hw = x.dim(2) * x.dim(3);
  auto attn = attention_map(x, ctx);
  auto v = ag::reshape(value_(x, ctx), {n, channels_, hw});
  auto attended = ag::reshape(ag::bmm(v, attn, false, true), x.shape());
  return ag::add(x, ag::mul(attended, gamma_));
}

template <typename T>
Cbam<T>::Cbam(ParamRegistry<T>& reg, const std::string& name, int channels, bool spectral_norm,
              int reduction, int spatial_kernel) {
  require(channels >= 2, ErrorCode::ShapeError, "CBAM needs at least 2 channels");
  typename Conv<T>::Options o;
  o.kernel = 1;
  o.stride = 1;
  o.pad = 0;
  o.spectral_norm = spectral_norm;
  o.in = channels;
  o.out = std::max(1, channels / reduction);
  mlp_in_ = Conv<T>(reg, name + ".mlp_in", o);
  o.in = o.out;
  o.out = channels;
  mlp_out_ = Conv<T>(reg, name + ".mlp_out", o);
  typename Conv<T>::Options s;
  s.in = 2;
  s.out = 1;
  s.kernel = spatial_kernel;
  s.stride = 1;
  s.pad = spatial_kernel / 2;
  s.bias = false;
  s.spectral_norm = spectral_norm;
  spatial_ = Conv<T>(reg, name + ".spatial", s);
}

template <typename T>
ag::Var<T> Cbam<T>::channel_map(const ag::Var<T>& x, const ForwardContext& ctx) const {
  auto mlp = [&](const ag::Var<T>& pooled) { return mlp_out_(ag::relu(mlp_in_(pooled, ctx)), ctx); };
  return ag::sigmoid(ag::add(mlp(ag::mean_spatial(x)), mlp(ag::max_spatial(x))));
}

template <typename T>
ag::Var<T> Cbam<T>::spatial_map(const ag::Var<T>& refined, const ForwardContext& ctx) const {
  auto pooled = ag::concat_channels(ag::mean_channels(refined), ag::max_channels(refined));
  return ag::sigmoid(spatial_(pooled, ctx));
}

template <typename T>
ag::Var<T> cbam_refine(const ag::Var<T>& features, const ag::Var<T>& channel_map,
                       const ag::Var<T>& spatial_map_of_refined) {
  return ag::mul(ag::mul(features, channel_map), spatial_map_of_refined);
}

template <typename T>
ag::Var<T> Cbam<T>::operator()(const ag::Var<T>& x, const ForwardContext& ctx) const {
  auto refined = ag::mul(x, channel_map(x, ctx));
  return ag::mul(refined, spatial_map(refined, ctx));
}

#define WC_INSTANTIATE(T)                                                                   \
  template struct SpectralNormState<T>;                                                     \
  template class ParamRegistry<T>;                                                          \
  template class Conv<T>;                                                                   \
  template class ConvTranspose<T>;                                                          \
  template class SelfAttention<T>;                                                          \
  template class Cbam<T>;                                                                   \
  template ag::Var<T> cbam_refine<T>(const ag::Var<T>&, const ag::Var<T>&, const ag::Var<T>&); \
  template Tensor<T> coord_tensor<T>(int, int, int);

WC_INSTANTIATE(float)
WC_INSTANTIATE(double)
#undef WC_INSTANTIATE

}  // namespace wc
