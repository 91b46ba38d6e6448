#include "windcomfort/nets.hpp"

#include <algorithm>

#include "windcomfort/rng.hpp"

namespace wc {

std::string to_string(GeneratorFamily f) { return f == GeneratorFamily::UNet ? "unet" : "resnet9"; }

std::string to_string(AttentionKind a) {
  switch (a) {
    case AttentionKind::None: return "none";
    case AttentionKind::Self: return "self";
    case AttentionKind::Cbam: return "cbam";
  }
  return "none";
}

GeneratorFamily parse_generator_family(const std::string& s) {
  if (s == "unet") return GeneratorFamily::UNet;
  if (s == "resnet9") return GeneratorFamily::ResNet9;
  fail(ErrorCode::InvalidArgument, "unknown generator family '" + s + "'");
}

AttentionKind parse_attention(const std::string& s) {
  if (s == "none") return AttentionKind::None;
  if (s == "self") return AttentionKind::Self;
  if (s == "cbam") return AttentionKind::Cbam;
  fail(ErrorCode::InvalidArgument, "unknown attention kind '" + s + "'");
}

void GeneratorSpec::validate() const {
  require(in_channels >= 1 && out_channels >= 1 && base_filters >= 1, ErrorCode::InvalidArgument,
          "generator channel counts must be positive");
  require(dropout_p >= 0.0 && dropout_p < 1.0, ErrorCode::InvalidArgument,
          "dropout_p must lie in [0, 1)");
  if (family == GeneratorFamily::UNet) {
    require(depth >= 2 && depth <= 10, ErrorCode::InvalidArgument, "unet depth must be in [2, 10]");
  }
  if (attention != AttentionKind::None) {
    const int blocks = family == GeneratorFamily::UNet ? depth - 1 : 2;
    for (int b : attention_placement) {
      require(b >= 1 && b <= blocks, ErrorCode::InvalidArgument,
              "attention placement " + std::to_string(b) + " outside decoder blocks 1.." +
                  std::to_string(blocks));
    }
  }
}

void DiscriminatorSpec::validate() const {
  require(in_channels >= 1 && base_filters >= 1, ErrorCode::InvalidArgument,
          "discriminator channel counts must be positive");
  require(n_layers >= 3, ErrorCode::InvalidArgument, "discriminator needs at least 3 layers");
  if (attention != AttentionKind::None) {
    for (int b : attention_placement) {
      require(b >= 1 && b <= n_layers - 1, ErrorCode::InvalidArgument,
              "discriminator attention placement out of range");
    }
  }
}

int patch_grid_size(const DiscriminatorSpec& spec, int input_side) {
  int s = input_side;
  for (int i = 0; i < spec.n_layers - 2; ++i) s = (s + 2 - 4) / 2 + 1;
  return s - 2;
}

template <typename T>
Network<T>::Network(std::uint64_t seed)
    : reg_(seed), dropout_rng_(derive_seed(seed, "dropout")), sn_rng_(derive_seed(seed, "sn")) {}

template <typename T>
std::vector<ag::Var<T>> Network<T>::parameter_vars() const {
  std::vector<ag::Var<T>> out;
  for (const auto& p : reg_.params()) out.push_back(p.var);
  return out;
}

template <typename T>
std::size_t Network<T>::param_count() const {
  std::size_t n = 0;
  for (const auto& p : reg_.params()) n += p.var.value().numel();
  return n;
}

template <typename T>
void Network<T>::set_requires_grad(bool on) {
  for (const auto& p : reg_.params()) {
    ag::Var<T> v = p.var;
    v.set_requires_grad(on);
  }
}

template <typename T>
void Network<T>::zero_grad() {
  for (const auto& p : reg_.params()) {
    ag::Var<T> v = p.var;
    v.zero_grad();
  }
}

template <typename T>
void Network<T>::seed_runtime(std::uint64_t seed) {
  dropout_rng_.seed(derive_seed(seed, "dropout"));
  sn_rng_.seed(derive_seed(seed, "sn"));
}

namespace {

template <typename T>
class AttentionSlot {
 public:
  AttentionSlot() = default;
  AttentionSlot(ParamRegistry<T>& reg, const std::string& name, AttentionKind kind, int channels,
                bool spectral_norm)
      : kind_(kind) {
    if (kind == AttentionKind::Self) self_ = SelfAttention<T>(reg, name, channels, spectral_norm);
    if (kind == AttentionKind::Cbam) cbam_ = Cbam<T>(reg, name, channels, spectral_norm);
  }

  ag::Var<T> operator()(const ag::Var<T>& x, const ForwardContext& ctx) const {
    switch (kind_) {
      case AttentionKind::Self: return self_(x, ctx);
      case AttentionKind::Cbam: return cbam_(x, ctx);
      case AttentionKind::None: break;
    }
    return x;
  }

 private:
  AttentionKind kind_ = AttentionKind::None;
  SelfAttention<T> self_;
  Cbam<T> cbam_;
};

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

constexpr double kLeakySlope = 0.2;
constexpr int kDropoutBlocks = 3;

// Encoder i halves the resolution; decoder j mirrors it, with skip concatenation
// between encoder j-1 and decoder j.
template <typename T>
class UNetGenerator final : public Network<T> {
 public:
  UNetGenerator(const GeneratorSpec& spec, std::uint64_t seed) : Network<T>(seed), spec_(spec) {
    const int d = spec.depth;
    const int f = spec.base_filters;
    widths_.resize(d);
    for (int i = 0; i < d; ++i) widths_[i] = std::min(f << i, 8 * f);
    auto& reg = this->reg_;
    for (int i = 0; i < d; ++i) {
      typename Conv<T>::Options o;
      o.in = i == 0 ? spec.input_channels() : widths_[i - 1];
      o.out = widths_[i];
      o.coordconv = i == 0 && spec.coordconv_first;
      down_.emplace_back(reg, "down." + std::to_string(i), o);
    }
    up_.resize(d);
    attention_.resize(d);
    for (int j = d - 1; j >= 0; --j) {
      typename ConvTranspose<T>::Options o;
      o.in = j == d - 1 ? widths_[j] : 2 * widths_[j];
      o.out = j == 0 ? spec.out_channels : widths_[j - 1];
      up_[j] = ConvTranspose<T>(reg, "up." + std::to_string(j), o);
      const int block = d - j;
      if (j > 0 && spec.attention != AttentionKind::None && contains(spec.attention_placement, block)) {
        attention_[j] = AttentionSlot<T>(reg, "up." + std::to_string(j) + ".attn", spec.attention,
                                         widths_[j - 1], false);
      }
    }
  }

  ag::Var<T> forward(const ag::Var<T>& x) override {
    const int d = spec_.depth;
    require(x.shape().size() == 4 && x.dim(1) == spec_.input_channels(), ErrorCode::ShapeError,
            "unet: expected [N," + std::to_string(spec_.input_channels()) + ",H,W], got " +
                shape_str(x.shape()));
    require(x.dim(2) % (1 << d) == 0 && x.dim(3) % (1 << d) == 0, ErrorCode::ShapeError,
            "unet: input " + shape_str(x.shape()) + " not divisible by 2^" + std::to_string(d));
    const ForwardContext ctx = this->context();
    const T slope = static_cast<T>(kLeakySlope);
    std::vector<ag::Var<T>> skips(d);
    ag::Var<T> h = down_[0](x, ctx);
    skips[0] = h;
    for (int i = 1; i < d; ++i) {
      h = down_[i](ag::leaky_relu(h, slope), ctx);
      if (i != d - 1) h = ag::instance_norm(h);
      skips[i] = h;
    }
    for (int j = d - 1; j >= 1; --j) {
      h = ag::instance_norm(up_[j](ag::relu(h)));
      const int block = d - j;
      if (ctx.training && block <= kDropoutBlocks && spec_.dropout_p > 0.0) {
        h = ag::dropout(h, static_cast<T>(spec_.dropout_p), *ctx.dropout_rng);
      }
      h = attention_[j](h, ctx);
      h = ag::concat_channels(skips[j - 1], h);
    }
    return ag::tanh(up_[0](ag::relu(h)));
  }

 private:
  GeneratorSpec spec_;
  std::vector<int> widths_;
  std::vector<Conv<T>> down_;
  std::vector<ConvTranspose<T>> up_;
  std::vector<AttentionSlot<T>> attention_;
};

template <typename T>
class ResnetGenerator final : public Network<T> {
 public:
  static constexpr int kBlocks = 9;

  ResnetGenerator(const GeneratorSpec& spec, std::uint64_t seed) : Network<T>(seed), spec_(spec) {
    auto& reg = this->reg_;
    const int f = spec.base_filters;
    typename Conv<T>::Options o;
    o.in = spec.input_channels();
    o.out = f;
    o.kernel = 7;
    o.stride = 1;
    o.pad = 0;
    o.reflect_pad = 3;
    o.coordconv = spec.coordconv_first;
    stem_ = Conv<T>(reg, "stem", o);
    for (int i = 0; i < 2; ++i) {
      typename Conv<T>::Options d;
      d.in = f << i;
      d.out = f << (i + 1);
      d.kernel = 3;
      d.stride = 2;
      d.pad = 1;
      down_.emplace_back(reg, "down." + std::to_string(i), d);
    }
    for (int b = 0; b < kBlocks; ++b) {
      typename Conv<T>::Options r;
      r.in = r.out = 4 * f;
      r.kernel = 3;
      r.stride = 1;
      r.pad = 0;
      r.reflect_pad = 1;
      res_.emplace_back(reg, "res." + std::to_string(b) + ".conv1", r);
      res_.emplace_back(reg, "res." + std::to_string(b) + ".conv2", r);
    }
    for (int i = 0; i < 2; ++i) {
      typename ConvTranspose<T>::Options u;
      u.in = (4 * f) >> i;
      u.out = (2 * f) >> i;
      u.kernel = 3;
      u.stride = 2;
      u.pad = 1;
      u.out_pad = 1;
      up_.emplace_back(reg, "up." + std::to_string(i), u);
      AttentionSlot<T> slot;
      if (spec.attention != AttentionKind::None && contains(spec.attention_placement, i + 1)) {
        slot = AttentionSlot<T>(reg, "up." + std::to_string(i) + ".attn", spec.attention, u.out, false);
      }
      attention_.push_back(std::move(slot));
    }
    typename Conv<T>::Options h;
    h.in = f;
    h.out = spec.out_channels;
    h.kernel = 7;
    h.stride = 1;
    h.pad = 0;
    h.reflect_pad = 3;
    head_ = Conv<T>(reg, "head", h);
  }

  ag::Var<T> forward(const ag::Var<T>& x) override {
    require(x.shape().size() == 4 && x.dim(1) == spec_.input_channels(), ErrorCode::ShapeError,
            "resnet9: unexpected input " + shape_str(x.shape()));
    require(x.dim(2) % 4 == 0 && x.dim(3) % 4 == 0 && x.dim(2) >= 8, ErrorCode::ShapeError,
            "resnet9: input side must be a multiple of 4 and >= 8");
    const ForwardContext ctx = this->context();
    ag::Var<T> h = ag::relu(ag::instance_norm(stem_(x, ctx)));
    for (const auto& d : down_) h = ag::relu(ag::instance_norm(d(h, ctx)));
    for (int b = 0; b < kBlocks; ++b) {
      ag::Var<T> r = ag::relu(ag::instance_norm(res_[2 * b](h, ctx)));
      r = ag::instance_norm(res_[2 * b + 1](r, ctx));
      h = ag::add(h, r);
    }
    for (std::size_t i = 0; i < up_.size(); ++i) {
      h = ag::relu(ag::instance_norm(up_[i](h)));
      h = attention_[i](h, ctx);
    }
    return ag::tanh(head_(h, ctx));
  }

 private:
  GeneratorSpec spec_;
  Conv<T> stem_;
  std::vector<Conv<T>> down_;
  std::vector<Conv<T>> res_;
  std::vector<ConvTranspose<T>> up_;
  std::vector<AttentionSlot<T>> attention_;
  Conv<T> head_;
};

template <typename T>
class PatchDiscriminator final : public Network<T> {
 public:
  PatchDiscriminator(const DiscriminatorSpec& spec, std::uint64_t seed)
      : Network<T>(seed), spec_(spec) {
    auto& reg = this->reg_;
    const int f = spec.base_filters;
    const int layers = spec.n_layers;
    int prev = spec.in_channels;
    for (int l = 0; l < layers; ++l) {
      typename Conv<T>::Options o;
      o.in = prev;
      o.stride = l < layers - 2 ? 2 : 1;
      o.out = l == layers - 1 ? 1 : std::min(f << l, 8 * f);
      o.coordconv = l == 0 && spec.coordconv_first;
      o.spectral_norm = spec.spectral_norm;
      convs_.emplace_back(reg, "conv." + std::to_string(l), o);
      const int block = l + 1;
      AttentionSlot<T> slot;
      if (l < layers - 1 && spec.attention != AttentionKind::None &&
          contains(spec.attention_placement, block)) {
        slot = AttentionSlot<T>(reg, "conv." + std::to_string(l) + ".attn", spec.attention, o.out,
                                spec.spectral_norm);
      }
      attention_.push_back(std::move(slot));
      prev = o.out;
    }
  }

  ag::Var<T> forward(const ag::Var<T>& x) override {
    require(x.shape().size() == 4 && x.dim(1) == spec_.in_channels, ErrorCode::ShapeError,
            "patchgan: expected " + std::to_string(spec_.in_channels) + " input channels, got " +
                shape_str(x.shape()));
    require(patch_grid_size(spec_, std::min(x.dim(2), x.dim(3))) >= 1, ErrorCode::ShapeError,
            "patchgan: input " + shape_str(x.shape()) + " too small for " +
                std::to_string(spec_.n_layers) + " layers");
    const ForwardContext ctx = this->context();
    const T slope = static_cast<T>(kLeakySlope);
    const int layers = spec_.n_layers;
    ag::Var<T> h = x;
    for (int l = 0; l < layers; ++l) {
      h = convs_[l](h, ctx);
      if (l == layers - 1) break;
      if (l > 0) h = ag::instance_norm(h);
      h = ag::leaky_relu(h, slope);
      h = attention_[l](h, ctx);
    }
    return h;
  }

 private:
  DiscriminatorSpec spec_;
  std::vector<Conv<T>> convs_;
  std::vector<AttentionSlot<T>> attention_;
};

}  // namespace

template <typename T>
std::unique_ptr<Network<T>> build_generator(const GeneratorSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.family == GeneratorFamily::UNet) return std::make_unique<UNetGenerator<T>>(spec, seed);
  return std::make_unique<ResnetGenerator<T>>(spec, seed);
}

template <typename T>
std::unique_ptr<Network<T>> build_discriminator(const DiscriminatorSpec& spec,
                                                std::uint64_t seed) {
  spec.validate();
  return std::make_unique<PatchDiscriminator<T>>(spec, seed);
}

template class Network<float>;
template class Network<double>;
template std::unique_ptr<Network<float>> build_generator<float>(const GeneratorSpec&, std::uint64_t);
template std::unique_ptr<Network<double>> build_generator<double>(const GeneratorSpec&,
                                                                  std::uint64_t);
template std::unique_ptr<Network<float>> build_discriminator<float>(const DiscriminatorSpec&,
                                                                    std::uint64_t);
template std::unique_ptr<Network<double>> build_discriminator<double>(const DiscriminatorSpec&,
                                                                      std::uint64_t);

}  // namespace wc
