#include "windcomfort/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "windcomfort/rng.hpp"

namespace wc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'W', 'G', 'C', 'K'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}

  std::uint64_t uint(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    require(pos_ + n <= b_.size(), ErrorCode::CorruptCheckpoint, "checkpoint is truncated");
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

json int_list(const std::vector<int>& v) { return json(v); }

}  // namespace

json spec_to_json(const GeneratorSpec& s) {
  return {{"family", to_string(s.family)},
          {"in_channels", s.in_channels},
          {"out_channels", s.out_channels},
          {"base_filters", s.base_filters},
          {"depth", s.depth},
          {"dropout_p", s.dropout_p},
          {"attention", to_string(s.attention)},
          {"attention_placement", int_list(s.attention_placement)},
          {"coordconv_first", s.coordconv_first},
          {"sdf_channel", s.sdf_channel}};
}

GeneratorSpec generator_spec_from_json(const json& j) {
  GeneratorSpec s;
  s.family = parse_generator_family(j.at("family").get<std::string>());
  s.in_channels = j.at("in_channels").get<int>();
  s.out_channels = j.at("out_channels").get<int>();
  s.base_filters = j.at("base_filters").get<int>();
  s.depth = j.at("depth").get<int>();
  s.dropout_p = j.at("dropout_p").get<double>();
  s.attention = parse_attention(j.at("attention").get<std::string>());
  s.attention_placement = j.at("attention_placement").get<std::vector<int>>();
  s.coordconv_first = j.at("coordconv_first").get<bool>();
  s.sdf_channel = j.at("sdf_channel").get<bool>();
  return s;
}

json spec_to_json(const DiscriminatorSpec& s) {
  return {{"in_channels", s.in_channels},
          {"base_filters", s.base_filters},
          {"n_layers", s.n_layers},
          {"spectral_norm", s.spectral_norm},
          {"attention", to_string(s.attention)},
          {"attention_placement", int_list(s.attention_placement)},
          {"coordconv_first", s.coordconv_first}};
}

DiscriminatorSpec discriminator_spec_from_json(const json& j) {
  DiscriminatorSpec s;
  s.in_channels = j.at("in_channels").get<int>();
  s.base_filters = j.at("base_filters").get<int>();
  s.n_layers = j.at("n_layers").get<int>();
  s.spectral_norm = j.at("spectral_norm").get<bool>();
  s.attention = parse_attention(j.at("attention").get<std::string>());
  s.attention_placement = j.at("attention_placement").get<std::vector<int>>();
  s.coordconv_first = j.at("coordconv_first").get<bool>();
  return s;
}

json ModelHeader::to_json() const {
  json j{{"arch", arch},
         {"generator", spec_to_json(generator)},
         {"epoch", epoch},
         {"normalization", {{"v_max", norm.v_max}, {"h_max", norm.h_max}}},
         {"v_ref", v_ref},
         {"size", size},
         {"extent_m", extent_m},
         {"family", family},
         {"seed", seed},
         {"extra", extra}};
  if (discriminator) j["discriminator"] = spec_to_json(*discriminator);
  return j;
}

ModelHeader ModelHeader::from_json(const json& j) {
  ModelHeader h;
  h.arch = j.at("arch").get<std::string>();
  h.generator = generator_spec_from_json(j.at("generator"));
  if (j.contains("discriminator")) h.discriminator = discriminator_spec_from_json(j.at("discriminator"));
  h.epoch = j.at("epoch").get<int>();
  h.norm.v_max = j.at("normalization").at("v_max").get<double>();
  h.norm.h_max = j.at("normalization").at("h_max").get<double>();
  h.v_ref = j.at("v_ref").get<double>();
  h.size = j.at("size").get<int>();
  h.extent_m = j.value("extent_m", 100.0);
  h.family = j.at("family").get<std::string>();
  h.seed = j.at("seed").get<std::uint64_t>();
  h.extra = j.value("extra", json::object());
  return h;
}

std::string ModelHeader::spec_hash() const {
  json j{{"arch", arch}, {"generator", spec_to_json(generator)}};
  if (discriminator) j["discriminator"] = spec_to_json(*discriminator);
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::pair<std::string, Network<float>*>> Model::networks() const {
  std::vector<std::pair<std::string, Network<float>*>> out;
  if (G) out.emplace_back("G", G.get());
  if (header.arch == "cyclegan") {
    if (F) out.emplace_back("F", F.get());
    if (D) out.emplace_back("D_Y", D.get());
    if (D_X) out.emplace_back("D_X", D_X.get());
  } else if (D) {
    out.emplace_back("D", D.get());
  }
  return out;
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, net] : networks()) n += net->param_count();
  return n;
}

void Model::set_training(bool on) {
  for (const auto& [name, net] : networks()) net->set_training(on);
}

DiscriminatorSpec cyclegan_dx_spec(const ModelHeader& h) {
  DiscriminatorSpec d = h.discriminator.value_or(DiscriminatorSpec{});
  d.in_channels = h.generator.input_channels();
  return d;
}

GeneratorSpec cyclegan_f_spec(const ModelHeader& h) {
  GeneratorSpec f = h.generator;
  f.in_channels = h.generator.out_channels;
  f.out_channels = h.generator.input_channels();
  f.sdf_channel = false;
  return f;
}

Model build_model(const ModelHeader& header) {
  Model m;
  m.header = header;
  const std::uint64_t s = header.seed;
  m.G = build_generator<float>(header.generator, derive_seed(s, "init/G"));
  if (header.arch == "pix2pix") {
    require(header.discriminator.has_value(), ErrorCode::SpecMismatch, "pix2pix needs a discriminator spec");
    m.D = build_discriminator<float>(*header.discriminator, derive_seed(s, "init/D"));
  } else if (header.arch == "cyclegan") {
    require(header.discriminator.has_value(), ErrorCode::SpecMismatch, "cyclegan needs a discriminator spec");
    m.F = build_generator<float>(cyclegan_f_spec(header), derive_seed(s, "init/F"));
    m.D = build_discriminator<float>(*header.discriminator, derive_seed(s, "init/D_Y"));
    m.D_X = build_discriminator<float>(cyclegan_dx_spec(header), derive_seed(s, "init/D_X"));
  } else {
    require(header.arch == "unet", ErrorCode::SpecMismatch, "unknown architecture '" + header.arch + "'");
    require(!header.discriminator.has_value(), ErrorCode::SpecMismatch, "unet has no discriminator");
  }
  for (const auto& [name, net] : m.networks()) net->seed_runtime(derive_seed(s, "runtime/" + name));
  return m;
}

std::vector<std::uint8_t> checkpoint_bytes(const Model& model) {
  json header = model.header.to_json();
  json sn = json::array();
  std::uint32_t count = 0;
  for (const auto& [name, net] : model.networks()) {
    count += static_cast<std::uint32_t>(net->parameters().size());
    for (const auto& st : net->spectral_states()) {
      sn.push_back({{"name", name + "." + st->name},
                    {"u", std::vector<double>(st->u.begin(), st->u.end())},
                    {"v", std::vector<double>(st->v.begin(), st->v.end())},
                    {"sigma", static_cast<double>(st->last_sigma)}});
    }
  }
  header["spectral_norm"] = sn;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  put_u32(out, count);
  for (const auto& [name, net] : model.networks()) {
    for (const auto& p : net->parameters()) {
      const std::string full = name + "." + p.name;
      put_u32(out, static_cast<std::uint32_t>(full.size()));
      out.insert(out.end(), full.begin(), full.end());
      const auto& data = p.var.value().data;
      put_u64(out, data.size());
      for (float f : data) put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
  }
  return out;
}

void save_checkpoint(const fs::path& path, const Model& model) {
  const auto bytes = checkpoint_bytes(model);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::Io, "cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(f.good(), ErrorCode::Io, "short write to " + path.string());
}

Model checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= 8 && std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorCode::CorruptCheckpoint,
          "bad checkpoint magic");
  Reader rd(bytes);
  rd.str(4);
  const auto hlen = static_cast<std::size_t>(rd.uint(4));
  json header;
  ModelHeader mh;
  try {
    header = json::parse(rd.str(hlen));
    mh = ModelHeader::from_json(header);
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptCheckpoint, std::string("checkpoint header: ") + e.what());
  }
  Model m;
  try {
    m = build_model(mh);
  } catch (const Error& e) {
    fail(ErrorCode::SpecMismatch, std::string("checkpoint spec cannot be built: ") + e.what());
  }

  std::map<std::string, ag::Var<float>> params;
  std::map<std::string, SpectralNormState<float>*> states;
  for (const auto& [name, net] : m.networks()) {
    for (const auto& p : net->parameters()) params[name + "." + p.name] = p.var;
    for (auto& st : net->spectral_states()) states[name + "." + st->name] = st.get();
  }
  const auto count = rd.uint(4);
  require(count == params.size(), ErrorCode::SpecMismatch,
          "checkpoint holds " + std::to_string(count) + " tensors, spec expects " + std::to_string(params.size()));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = rd.str(static_cast<std::size_t>(rd.uint(4)));
    const auto n = rd.uint(8);
    auto it = params.find(name);
    require(it != params.end(), ErrorCode::SpecMismatch, "unexpected tensor '" + name + "'");
    auto& data = it->second.value().data;
    require(n == data.size(), ErrorCode::SpecMismatch, "tensor '" + name + "' has the wrong size");
    rd.need(4 * n);
    for (auto& f : data) f = std::bit_cast<float>(static_cast<std::uint32_t>(rd.uint(4)));
  }
  require(rd.done(), ErrorCode::CorruptCheckpoint, "trailing bytes after checkpoint tensors");
  try {
    for (const auto& s : header.at("spectral_norm")) {
      auto it = states.find(s.at("name").get<std::string>());
      require(it != states.end(), ErrorCode::SpecMismatch, "unexpected spectral-norm state");
      auto u = s.at("u").get<std::vector<double>>();
      auto v = s.at("v").get<std::vector<double>>();
      require(u.size() == it->second->u.size(), ErrorCode::SpecMismatch, "spectral-norm u has the wrong size");
      it->second->u.assign(u.begin(), u.end());
      it->second->v.assign(v.begin(), v.end());
      it->second->last_sigma = static_cast<float>(s.at("sigma").get<double>());
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptCheckpoint, std::string("spectral-norm state: ") + e.what());
  }
  m.set_training(false);
  return m;
}

Model load_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::CorruptCheckpoint, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return checkpoint_from_bytes(bytes);
}

Model load_checkpoint(const fs::path& path, const ModelHeader& expected) {
  Model m = load_checkpoint(path);
  require(m.header.spec_hash() == expected.spec_hash(), ErrorCode::SpecMismatch,
          "checkpoint architecture differs from the expected spec");
  return m;
}

Tensor<float> model_input(const Model& model, const FieldGrid& geometry) {
  const GeneratorSpec& g = model.header.generator;
  require(geometry.channels() == g.in_channels, ErrorCode::ShapeMismatch,
          "model expects " + std::to_string(g.in_channels) + " geometry channels, got " +
              std::to_string(geometry.channels()));
  return pack_geometry(geometry, model.header.norm, g.sdf_channel);
}

Tensor<float> generator_forward(const Model& model, const Tensor<float>& x) {
  ag::NoGradGuard guard;
  const bool was_training = model.G->training();
  if (was_training) model.G->set_training(false);
  Tensor<float> out = model.G->forward(ag::Var<float>(x)).value();
  if (was_training) model.G->set_training(true);
  return out;
}

FieldGrid predict_flow(const Model& model, const FieldGrid& geometry) {
  FieldGrid out = unpack_flow(generator_forward(model, model_input(model, geometry)), model.header.norm,
                              geometry.extent_m);
  for (float& v : out.values) v = std::max(v, 0.0f);
  return out;
}

}  // namespace wc
