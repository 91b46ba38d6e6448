#include "windcomfort/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "windcomfort/comfort.hpp"
#include "windcomfort/eval.hpp"
#include "windcomfort/floworacle.hpp"
#include "windcomfort/image.hpp"
#include "windcomfort/rng.hpp"
#include "windcomfort/serve.hpp"
#include "windcomfort/train.hpp"

namespace wc {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f.good()) throw UsageError("cannot read " + p.string());
  json j = json::parse(f, nullptr, false);
  if (j.is_discarded()) throw UsageError(p.string() + " is not valid JSON");
  return j;
}

// Refuses to reuse a non-empty output location unless forced.
void claim_output(const fs::path& p, bool force) {
  if (p.empty()) throw UsageError("--out is required");
  const bool taken = fs::exists(p) && (!fs::is_directory(p) || !fs::is_empty(p));
  if (taken && !force) throw UsageError(p.string() + " already exists; pass --force to overwrite");
}

void claim_file(const fs::path& p, bool force) {
  if (fs::exists(p) && !force) throw UsageError(p.string() + " already exists; pass --force to overwrite");
}

struct Common {
  bool json_out = false;
  bool force = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_flag("--json", c.json_out, "Print one JSON document to stdout");
  app->add_flag("--force", c.force, "Overwrite existing outputs");
}

struct GenDataArgs {
  Common common;
  std::string family = "single";
  int count = 64;
  std::uint64_t seed = 0;
  int size = 256;
  int grid = 0;
  int n_bins = 20;
  double train_fraction = 0.8;
  bool no_previews = false;
  std::string out;
};

struct TrainArgs {
  Common common;
  std::string arch = "unet";
  std::string data;
  bool sn = false;
  bool sdf = false;
  bool coordconv = false;
  std::string attention = "none";
  std::string att_place = "G";
  std::string generator = "unet";
  std::uint64_t seed = 0;
  std::string out;
  int epochs = 70;
  int decay_epochs = -1;
  double lr = 2e-4;
  int batch_size = 1;
  int base_filters = 64;
  int depth = 0;
  int disc_layers = 5;
  int disc_filters = 64;
  long max_steps = 0;
  int eval_every = 1;
  int checkpoint_every = 0;
  int pool_size = 50;
};

struct EvalArgs {
  Common common;
  std::vector<std::string> checkpoints;
  std::string data;
  std::string split = "test";
  std::string out;
};

struct AblateArgs {
  TrainArgs base;
  std::string table = "sn";
  int seeds = 3;
  int jobs = 1;
};

struct PredictArgs {
  Common common;
  std::string checkpoint;
  std::string scene;
  std::string geometry;
  std::string sector = "W";
  int size = 0;
  std::string out;
};

struct ComfortArgs {
  Common common;
  std::string checkpoint;
  std::string scene;
  std::string geometry;
  std::string windrose;
  std::string criteria;
  int size = 0;
  std::string out;
};

struct ServeArgs {
  std::string config;
  std::string host;
  int port = -1;
};

void add_train_options(CLI::App* app, TrainArgs& a, bool with_out) {
  app->add_option("--arch", a.arch, "pix2pix | cyclegan | unet")->check(CLI::IsMember({"pix2pix", "cyclegan", "unet"}));
  app->add_option("--data", a.data, "Dataset directory")->required();
  app->add_flag("--sn", a.sn, "Spectral normalisation in the discriminator(s)");
  app->add_flag("--sdf", a.sdf, "Append the signed-distance channel to the generator input");
  app->add_flag("--coordconv", a.coordconv, "CoordConv first layers");
  app->add_option("--attention", a.attention, "none | self | cbam")->check(CLI::IsMember({"none", "self", "cbam"}));
  app->add_option("--att-place", a.att_place, "G | D | both")->check(CLI::IsMember({"G", "D", "both"}));
  app->add_option("--generator", a.generator, "unet | resnet9")->check(CLI::IsMember({"unet", "resnet9"}));
  app->add_option("--seed", a.seed, "Root seed");
  if (with_out) app->add_option("--out", a.out, "Run directory")->required();
  app->add_option("--epochs", a.epochs, "Training epochs");
  app->add_option("--decay-epochs", a.decay_epochs, "Epochs of linear decay at the end (default: 20/70 of epochs)");
  app->add_option("--lr", a.lr, "Initial learning rate");
  app->add_option("--batch-size", a.batch_size, "Batch size");
  app->add_option("--base-filters", a.base_filters, "Generator base filters");
  app->add_option("--depth", a.depth, "U-Net depth (default: log2 of the raster size)");
  app->add_option("--disc-layers", a.disc_layers, "Discriminator conv layers");
  app->add_option("--disc-filters", a.disc_filters, "Discriminator base filters");
  app->add_option("--max-steps", a.max_steps, "Stop after this many generator updates");
  app->add_option("--eval-every", a.eval_every, "Validation cadence in epochs (0: off)");
  app->add_option("--checkpoint-every", a.checkpoint_every, "Extra checkpoint cadence in epochs");
  app->add_option("--pool-size", a.pool_size, "CycleGAN image pool size");
}

int log2_exact(int n) {
  int d = 0;
  while ((1 << (d + 1)) <= n) ++d;
  return d;
}

std::vector<int> fit_placement(std::vector<int> wanted, int blocks) {
  std::vector<int> out;
  for (int b : wanted) {
    if (b >= 1 && b <= blocks) out.push_back(b);
  }
  if (out.empty()) {
    if (blocks >= 2) out.push_back(blocks - 1);
    out.push_back(blocks);
  }
  return out;
}

struct Specs {
  GeneratorSpec gen;
  std::optional<DiscriminatorSpec> disc;
  TrainConfig cfg;
};

Specs compose_specs(const TrainArgs& a, int raster_size) {
  if (a.arch == "unet") {
    if (a.sn) throw UsageError("--sn applies to discriminators; the unet architecture has none");
    if (a.attention != "none" && a.att_place != "G") throw UsageError("unet has no discriminator for --att-place " + a.att_place);
  }
  Specs s;
  s.gen.family = parse_generator_family(a.generator);
  s.gen.base_filters = a.base_filters;
  s.gen.depth = a.depth > 0 ? a.depth : std::min(8, log2_exact(raster_size));
  s.gen.sdf_channel = a.sdf;
  s.gen.coordconv_first = a.coordconv;
  const AttentionKind att = parse_attention(a.attention);
  if (a.att_place == "G" || a.att_place == "both") {
    s.gen.attention = att;
    const int blocks = s.gen.family == GeneratorFamily::UNet ? s.gen.depth - 1 : 2;
    s.gen.attention_placement = fit_placement(s.gen.attention_placement, blocks);
  }
  if (a.arch != "unet") {
    DiscriminatorSpec d;
    d.base_filters = a.disc_filters;
    d.n_layers = a.disc_layers;
    d.spectral_norm = a.sn;
    d.coordconv_first = a.coordconv;
    if (a.att_place == "D" || a.att_place == "both") {
      d.attention = att;
      d.attention_placement = fit_placement(d.attention_placement, d.n_layers - 1);
    }
    s.disc = d;
  }
  TrainConfig& c = s.cfg;
  c.lr = a.lr;
  c.epochs = a.epochs;
  c.decay_epochs = a.decay_epochs >= 0 ? a.decay_epochs : (a.epochs * 20) / 70;
  c.batch_size = a.batch_size;
  c.seed = a.seed;
  c.max_steps = a.max_steps;
  c.eval_every = a.eval_every;
  c.checkpoint_every = a.checkpoint_every;
  c.pool_size = a.pool_size;
  c.validate();
  s.gen.validate();
  if (s.disc) s.disc->validate();
  return s;
}

TrainResult dispatch_train(const std::string& arch, const TrainData& data, const Specs& s) {
  if (arch == "pix2pix") return train_pix2pix(data, s.gen, *s.disc, s.cfg);
  if (arch == "cyclegan") return train_cyclegan(data, s.gen, *s.disc, s.cfg);
  return train_unet(data, s.gen, s.cfg);
}

json train_summary(const TrainResult& r, const fs::path& out) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"lr", e.lr},
                      {"train_l1", e.train_l1},
                      {"val_mae", e.val_mae ? json(*e.val_mae) : json(nullptr)}});
  }
  char sum[17];
  std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(weight_checksum(r.model)));
  return {{"arch", r.model.header.arch},
          {"spec_hash", r.model.header.spec_hash()},
          {"parameters", r.model.param_count()},
          {"steps", r.steps},
          {"updates", {{"G", r.updates.G}, {"D", r.updates.D}, {"F", r.updates.F}, {"D_X", r.updates.D_X}}},
          {"last_losses", r.last.to_json()},
          {"weight_checksum", sum},
          {"checkpoint", (out / "checkpoint.wgck").string()},
          {"epochs", epochs}};
}

FieldGrid load_geometry(const std::string& scene, const std::string& geometry, int size, const Model& model) {
  if (!scene.empty() == !geometry.empty()) throw UsageError("give exactly one of --scene or --geometry");
  if (!scene.empty()) {
    const Scene s = scene_from_json(read_json(scene));
    return rasterize(s, size > 0 ? size : model.header.size, model.header.generator.in_channels == 2);
  }
  std::ifstream f(geometry, std::ios::binary);
  if (!f.good()) throw UsageError("cannot read " + geometry);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_wgf(bytes, model.header.extent_m).geometry;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  require(f.good(), ErrorCode::Io, "cannot write " + p.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void emit(std::ostream& out, const Common& c, const json& j, const std::string& human) {
  if (c.json_out) {
    out << j.dump(2) << '\n';
  } else {
    out << human;
  }
}

int cmd_gen_data(const GenDataArgs& a, std::ostream& out, std::ostream& err) {
  FamilySpec spec;
  spec.family = a.family;
  spec.count = a.count;
  spec.seed = a.seed;
  spec.size = a.size;
  spec.n_bins = a.n_bins;
  spec.train_fraction = a.train_fraction;
  try {
    spec.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  claim_output(a.out, a.common.force);
  SolverConfig cfg;
  cfg.grid = a.grid > 0 ? a.grid : std::min(a.size, 128);
  if (!a.common.json_out) err << "generating " << a.count << " " << a.family << " scenes on a " << cfg.grid << " grid\n";
  GeneratedDataset ds = generate(spec, cfg);
  if (a.common.force && fs::exists(a.out)) fs::remove_all(a.out);
  write_dataset(ds.manifest, ds.samples, a.out, !a.no_previews);
  json j = manifest_to_json(ds.manifest);
  j["out"] = a.out;
  std::ostringstream h;
  h << "wrote " << ds.samples.size() << " samples to " << a.out << "\n"
    << "family " << ds.manifest.family << ", size " << ds.manifest.size << ", v_max " << ds.manifest.v_max
    << " m/s, unconverged " << ds.unconverged << ", rejected scenes " << ds.rejected_scenes << "\n";
  emit(out, a.common, j, h.str());
  return 0;
}

TrainData load_train_data(const std::string& dir) {
  auto [manifest, samples] = read_dataset(dir);
  return TrainData::from_dataset(std::move(manifest), std::move(samples));
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const TrainData data = load_train_data(a.data);
  Specs s = compose_specs(a, data.manifest.size);
  claim_output(a.out, a.common.force);
  s.cfg.out_dir = a.out;
  if (!a.common.json_out) err << "training " << a.arch << " on " << data.train.size() << " samples\n";
  const TrainResult r = dispatch_train(a.arch, data, s);
  const json j = train_summary(r, a.out);
  std::ostringstream h;
  h << "trained " << a.arch << " for " << r.steps << " steps; checkpoint " << (fs::path(a.out) / "checkpoint.wgck").string()
    << "\n";
  emit(out, a.common, j, h.str());
  return 0;
}

std::vector<Model> load_models(const std::vector<std::string>& paths) {
  if (paths.empty()) throw UsageError("--checkpoint is required");
  std::vector<Model> models;
  for (const auto& p : paths) models.push_back(load_checkpoint(p));
  return models;
}

std::string metrics_line(const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "mae %.6f  rmse %.6f  mre %.6f  (%zu pixels, %zu below the MRE guard)\n", r.mae,
                r.rmse, r.mre, r.pixels, r.mre_excluded);
  return buf;
}

int cmd_eval(const EvalArgs& a, bool cross, std::ostream& out) {
  auto [manifest, samples] = read_dataset(a.data);
  const auto models = load_models(a.checkpoints);
  if (!a.out.empty()) claim_output(a.out, a.common.force);
  std::vector<const Model*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);
  MetricReport r;
  if (cross) {
    // Same family degenerates to the held-out split; another family is evaluated whole.
    const SplitPart part = ptrs.front()->header.family == manifest.family ? SplitPart::Test : SplitPart::All;
    r = ptrs.size() == 1 ? cross_evaluate(*ptrs[0], manifest, samples) : evaluate(ptrs, manifest, samples, part);
  } else {
    r = ptrs.size() == 1 ? evaluate(*ptrs[0], manifest, samples, parse_split(a.split))
                         : evaluate(ptrs, manifest, samples, parse_split(a.split));
  }
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_metrics_json(fs::path(a.out) / "metrics.json", r);
    write_metrics_csv(fs::path(a.out) / "metrics.csv", r);
  }
  std::string human = metrics_line(r);
  if (cross) human = "source " + r.source_family + " -> target " + r.target_family + ": " + human;
  emit(out, a.common, r.to_json(), human);
  return 0;
}

json ablation_cells(const std::string& table) {
  if (table == "sn") {
    return json::array({{{"name", "pix2pix"}, {"arch", "pix2pix"}},
                        {{"name", "pix2pix+SN"}, {"arch", "pix2pix"}, {"sn", true}}});
  }
  if (table == "positional") {
    return json::array({{{"name", "baseline"}, {"arch", "pix2pix"}},
                        {{"name", "SDF"}, {"arch", "pix2pix"}, {"sdf", true}},
                        {{"name", "CoordConv"}, {"arch", "pix2pix"}, {"coordconv", true}},
                        {{"name", "SDF+CoordConv"}, {"arch", "pix2pix"}, {"sdf", true}, {"coordconv", true}}});
  }
  if (table == "attention") {
    json cells = json::array({{{"name", "none"}, {"arch", "pix2pix"}}});
    for (const std::string kind : {"self", "cbam"}) {
      for (const std::string place : {"G", "D", "both"}) {
        cells.push_back({{"name", kind + "/Att_" + (place == "both" ? std::string("BOTH") : place)},
                         {"arch", "pix2pix"},
                         {"attention", kind},
                         {"att_place", place}});
      }
    }
    return cells;
  }
  throw UsageError("unknown ablation table '" + table + "' (sn | positional | attention)");
}

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
  const json cells = ablation_cells(a.table);
  if (a.seeds < 1) throw UsageError("--seeds must be at least 1");
  claim_output(a.base.out, a.base.common.force);
  const TrainData data = load_train_data(a.base.data);
  json rows = json::array();
  for (const auto& cell : cells) {
    TrainArgs t = a.base;
    t.arch = cell.value("arch", t.arch);
    t.sn = cell.value("sn", false);
    t.sdf = cell.value("sdf", false);
    t.coordconv = cell.value("coordconv", false);
    t.attention = cell.value("attention", std::string("none"));
    t.att_place = cell.value("att_place", std::string("G"));
    std::vector<Model> models;
    for (int k = 0; k < a.seeds; ++k) {
      Specs s = compose_specs(t, data.manifest.size);
      s.cfg.seed = derive_seed(a.base.seed, "ablate/seed" + std::to_string(k));
      std::string dir = cell.at("name").get<std::string>();
      std::replace(dir.begin(), dir.end(), '+', '_');
      std::replace(dir.begin(), dir.end(), '/', '_');
      s.cfg.out_dir = fs::path(a.base.out) / dir / ("seed" + std::to_string(k));
      if (!a.base.common.json_out) err << "ablation cell " << cell.at("name").get<std::string>() << " seed " << k << "\n";
      models.push_back(dispatch_train(t.arch, data, s).model);
    }
    std::vector<const Model*> ptrs;
    for (const auto& m : models) ptrs.push_back(&m);
    const MetricReport r = evaluate(ptrs, data.manifest, data.samples, SplitPart::Test);
    rows.push_back({{"name", cell.at("name")},
                    {"config", cell},
                    {"mae", r.mae},
                    {"mae_std", r.mae_std},
                    {"rmse", r.rmse},
                    {"rmse_std", r.rmse_std},
                    {"mre", r.mre},
                    {"mre_std", r.mre_std},
                    {"per_seed", {{"mae", r.seed_mae}, {"rmse", r.seed_rmse}, {"mre", r.seed_mre}}}});
  }
  const json table{{"table", a.table},
                   {"dataset", data.manifest.name},
                   {"family", data.manifest.family},
                   {"seeds", a.seeds},
                   {"units", "normalized (speed / v_max), mean and sample std over seeds"},
                   {"rows", rows}};
  std::ofstream f(fs::path(a.base.out) / "ablation.json");
  f << table.dump(2) << '\n';
  std::ostringstream h;
  for (const auto& r : rows) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-16s mae %.4f +- %.4f  rmse %.4f +- %.4f  mre %.4f +- %.4f\n",
                  r.at("name").get<std::string>().c_str(), r.at("mae").get<double>(), r.at("mae_std").get<double>(),
                  r.at("rmse").get<double>(), r.at("rmse_std").get<double>(), r.at("mre").get<double>(),
                  r.at("mre_std").get<double>());
    h << buf;
  }
  emit(out, a.base.common, table, h.str());
  return 0;
}

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const Model model = load_checkpoint(a.checkpoint);
  const FieldGrid g = load_geometry(a.scene, a.geometry, a.size, model);
  const int sector = parse_sector(a.sector);
  if (a.out.empty()) throw UsageError("--out is required");
  const fs::path wgf = fs::path(a.out + ".wgf");
  const fs::path png = fs::path(a.out + ".png");
  claim_file(wgf, a.common.force);
  claim_file(png, a.common.force);
  const FieldGrid flow = predict_direction(model, g, sector);
  write_bytes(wgf, encode_wgf(SamplePair{g, flow}));
  write_png(png, render_viridis(flow.values, flow.height, flow.width, 0.0, model.header.norm.v_max));
  float vmax = 0;
  for (float v : flow.values) vmax = std::max(vmax, v);
  const json j{{"sector", sector_names()[sector]}, {"wgf", wgf.string()}, {"png", png.string()},
               {"max_speed_ms", vmax}, {"height", flow.height}, {"width", flow.width}};
  emit(out, a.common, j, "wrote " + wgf.string() + " and " + png.string() + "\n");
  return 0;
}

int cmd_comfort(const ComfortArgs& a, std::ostream& out) {
  const Model model = load_checkpoint(a.checkpoint);
  const FieldGrid g = load_geometry(a.scene, a.geometry, a.size, model);
  if (a.windrose.empty()) throw UsageError("--windrose is required");
  const WindRose rose = WindRose::from_json(read_json(a.windrose));
  const ComfortCriteria criteria = a.criteria.empty() ? ComfortCriteria{} : ComfortCriteria::from_json(read_json(a.criteria));
  if (a.out.empty()) throw UsageError("--out is required");
  const fs::path png = fs::path(a.out + ".png");
  const fs::path sidecar = fs::path(a.out + ".json");
  claim_file(png, a.common.force);
  claim_file(sidecar, a.common.force);
  ComfortMap map = comfort_map(model, g, rose, criteria);
  map.provenance["checkpoint"] = a.checkpoint;
  write_png(png, render_comfort(map));
  json j = map.to_json();
  std::ofstream f(sidecar);
  require(f.good(), ErrorCode::Io, "cannot write " + sidecar.string());
  f << j.dump(2) << '\n';
  j["png"] = png.string();
  j["sidecar"] = sidecar.string();
  std::ostringstream h;
  h << "wrote " << png.string() << " and " << sidecar.string() << "\n";
  const auto hist = map.histogram();
  for (int k = 0; k < kComfortClasses; ++k) h << "  " << criteria.classes[k] << ": " << hist[k] << "\n";
  emit(out, a.common, j, h.str());
  return 0;
}

int cmd_serve(const ServeArgs& a, std::ostream& err) {
  std::string path = a.config;
  if (path.empty()) {
    const char* env = std::getenv("WINDCOMFORT_CONFIG");
    if (env) path = env;
  }
  if (path.empty()) throw UsageError("no service config: pass --config or set WINDCOMFORT_CONFIG");
  ServiceConfig cfg = ServiceConfig::from_file(path);
  if (!a.host.empty()) cfg.host = a.host;
  if (a.port >= 0) cfg.port = a.port;
  Service service(cfg);
  const int port = service.bind();
  err << "serving " << cfg.checkpoints.size() << " model(s) on http://" << cfg.host << ":" << port << "\n";
  service.listen();
  return 0;
}

bool internal(ErrorCode c) {
  return c == ErrorCode::Diverged || c == ErrorCode::NonFiniteLoss || c == ErrorCode::DegenerateWeight;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Surrogate wind-flow and pedestrian comfort toolkit", "windcomfort"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Generate an oracle dataset");
  gen->add_option("--family", gd.family, "wall | single | two | two_height | urban");
  gen->add_option("--count", gd.count, "Number of scenes");
  gen->add_option("--seed", gd.seed, "Root seed");
  gen->add_option("--size", gd.size, "Output raster side in pixels");
  gen->add_option("--grid", gd.grid, "Solver grid side (default: min(size, 128))");
  gen->add_option("--n-bins", gd.n_bins, "Velocity buckets");
  gen->add_option("--train-fraction", gd.train_fraction, "Train split fraction");
  gen->add_flag("--no-previews", gd.no_previews, "Skip PNG previews");
  gen->add_option("--out", gd.out, "Dataset directory")->required();
  add_common(gen, gd.common);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model");
  add_train_options(train, ta, true);
  add_common(train, ta.common);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate checkpoints on a dataset split");
  ev->add_option("--checkpoint", ea.checkpoints, "Checkpoint file (repeat for seeds)")->required();
  ev->add_option("--data", ea.data, "Dataset directory")->required();
  ev->add_option("--split", ea.split, "train | test | all")->check(CLI::IsMember({"train", "test", "all"}));
  ev->add_option("--out", ea.out, "Directory for metrics.json and metrics.csv");
  add_common(ev, ea.common);

  EvalArgs ca;
  auto* cross = app.add_subcommand("cross-eval", "Evaluate checkpoints on another family's dataset");
  cross->add_option("--checkpoint", ca.checkpoints, "Checkpoint file (repeat for seeds)")->required();
  cross->add_option("--data", ca.data, "Target dataset directory")->required();
  cross->add_option("--out", ca.out, "Directory for metrics.json and metrics.csv");
  add_common(cross, ca.common);

  AblateArgs aa;
  auto* abl = app.add_subcommand("ablate", "Train and evaluate every cell of an ablation table");
  abl->add_option("--table", aa.table, "sn | positional | attention")->check(CLI::IsMember({"sn", "positional", "attention"}));
  abl->add_option("--seeds", aa.seeds, "Seeds per cell");
  abl->add_option("--jobs", aa.jobs, "Parallel runs (runs share the OpenMP pool; 1 is sequential)");
  add_train_options(abl, aa.base, true);
  add_common(abl, aa.base.common);

  PredictArgs pa;
  auto* pred = app.add_subcommand("predict", "Predict the flow field for one wind direction");
  pred->add_option("--checkpoint", pa.checkpoint, "Checkpoint file")->required();
  pred->add_option("--scene", pa.scene, "Scene JSON");
  pred->add_option("--geometry", pa.geometry, "Geometry raster (WGF1)");
  pred->add_option("--sector", pa.sector, "Wind-from sector N..NW")
      ->check(CLI::IsMember({"N", "NE", "E", "SE", "S", "SW", "W", "NW"}));
  pred->add_option("--size", pa.size, "Raster side for scenes (default: checkpoint size)");
  pred->add_option("--out", pa.out, "Output prefix (.wgf and .png)")->required();
  add_common(pred, pa.common);

  ComfortArgs co;
  auto* comf = app.add_subcommand("comfort", "Compute a pedestrian comfort map");
  comf->add_option("--checkpoint", co.checkpoint, "Checkpoint file")->required();
  comf->add_option("--scene", co.scene, "Scene JSON");
  comf->add_option("--geometry", co.geometry, "Geometry raster (WGF1)");
  comf->add_option("--windrose", co.windrose, "Wind rose JSON")->required();
  comf->add_option("--criteria", co.criteria, "Comfort criteria JSON (default: 2.5/4/6/8 m/s at 5%)");
  comf->add_option("--size", co.size, "Raster side for scenes (default: checkpoint size)");
  comf->add_option("--out", co.out, "Output prefix (.png and .json)")->required();
  add_common(comf, co.common);

  ServeArgs sa;
  auto* serve = app.add_subcommand("serve", "Run the HTTP prediction service");
  serve->add_option("--config", sa.config, "Service config JSON (default: $WINDCOMFORT_CONFIG)");
  serve->add_option("--host", sa.host, "Bind address override");
  serve->add_option("--port", sa.port, "Port override");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    CLI::App* sub = nullptr;
    for (auto* s : app.get_subcommands()) sub = s;
    err << (sub ? sub->help() : app.help());
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gd, out, err);
    if (train->parsed()) return cmd_train(ta, out, err);
    if (ev->parsed()) return cmd_eval(ea, false, out);
    if (cross->parsed()) return cmd_eval(ca, true, out);
    if (abl->parsed()) return cmd_ablate(aa, out, err);
    if (pred->parsed()) return cmd_predict(pa, out);
    if (comf->parsed()) return cmd_comfort(co, out);
    if (serve->parsed()) return cmd_serve(sa, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    for (auto* sub : app.get_subcommands()) err << sub->help();
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return internal(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace wc
