#include "windcomfort/train.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>

#include "windcomfort/eval.hpp"
#include "windcomfort/optim.hpp"
#include "windcomfort/rng.hpp"

namespace wc {

namespace fs = std::filesystem;
using nlohmann::json;
using V = ag::Var<float>;

void TrainConfig::validate() const {
  require(lr > 0 && std::isfinite(lr), ErrorCode::InvalidArgument, "lr must be positive");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, ErrorCode::InvalidArgument, "Adam betas must be in [0, 1)");
  require(batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be at least 1");
  require(epochs >= 1, ErrorCode::InvalidArgument, "epochs must be at least 1");
  require(decay_epochs >= 0 && decay_epochs <= epochs, ErrorCode::InvalidArgument,
          "decay_epochs must lie in [0, epochs]");
  require(pool_size >= 0, ErrorCode::InvalidArgument, "pool_size must be non-negative");
  require(lambda_l1 >= 0 && lambda_cycle >= 0, ErrorCode::InvalidArgument, "loss weights must be non-negative");
  require(eval_every >= 0 && checkpoint_every >= 0 && max_steps >= 0, ErrorCode::InvalidArgument,
          "cadences must be non-negative");
}

double lr_at_epoch(int epoch, const TrainConfig& cfg) {
  require(epoch >= 0 && epoch <= cfg.epochs, ErrorCode::InvalidArgument,
          "epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + "]");
  if (epoch < cfg.flat_epochs()) return cfg.lr;
  return cfg.lr * static_cast<double>(cfg.epochs - epoch) / static_cast<double>(cfg.decay_epochs + 1);
}

ImagePool::ImagePool(int capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
  require(capacity >= 0, ErrorCode::InvalidArgument, "pool capacity must be non-negative");
}

Tensor<float> ImagePool::query(const Tensor<float>& fresh) {
  if (capacity_ == 0) {
    ++fresh_returns_;
    return fresh;
  }
  if (static_cast<int>(buffer_.size()) < capacity_) {
    buffer_.push_back(fresh);
    ++fresh_returns_;
    return fresh;
  }
  if (uniform01(rng_) < 0.5) {
    ++fresh_returns_;
    return fresh;
  }
  const auto k = uniform_index(rng_, buffer_.size());
  Tensor<float> old = std::move(buffer_[k]);
  buffer_[k] = fresh;
  return old;
}

double disc_accuracy(const std::vector<std::vector<double>>& patch_probs, const std::vector<bool>& is_real) {
  require(!patch_probs.empty(), ErrorCode::InvalidArgument, "disc_accuracy needs at least one image");
  require(patch_probs.size() == is_real.size(), ErrorCode::ShapeMismatch, "one truth label per image expected");
  int correct = 0;
  for (std::size_t i = 0; i < patch_probs.size(); ++i) {
    require(!patch_probs[i].empty(), ErrorCode::InvalidArgument, "image with no patches");
    double s = 0;
    for (double p : patch_probs[i]) s += p;
    const bool predicted_real = s / static_cast<double>(patch_probs[i].size()) > 0.5;
    if (predicted_real == is_real[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(patch_probs.size());
}

double disc_accuracy(const Tensor<float>& scores, bool is_real, bool logits) {
  require(scores.rank() == 4, ErrorCode::ShapeMismatch, "scores must be [N, C, h, w]");
  const int n = scores.dim(0);
  const std::size_t per = scores.numel() / static_cast<std::size_t>(std::max(n, 1));
  std::vector<std::vector<double>> probs(n);
  for (int i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < per; ++k) {
      const double s = scores.data[i * per + k];
      probs[i].push_back(logits ? 1.0 / (1.0 + std::exp(-s)) : s);
    }
  }
  return disc_accuracy(probs, std::vector<bool>(n, is_real));
}

TrainData TrainData::from_dataset(DatasetManifest manifest, std::vector<SamplePair> samples) {
  require(!samples.empty(), ErrorCode::InvalidArgument, "dataset has no samples");
  TrainData d;
  const Split s = split_indices(samples.size(), manifest.train_fraction, manifest.split_seed);
  d.train = s.train;
  d.val = s.test;
  if (d.train.empty()) {
    d.train = d.val;
    d.val.clear();
  }
  d.manifest = std::move(manifest);
  d.samples = std::move(samples);
  return d;
}

ModelHeader training_header(const std::string& arch, GeneratorSpec gen, std::optional<DiscriminatorSpec> disc,
                            const TrainData& data, std::uint64_t seed) {
  require(!data.samples.empty(), ErrorCode::InvalidArgument, "dataset has no samples");
  gen.in_channels = data.samples.front().geometry.channels();
  gen.out_channels = data.samples.front().flow.channels();
  ModelHeader h;
  h.arch = arch;
  h.generator = gen;
  if (disc) {
    disc->in_channels = arch == "cyclegan" ? gen.out_channels : gen.input_channels() + gen.out_channels;
    h.discriminator = disc;
  }
  h.norm = data.manifest.normalization();
  h.v_ref = data.manifest.v_ref;
  h.size = data.samples.front().geometry.height;
  h.extent_m = data.manifest.extent_m;
  h.family = data.manifest.family;
  h.seed = seed;
  return h;
}

std::uint64_t weight_checksum(const Model& model) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, net] : model.networks()) {
    for (const auto& p : net->parameters()) {
      const auto& d = p.var.value().data;
      const auto* bytes = reinterpret_cast<const unsigned char*>(d.data());
      for (std::size_t i = 0; i < d.size() * sizeof(float); ++i) h = (h ^ bytes[i]) * 1099511628211ULL;
    }
  }
  return h;
}

namespace {

struct Batch {
  std::vector<V> x;
  std::vector<V> y;
};

struct StepOutcome {
  LossReport loss;
  std::optional<double> disc_accuracy;
};

// Owns the epoch loop, schedule, logging, validation and checkpoints; the architecture
// supplies one optimisation step over a batch.
class Runner {
 public:
  Runner(const TrainData& data, const TrainConfig& cfg, Model& model)
      : data_(data), cfg_(cfg), model_(model), shuffle_(derive_seed(cfg.seed, "shuffle")) {
    cfg.validate();
    require(!data.train.empty(), ErrorCode::InvalidArgument, "training split is empty");
    const bool sdf = model.header.generator.sdf_channel;
    const Normalization norm = model.header.norm;
    for (const auto& s : data.samples) {
      x_.push_back(pack_geometry(s.geometry, norm, sdf));
      y_.push_back(pack_flow(s.flow, norm));
    }
    if (!cfg.out_dir.empty()) {
      fs::create_directories(cfg.out_dir);
      train_log_.open(cfg.out_dir / "train_log.jsonl");
      val_log_.open(cfg.out_dir / "val_log.jsonl");
      require(train_log_.good() && val_log_.good(), ErrorCode::Io, "cannot write logs in " + cfg.out_dir.string());
    }
  }

  TrainResult run(const std::vector<Adam<float>*>& optimizers, const std::function<StepOutcome(const Batch&)>& step) {
    TrainResult result;
    model_.set_training(true);
    const int n = static_cast<int>(data_.train.size());
    bool stop = false;
    for (int epoch = 0; epoch < cfg_.epochs && !stop; ++epoch) {
      const double lr = lr_at_epoch(epoch, cfg_);
      for (auto* opt : optimizers) opt->set_lr(lr);
      std::vector<int> order = data_.train;
      for (int i = n - 1; i > 0; --i) std::swap(order[i], order[uniform_index(shuffle_, i + 1)]);

      EpochStats stats;
      stats.epoch = epoch;
      stats.lr = lr;
      double l1_sum = 0, acc_sum = 0;
      int steps = 0, acc_steps = 0;
      for (int start = 0; start < n; start += cfg_.batch_size) {
        Batch b;
        for (int k = start; k < std::min(n, start + cfg_.batch_size); ++k) {
          b.x.emplace_back(x_[order[k]]);
          b.y.emplace_back(y_[order[k]]);
        }
        current_step_ = result.steps;
        current_epoch_ = epoch;
        const StepOutcome out = step(b);
        ++result.steps;
        ++steps;
        l1_sum += out.loss.loss_G_L1;
        if (out.disc_accuracy) {
          acc_sum += *out.disc_accuracy;
          ++acc_steps;
        }
        result.last = out.loss;
        if (train_log_.is_open()) {
          json line{{"epoch", epoch}, {"step", result.steps - 1}, {"lr", lr}};
          line.update(out.loss.to_json());
          line["disc_accuracy"] = out.disc_accuracy ? json(*out.disc_accuracy) : json(nullptr);
          train_log_ << line.dump() << '\n';
        }
        if (cfg_.max_steps > 0 && result.steps >= cfg_.max_steps) {
          stop = true;
          break;
        }
      }
      stats.train_l1 = l1_sum / steps;
      stats.disc_accuracy = acc_steps ? acc_sum / acc_steps : 0.0;
      stats.sn_sigma = sn_telemetry();
      if (cfg_.eval_every > 0 && !data_.val.empty() && ((epoch + 1) % cfg_.eval_every == 0 || stop ||
                                                         epoch + 1 == cfg_.epochs)) {
        validate(stats);
      }
      if (val_log_.is_open()) {
        json line{{"epoch", epoch},
                  {"lr", lr},
                  {"train_l1", stats.train_l1},
                  {"disc_accuracy", stats.disc_accuracy},
                  {"val_mae", stats.val_mae ? json(*stats.val_mae) : json(nullptr)},
                  {"val_mre", stats.val_mre ? json(*stats.val_mre) : json(nullptr)},
                  {"sn_sigma", stats.sn_sigma}};
        val_log_ << line.dump() << '\n';
        val_log_.flush();
      }
      result.epochs.push_back(stats);
      model_.header.epoch = epoch + 1;
      if (!cfg_.out_dir.empty() && cfg_.checkpoint_every > 0 && (epoch + 1) % cfg_.checkpoint_every == 0) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoint_e%03d.wgck", epoch + 1);
        save_checkpoint(cfg_.out_dir / name, model_);
      }
    }
    model_.set_training(false);
    if (!cfg_.out_dir.empty()) save_checkpoint(cfg_.out_dir / "checkpoint.wgck", model_);
    return result;
  }

  // Aborts the run on a non-finite loss, logging the offending step first.
  void check(double value, const char* what) {
    if (std::isfinite(value)) return;
    if (train_log_.is_open()) {
      train_log_ << json{{"epoch", current_epoch_}, {"step", current_step_}, {"error", "NonFiniteLoss"}, {"loss", what}}
                        .dump()
                 << '\n';
      train_log_.flush();
    }
    fail(ErrorCode::NonFiniteLoss, std::string(what) + " is not finite at step " + std::to_string(current_step_));
  }

 private:
  json sn_telemetry() const {
    json out = json::object();
    for (const auto& [name, net] : model_.networks()) {
      for (const auto& st : net->spectral_states()) {
        for (const auto& p : net->parameters()) {
          if (p.name == st->name) out[name + "." + st->name] = static_cast<double>(st->normalized_sigma(p.var));
        }
      }
    }
    return out;
  }

  void validate(EpochStats& stats) {
    std::vector<FieldGrid> targets, preds;
    for (int i : data_.val) {
      targets.push_back(data_.samples[i].flow);
      preds.push_back(predict_flow(model_, data_.samples[i].geometry));
    }
    const MetricReport r = evaluate_predictions(targets, preds, model_.header.norm.v_max);
    stats.val_mae = r.mae;
    stats.val_mre = r.mre;
  }

  const TrainData& data_;
  const TrainConfig& cfg_;
  Model& model_;
  std::mt19937_64 shuffle_;
  std::vector<Tensor<float>> x_, y_;
  std::ofstream train_log_, val_log_;
  long current_step_ = 0;
  int current_epoch_ = 0;
};

json config_json(const TrainConfig& c) {
  return {{"lr", c.lr},         {"beta1", c.beta1},           {"beta2", c.beta2},
          {"batch_size", c.batch_size}, {"epochs", c.epochs}, {"decay_epochs", c.decay_epochs},
          {"pool_size", c.pool_size},   {"lambda_l1", c.lambda_l1}, {"lambda_cycle", c.lambda_cycle},
          {"max_steps", c.max_steps}};
}

std::unique_ptr<Adam<float>> adam(Network<float>& net, const TrainConfig& cfg) {
  return std::make_unique<Adam<float>>(net.parameter_vars(), cfg.lr, cfg.beta1, cfg.beta2);
}

float inv(const Batch& b) { return 1.0f / static_cast<float>(b.x.size()); }

}  // namespace

TrainResult train_unet(const TrainData& data, const GeneratorSpec& gen, const TrainConfig& cfg) {
  ModelHeader h = training_header("unet", gen, std::nullopt, data, cfg.seed);
  h.extra["train"] = config_json(cfg);
  Model model = build_model(h);
  Runner runner(data, cfg, model);
  auto opt = adam(*model.G, cfg);
  UpdateCounts counts;
  TrainResult r = runner.run({opt.get()}, [&](const Batch& b) {
    StepOutcome out;
    for (std::size_t i = 0; i < b.x.size(); ++i) {
      V l1 = l1_loss(model.G->forward(b.x[i]), b.y[i]);
      runner.check(l1.item(), "loss_G_L1");
      out.loss.loss_G_L1 += l1.item() * inv(b);
      ag::scale(l1, inv(b)).backward();
    }
    out.loss.loss_G_total = out.loss.loss_G_L1;
    out.loss.lambda = 0;
    opt->step();
    ++counts.G;
    return out;
  });
  r.updates = counts;
  r.model = std::move(model);
  return r;
}

TrainResult train_pix2pix(const TrainData& data, const GeneratorSpec& gen, const DiscriminatorSpec& disc,
                          const TrainConfig& cfg) {
  ModelHeader h = training_header("pix2pix", gen, disc, data, cfg.seed);
  h.extra["train"] = config_json(cfg);
  Model model = build_model(h);
  Runner runner(data, cfg, model);
  auto opt_g = adam(*model.G, cfg);
  auto opt_d = adam(*model.D, cfg);
  UpdateCounts counts;
  const float lambda = static_cast<float>(cfg.lambda_l1);
  TrainResult r = runner.run({opt_g.get(), opt_d.get()}, [&](const Batch& b) {
    StepOutcome out;
    out.loss.lambda = cfg.lambda_l1;
    std::vector<V> fakes;
    for (const V& x : b.x) fakes.push_back(model.G->forward(x));

    model.D->set_requires_grad(true);
    double acc = 0;
    for (std::size_t i = 0; i < b.x.size(); ++i) {
      V real_logits = model.D->forward(ag::concat_channels(b.x[i], b.y[i]));
      V fake_logits = model.D->forward(ag::concat_channels(b.x[i], ag::detach(fakes[i])));
      V loss_d = adv_discriminator_loss(real_logits, fake_logits);
      runner.check(loss_d.item(), "loss_D");
      out.loss.loss_D += loss_d.item() * inv(b);
      acc += 0.5 * (disc_accuracy(real_logits.value(), true, true) + disc_accuracy(fake_logits.value(), false, true));
      ag::scale(loss_d, inv(b)).backward();
    }
    opt_d->step();
    ++counts.D;
    out.disc_accuracy = acc / static_cast<double>(b.x.size());

    model.D->set_requires_grad(false);
    for (std::size_t i = 0; i < b.x.size(); ++i) {
      V adv = adv_generator_loss(model.D->forward(ag::concat_channels(b.x[i], fakes[i])));
      V l1 = l1_loss(fakes[i], b.y[i]);
      V total = pix2pix_objective(adv, l1, lambda);
      runner.check(total.item(), "loss_G_total");
      out.loss.loss_G_adv += adv.item() * inv(b);
      out.loss.loss_G_L1 += l1.item() * inv(b);
      out.loss.loss_G_total += total.item() * inv(b);
      ag::scale(total, inv(b)).backward();
    }
    model.D->set_requires_grad(true);
    opt_g->step();
    ++counts.G;
    return out;
  });
  r.updates = counts;
  r.model = std::move(model);
  return r;
}

TrainResult train_cyclegan(const TrainData& data, const GeneratorSpec& gen, const DiscriminatorSpec& disc,
                           const TrainConfig& cfg) {
  ModelHeader h = training_header("cyclegan", gen, disc, data, cfg.seed);
  h.extra["train"] = config_json(cfg);
  Model model = build_model(h);
  Runner runner(data, cfg, model);
  auto opt_g = adam(*model.G, cfg);
  auto opt_f = adam(*model.F, cfg);
  auto opt_dy = adam(*model.D, cfg);
  auto opt_dx = adam(*model.D_X, cfg);
  ImagePool pool_y(cfg.pool_size, derive_seed(cfg.seed, "pool/Y"));
  ImagePool pool_x(cfg.pool_size, derive_seed(cfg.seed, "pool/X"));
  UpdateCounts counts;
  const float lambda = static_cast<float>(cfg.lambda_cycle);
  TrainResult r = runner.run({opt_g.get(), opt_f.get(), opt_dy.get(), opt_dx.get()}, [&](const Batch& b) {
    StepOutcome out;
    out.loss.lambda = cfg.lambda_cycle;
    out.loss.loss_cycle = 0.0;
    std::vector<Tensor<float>> fake_y, fake_x;

    model.D->set_requires_grad(false);
    model.D_X->set_requires_grad(false);
    for (std::size_t i = 0; i < b.x.size(); ++i) {
      const V& x = b.x[i];
      const V& y = b.y[i];
      V fy = model.G->forward(x);
      V fx = model.F->forward(y);
      V adv = ag::add(lsgan_loss(model.D->forward(fy), 1.0f), lsgan_loss(model.D_X->forward(fx), 1.0f));
      V cyc = cycle_loss(x, model.F->forward(fy), y, model.G->forward(fx), lambda);
      V total = ag::add(adv, cyc);
      runner.check(total.item(), "loss_G_total");
      out.loss.loss_G_adv += adv.item() * inv(b);
      *out.loss.loss_cycle += cyc.item() * inv(b);
      out.loss.loss_G_total += total.item() * inv(b);
      out.loss.loss_G_L1 += l1_loss(ag::detach(fy), y).item() * inv(b);
      ag::scale(total, inv(b)).backward();
      fake_y.push_back(fy.value());
      fake_x.push_back(fx.value());
    }
    opt_g->step();
    opt_f->step();
    ++counts.G;
    ++counts.F;

    model.D->set_requires_grad(true);
    model.D_X->set_requires_grad(true);
    double acc = 0;
    for (std::size_t i = 0; i < b.x.size(); ++i) {
      V real_y = model.D->forward(b.y[i]);
      V pooled_y = model.D->forward(V(pool_y.query(fake_y[i])));
      V real_x = model.D_X->forward(b.x[i]);
      V pooled_x = model.D_X->forward(V(pool_x.query(fake_x[i])));
      V loss_dy = ag::scale(ag::add(lsgan_loss(real_y, 1.0f), lsgan_loss(pooled_y, 0.0f)), 0.25f);
      V loss_dx = ag::scale(ag::add(lsgan_loss(real_x, 1.0f), lsgan_loss(pooled_x, 0.0f)), 0.25f);
      V loss_d = ag::add(loss_dy, loss_dx);
      runner.check(loss_d.item(), "loss_D");
      out.loss.loss_D += loss_d.item() * inv(b);
      acc += 0.5 * (disc_accuracy(real_y.value(), true, false) + disc_accuracy(pooled_y.value(), false, false));
      ag::scale(loss_d, inv(b)).backward();
    }
    opt_dy->step();
    opt_dx->step();
    ++counts.D;
    ++counts.D_X;
    out.disc_accuracy = acc / static_cast<double>(b.x.size());
    return out;
  });
  r.updates = counts;
  r.model = std::move(model);
  return r;
}

}  // namespace wc
