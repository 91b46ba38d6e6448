#include <doctest.h>

#include <cmath>
#include <fstream>

#include "oracles.hpp"
#include "windcomfort/train.hpp"

using namespace wc;

namespace {

const GeneratedDataset& tiny_set() {
  static const GeneratedDataset ds = [] {
    FamilySpec f;
    f.family = "two";
    f.count = 4;
    f.seed = 21;
    f.size = 32;
    SolverConfig s;
    s.grid = 32;
    return generate(f, s);
  }();
  return ds;
}

TrainData tiny_data() {
  TrainData d = TrainData::from_dataset(tiny_set().manifest, tiny_set().samples);
  d.train = {0, 1, 2, 3};
  d.val = {3};
  return d;
}

GeneratorSpec tiny_gen() {
  GeneratorSpec g;
  g.depth = 5;
  g.base_filters = 4;
  return g;
}

DiscriminatorSpec tiny_disc(bool sn = false) {
  DiscriminatorSpec d;
  d.base_filters = 4;
  d.n_layers = 3;
  d.spectral_norm = sn;
  return d;
}

TrainConfig tiny_cfg(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.decay_epochs = 1;
  c.seed = 17;
  c.pool_size = 3;
  return c;
}

Tensor<float> tagged(float tag) { return Tensor<float>({1, 1, 2, 2}, tag); }

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("learning rate schedule") {
    const TrainConfig c;
    for (int e = 0; e < 50; ++e) CHECK(lr_at_epoch(e, c) == 2e-4);
    CHECK(lr_at_epoch(70, c) == 0.0);
    CHECK(lr_at_epoch(60, c) == doctest::Approx(2e-4 * 10 / 21));
    CHECK(std::abs(lr_at_epoch(59, c) - 1e-4) <= 2e-4 / 21);
    for (int e = 1; e <= 70; ++e) CHECK(lr_at_epoch(e, c) <= lr_at_epoch(e - 1, c));
    CHECK(oracle::error_code([&] { lr_at_epoch(71, c); }) == ErrorCode::InvalidArgument);
    CHECK(oracle::error_code([&] { lr_at_epoch(-1, c); }) == ErrorCode::InvalidArgument);
  }

  TEST_CASE("config validation") {
    TrainConfig c;
    c.batch_size = 0;
    CHECK(oracle::error_code([&] { c.validate(); }) == ErrorCode::InvalidArgument);
    c = TrainConfig{};
    c.decay_epochs = 80;
    CHECK(oracle::error_code([&] { c.validate(); }) == ErrorCode::InvalidArgument);
  }

  TEST_CASE("pool fill phase returns the fresh sample") {
    ImagePool pool(50, 1);
    for (int i = 0; i < 50; ++i) {
      const Tensor<float> out = pool.query(tagged(static_cast<float>(i)));
      CHECK(out.data[0] == static_cast<float>(i));
    }
    CHECK(pool.size() == 50);
  }

  TEST_CASE("pool half rule and history") {
    ImagePool pool(50, 2);
    for (int i = 0; i < 50; ++i) pool.query(tagged(static_cast<float>(i)));
    const long before = pool.fresh_returns();
    const int n = 10000;
    bool from_past = true;
    for (int i = 50; i < 50 + n; ++i) {
      const Tensor<float> out = pool.query(tagged(static_cast<float>(i)));
      from_past = from_past && out.data[0] <= static_cast<float>(i) && out.data[0] >= 0;
      CHECK(pool.size() == 50);
    }
    CHECK(from_past);
    const double freq = static_cast<double>(pool.fresh_returns() - before) / n;
    CHECK(std::abs(freq - 0.5) <= 0.02);
  }

  TEST_CASE("discriminator accuracy fixtures") {
    CHECK(disc_accuracy({{0.9, 0.9, 0.9}}, {true}) == 1.0);
    CHECK(disc_accuracy({{0.5, 0.5}}, {true}) == 0.0);
    CHECK(disc_accuracy({{0.5, 0.5}}, {false}) == 1.0);
    CHECK(disc_accuracy({{0.9}, {0.1}, {0.6}, {0.2}}, {true, false, false, true}) == 0.5);
    CHECK(disc_accuracy({{0.2, 0.9}}, {true}) == 1.0);
    CHECK(oracle::error_code([] { disc_accuracy({}, {}); }) == ErrorCode::InvalidArgument);
    Tensor<float> logits({2, 1, 2, 2}, 3.0f);
    CHECK(disc_accuracy(logits, true, true) == 1.0);
    CHECK(disc_accuracy(logits, false, true) == 0.0);
    Tensor<float> half({1, 1, 2, 2}, 0.0f);
    CHECK(disc_accuracy(half, true, true) == 0.0);
  }

  TEST_CASE("unet loss is the l1 of prediction and target") {
    TrainConfig c = tiny_cfg(1);
    c.max_steps = 1;
    c.eval_every = 0;
    const TrainResult r = train_unet(tiny_data(), tiny_gen(), c);
    CHECK(r.steps == 1);
    CHECK(r.last.loss_G_total == r.last.loss_G_L1);
    CHECK(r.last.loss_G_L1 > 0);
    CHECK(r.updates.D == 0);
  }

  TEST_CASE("pix2pix update counts and determinism") {
    const TrainConfig c = tiny_cfg(2);
    const TrainResult a = train_pix2pix(tiny_data(), tiny_gen(), tiny_disc(), c);
    const TrainResult b = train_pix2pix(tiny_data(), tiny_gen(), tiny_disc(), c);
    CHECK(a.updates.G == 2 * 4);
    CHECK(a.updates.D == 2 * 4);
    CHECK(weight_checksum(a.model) == weight_checksum(b.model));
    REQUIRE(a.epochs.size() == 2);
    CHECK(a.epochs[0].lr == 2e-4);
    CHECK(a.epochs[1].lr == doctest::Approx(2e-4 / 2));
    CHECK(a.epochs[0].val_mae.has_value());
    CHECK(a.last.loss_G_total == doctest::Approx(a.last.loss_G_adv + 100 * a.last.loss_G_L1));
    TrainConfig other = c;
    other.seed = 18;
    CHECK(weight_checksum(train_pix2pix(tiny_data(), tiny_gen(), tiny_disc(), other).model) != weight_checksum(a.model));
  }

  TEST_CASE("spectral norm tracks unit sigma after an epoch") {
    TrainConfig c = tiny_cfg(2);
    const TrainResult r = train_pix2pix(tiny_data(), tiny_gen(), tiny_disc(true), c);
    REQUIRE(!r.epochs.empty());
    const auto& sig = r.epochs[0].sn_sigma;
    CHECK(sig.size() == 3);
    for (const auto& [name, v] : sig.items()) {
      INFO(name);
      CHECK(v.get<double>() >= 0.9);
      CHECK(v.get<double>() <= 1.1);
    }
  }

  TEST_CASE("cyclegan touches every network once per iteration") {
    const TrainConfig c = tiny_cfg(1);
    const TrainResult r = train_cyclegan(tiny_data(), tiny_gen(), tiny_disc(), c);
    CHECK(r.updates.G == 4);
    CHECK(r.updates.F == 4);
    CHECK(r.updates.D == 4);
    CHECK(r.updates.D_X == 4);
    REQUIRE(r.last.loss_cycle.has_value());
    CHECK(std::isfinite(*r.last.loss_cycle));
    CHECK(r.model.F != nullptr);
    CHECK(r.model.D_X != nullptr);
  }

  TEST_CASE("logs and checkpoints land in the output directory") {
    TrainConfig c = tiny_cfg(2);
    c.checkpoint_every = 1;
    c.out_dir = oracle::temp_dir("train_logs");
    train_unet(tiny_data(), tiny_gen(), c);
    CHECK(std::filesystem::exists(c.out_dir / "checkpoint.wgck"));
    CHECK(std::filesystem::exists(c.out_dir / "checkpoint_e001.wgck"));
    std::ifstream log(c.out_dir / "train_log.jsonl");
    int lines = 0;
    for (std::string line; std::getline(log, line);) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.contains("lr"));
      CHECK(j.contains("loss_G_L1"));
      CHECK(j.contains("epoch"));
      ++lines;
    }
    CHECK(lines == 8);
    std::filesystem::remove_all(c.out_dir);
  }

  TEST_CASE("checkpoint round trip") {
    TrainConfig c = tiny_cfg(1);
    c.max_steps = 2;
    const TrainResult r = train_pix2pix(tiny_data(), tiny_gen(), tiny_disc(true), c);
    const auto dir = oracle::temp_dir("ckpt");
    save_checkpoint(dir / "m.wgck", r.model);
    const Model back = load_checkpoint(dir / "m.wgck");
    CHECK(weight_checksum(back) == weight_checksum(r.model));
    CHECK(back.header.spec_hash() == r.model.header.spec_hash());
    const FieldGrid& geo = tiny_set().samples[1].geometry;
    CHECK(same_values(predict_flow(back, geo), predict_flow(r.model, geo)));

    auto bytes = checkpoint_bytes(r.model);
    bytes[0] ^= 0xff;
    CHECK(oracle::error_code([&] { checkpoint_from_bytes(bytes); }) == ErrorCode::CorruptCheckpoint);
    bytes = checkpoint_bytes(r.model);
    bytes.resize(bytes.size() / 2);
    CHECK(oracle::error_code([&] { checkpoint_from_bytes(bytes); }) == ErrorCode::CorruptCheckpoint);

    ModelHeader wrong = r.model.header;
    wrong.generator.base_filters = 8;
    CHECK(oracle::error_code([&] { load_checkpoint(dir / "m.wgck", wrong); }) == ErrorCode::SpecMismatch);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("non-finite loss aborts") {
    TrainData d = tiny_data();
    d.samples[d.train[0]].flow.values[5] = NAN;
    TrainConfig c = tiny_cfg(1);
    c.eval_every = 0;
    CHECK(oracle::error_code([&] { train_unet(d, tiny_gen(), c); }) == ErrorCode::NonFiniteLoss);
  }

  TEST_CASE("seventy epochs means seventy generator updates per sample") {
    TrainData d = tiny_data();
    d.train = {0, 2};
    GeneratorSpec g = tiny_gen();
    g.base_filters = 2;
    TrainConfig c;
    c.eval_every = 0;
    const TrainResult r = train_unet(d, g, c);
    CHECK(r.updates.G == 70 * 2);
    CHECK(r.epochs.size() == 70);
    CHECK(r.epochs.back().lr == doctest::Approx(2e-4 / 21));
  }
}
