#include "generators.hpp"

#include "ia/checkpoint.hpp"
#include "ia/rng.hpp"
#include "ia/train.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ia;

namespace {

ModelSpec small_spec(ModelMode mode) {
  ModelSpec s;
  s.mode = mode;
  s.image_h = s.image_w = 16;
  s.backbone = {{4, 3, 1, 1, 2}};
  s.roi_out_h = s.roi_out_w = 2;
  s.fc_dims = {8};
  s.num_classes = 3;
  return s;
}

SceneSpec small_scene() {
  SceneSpec s;
  s.height = s.width = 16;
  s.min_size = 6;
  s.max_size = 10;
  return s;
}

Batch batch_for(const ModelSpec& spec, std::span<const DetectionSample> data, std::uint64_t seed) {
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  ProposalConfig pc{0.1, 3, 3};
  return make_batch(spec, data, order, pc, seed, 0);
}

AttentionConfig full_ia() {
  AttentionConfig a;
  a.spatial_drop_ratio = 0.33;
  a.channel_select_ratio = 0.5;
  a.apply_probability = 1.0;
  a.rng_seed = 5;
  return a;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("ia_train_" + name);
  std::filesystem::remove_all(p);
  return p;
}

double clean_loss(const Model& m, const Batch& b) {
  if (m.spec.mode == ModelMode::classifier) {
    ForwardGraph g = forward_classifier(m, b.images);
    return g.tape.value(classification_loss(g.tape, g.logits, b.labels).total)[0];
  }
  ForwardGraph g = forward_detector(m, b.images, b.proposals);
  return g.tape.value(
      detection_loss(g.tape, g.logits, *g.deltas, b.proposals, m.spec.background_class()).total)[0];
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("sgd with momentum") {
    Model m;
    m.params.emplace("w", Tensor({2}, {1.0, 2.0}));
    Sgd sgd(0.5);
    TensorDict g;
    g.emplace("w", Tensor({2}, {1.0, -1.0}));
    sgd.step(m, g, 0.25);
    CHECK(m.params.at("w") == Tensor({2}, {0.75, 2.25}));
    sgd.step(m, g, 0.25);
    // v = 0.5 * 1 + 1 = 1.5
    CHECK(m.params.at("w") == Tensor({2}, {0.375, 2.625}));
  }

  TEST_CASE("learning-rate schedule") {
    TrainConfig c;
    c.epochs = 6;
    c.lr = 0.1;
    CHECK(c.decay_epoch() == 4);
    CHECK(c.lr_at(3) == 0.1);
    CHECK(c.lr_at(4) == 0.05);
    c.lr_decay_epoch = 1;
    CHECK(c.lr_at(1) == 0.05);
  }

  TEST_CASE("apply probability 0 gives the baseline update bit for bit") {
    for (ModelMode mode : {ModelMode::classifier, ModelMode::detector}) {
      const ModelSpec spec = small_spec(mode);
      const auto data = generate_dataset(small_scene(), 6);
      const Batch b = batch_for(spec, data, 3);
      Model base = init_model(spec, 9), ia = base;
      Sgd s1(0.9), s2(0.9);
      AttentionConfig a = full_ia();
      a.apply_probability = 0.0;
      for (std::uint64_t step = 0; step < 3; ++step) {
        const auto r1 = ia_training_step(base, s1, b, 0.01, {std::nullopt, step});
        const auto r2 = ia_training_step(ia, s2, b, 0.01, {a, step});
        CHECK(r1.loss == r2.loss);
        CHECK(r2.masked == 0);
      }
      for (const auto& [name, t] : base.params) CHECK(ia.params.at(name) == t);
    }
  }

  TEST_CASE("zero drop ratios give the baseline update bit for bit") {
    const ModelSpec spec = small_spec(ModelMode::detector);
    const auto data = generate_dataset(small_scene(), 4);
    const Batch b = batch_for(spec, data, 4);
    Model base = init_model(spec, 2), ia = base;
    Sgd s1(0.9), s2(0.9);
    AttentionConfig a = full_ia();
    a.spatial_drop_ratio = 0.0;
    a.channel_select_ratio = 0.0;
    ia_training_step(base, s1, b, 0.01, {std::nullopt, 0});
    const auto r = ia_training_step(ia, s2, b, 0.01, {a, 0});
    CHECK(r.masked == static_cast<Index>(b.proposals.size()));
    for (const auto& [name, t] : base.params) CHECK(ia.params.at(name) == t);
  }

  TEST_CASE("an all-zero mask trains the head on zeroed features") {
    const ModelSpec spec = small_spec(ModelMode::detector);
    const auto data = generate_dataset(small_scene(), 3);
    const Batch b = batch_for(spec, data, 5);
    const Model m = init_model(spec, 4);

    ForwardOptions fo;
    fo.attach_ia = true;
    ForwardGraph g = forward_detector(m, b.images, b.proposals, fo);
    const LossNodes l = detection_loss(g.tape, g.logits, *g.deltas, b.proposals, spec.background_class());
    g.tape.replace_and_recompute(*g.mask, Tensor::zeros(g.tape.value(g.attach).shape()));
    const auto grads = backward_params(g.tape, l.total);

    // Oracle: the head alone, fed a constant zero feature block.
    Tape t;
    const Shape fs = g.tape.value(*g.roi_features).shape();
    NodeId x = reshape(t, t.constant(Tensor::zeros(fs)), {fs[0], fs[1] * fs[2] * fs[3]});
    std::map<std::string, NodeId> p;
    for (const auto& [name, v] : m.params)
      if (name.rfind("conv", 0) != 0) p[name] = t.parameter(v);
    for (std::size_t i = 0; i < spec.fc_dims.size(); ++i) {
      const std::string n = "fc" + std::to_string(i);
      x = relu(t, linear(t, x, p.at(n + ".weight"), p.at(n + ".bias")));
    }
    const NodeId z = linear(t, x, p.at("cls.weight"), p.at("cls.bias"));
    const NodeId d = linear(t, x, p.at("box.weight"), p.at("box.bias"));
    const LossNodes lo = detection_loss(t, z, d, b.proposals, spec.background_class());
    const auto og = backward_params(t, lo.total);

    CHECK(g.tape.value(l.total)[0] == doctest::Approx(t.value(lo.total)[0]).epsilon(1e-14));
    for (const auto& [name, id] : g.params) {
      CAPTURE(name);
      if (name.rfind("conv", 0) == 0) {
        CHECK(grads.at(id) == Tensor::zeros(grads.at(id).shape()));
      } else {
        CHECK(max_abs_diff(grads.at(id), og.at(p.at(name))) <= 1e-14);
      }
    }
  }

  TEST_CASE("a small step lowers the training loss") {
    int lowered = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const ModelMode mode = trial % 2 ? ModelMode::detector : ModelMode::classifier;
      const ModelSpec spec = small_spec(mode);
      SceneSpec scene = small_scene();
      scene.seed = static_cast<std::uint64_t>(trial) + 100;
      const auto data = generate_dataset(scene, 4);
      const Batch b = batch_for(spec, data, static_cast<std::uint64_t>(trial));
      Model m = init_model(spec, static_cast<std::uint64_t>(trial));
      Sgd sgd(0.0);
      const double before = clean_loss(m, b);
      std::optional<AttentionConfig> a;
      if (trial % 4 < 2) a = full_ia();
      ia_training_step(m, sgd, b, 1e-3, {a, 0});
      lowered += clean_loss(m, b) < before;
    }
    CHECK(lowered >= 95);
  }

  TEST_CASE("loss decomposition") {
    const ModelSpec spec = small_spec(ModelMode::detector);
    const auto data = generate_dataset(small_scene(), 4);
    const Batch b = batch_for(spec, data, 1);
    Model m = init_model(spec, 1);
    Sgd sgd(0.9);
    const auto r = ia_training_step(m, sgd, b, 0.01, {full_ia(), 0});
    CHECK(std::abs(r.loss - (r.classification_loss + r.regression_loss)) <= 1e-12);
    CHECK(r.regression_loss > 0);
  }

  TEST_CASE("per-row probe equals the summed probe") {
    const ModelSpec spec = small_spec(ModelMode::detector);
    const auto data = generate_dataset(small_scene(), 3);
    const Batch b = batch_for(spec, data, 2);
    const Model m = init_model(spec, 3);
    std::vector<int> labels;
    for (const auto& p : b.proposals) labels.push_back(p.label);
    ForwardGraph g = forward_detector(m, b.images, b.proposals);
    const LossNodes l = detection_loss(g.tape, g.logits, *g.deltas, b.proposals, spec.background_class());
    const Tensor summed = probe_gradient(g, l, labels, Probe::gt_score);
    for (std::size_t r = 0; r < labels.size(); ++r) {
      Tape& t = g.tape;
      Tensor sel = Tensor::zeros(t.value(g.logits).shape());
      sel.at(static_cast<Index>(r), labels[r]) = 1;
      const NodeId s = sum(t, mul(t, g.logits, t.constant(sel)));
      const Tensor gr = backward_to(t, s, g.attach);
      const double scale = std::max(1.0, summed.slice(static_cast<Index>(r)).vec().cwiseAbs().maxCoeff());
      CHECK(max_abs_diff(gr.slice(static_cast<Index>(r)), summed.slice(static_cast<Index>(r))) <=
            1e-14 * scale);
    }
  }

  TEST_CASE("probe backward leaves parameters and their gradients untouched") {
    const ModelSpec spec = small_spec(ModelMode::classifier);
    const auto data = generate_dataset(small_scene(), 3);
    const Batch b = batch_for(spec, data, 2);
    const Model m = init_model(spec, 3);
    ForwardGraph g = forward_classifier(m, b.images);
    const LossNodes l = classification_loss(g.tape, g.logits, b.labels);
    std::map<std::string, Tensor> before;
    for (const auto& [name, id] : g.params) before.emplace(name, g.tape.value(id));
    for (Probe p : {Probe::gt_score, Probe::gt_loss}) probe_gradient(g, l, b.labels, p);
    for (const auto& [name, id] : g.params) {
      CHECK(g.tape.value(id) == before.at(name));
      CHECK_FALSE(g.tape.node(id).grad.has_value());
    }
  }

  TEST_CASE("mask subset size follows the apply probability") {
    gen::Rng rng(8);
    const Tensor f = gen::uniform({10, 4, 3, 3}, rng, 0.1, 1);
    const Tensor g = gen::uniform({10, 4, 3, 3}, rng, -1, 1);
    AttentionConfig a = full_ia();
    a.orientation = Orientation::spatial;
    for (double p : {0.0, 0.2, 0.25, 0.5, 1.0}) {
      a.apply_probability = p;
      Index masked = -1;
      const Tensor m = inverted_attention_masks(f, g, a, 3, &masked);
      CHECK(masked == std::lround(p * 10));
      Index touched = 0;
      for (Index r = 0; r < 10; ++r) touched += m.slice(r).vec().minCoeff() == 0.0;
      CHECK(touched == masked);
      CHECK(m == inverted_attention_masks(f, g, a, 3));
    }
    CHECK_THROWS_AS(inverted_attention_masks(f, Tensor::zeros({10, 4, 3}), a, 0), ShapeError);
  }
}

TEST_SUITE("train-io") {
  KeyValueConfig tiny_config(const std::filesystem::path& data, const std::filesystem::path& out,
                             const std::string& extra = "", int epochs = 2) {
    std::istringstream is("mode = detector\nimage_h = 16\nimage_w = 16\nbackbone = 4:3:1:1:2\n"
                          "roi_out = 2x2\nfc_dims = 8\nbatch_size = 4\nseed = 3\n"
                          "epochs = " + std::to_string(epochs) + "\n"
                          "train_data = " + data.string() + "\nout_dir = " + out.string() + "\n" +
                          extra);
    return KeyValueConfig::parse(is, "tiny");
  }

  TEST_CASE("two runs give identical checkpoints and logs") {
    const auto data = scratch("data");
    write_dataset(data, generate_dataset(small_scene(), 10));
    const auto a = scratch("run_a"), b = scratch("run_b");
    train(train_config_from(tiny_config(data, a, "ia = on\ncheckpoint_every = 1\n")));
    train(train_config_from(tiny_config(data, b, "ia = on\ncheckpoint_every = 1\n")));
    for (const char* f : {"final.bin", "final.index", "train.log", "epoch_001.bin", "epoch_002.bin"}) {
      CAPTURE(f);
      REQUIRE(std::filesystem::exists(a / f));
      CHECK(slurp(a / f) == slurp(b / f));
    }
    std::istringstream log(slurp(a / "train.log"));
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) ++lines;
    CHECK(lines == 2);
  }

  TEST_CASE("apply probability 0 reproduces baseline checkpoints") {
    const auto data = scratch("data0");
    write_dataset(data, generate_dataset(small_scene(), 10));
    const auto a = scratch("base"), b = scratch("ia0");
    train(train_config_from(tiny_config(data, a)));
    train(train_config_from(tiny_config(data, b, "ia = on\nia.apply_probability = 0\n")));
    CHECK(slurp(a / "final.bin") == slurp(b / "final.bin"));
    CHECK(slurp(a / "train.log") == slurp(b / "train.log"));
  }

  TEST_CASE("zero epochs writes only the initial model") {
    const auto data = scratch("data_z");
    write_dataset(data, generate_dataset(small_scene(), 4));
    const auto out = scratch("zero");
    const TrainConfig cfg = train_config_from(tiny_config(data, out, "", 0));
    const auto r = train(cfg);
    CHECK(r.log.empty());
    CHECK(slurp(out / "train.log").empty());
    const Model loaded = load_model(out / "final");
    const Model init = init_model(cfg.model, derive_seed(cfg.seed, Stream::init));
    for (const auto& [name, t] : init.params) CHECK(loaded.params.at(name) == t);
    CHECK_FALSE(std::filesystem::exists(out / "epoch_001.bin"));
  }

  TEST_CASE("config round trip and errors") {
    const auto cfg = train_config_from(tiny_config("d", "o", "ia = on\nia.strategy = overturn\n"));
    const auto again = train_config_from(to_config(cfg));
    CHECK(to_config(again).values() == to_config(cfg).values());
    REQUIRE(again.ia);
    CHECK(again.ia->strategy == Strategy::overturn);
    CHECK(again.ia->apply_probability == 1.0);

    std::istringstream cls("mode = classifier\nia = on\n");
    CHECK(train_config_from(KeyValueConfig::parse(cls, "c")).ia->apply_probability == 0.2);

    CHECK_THROWS_WITH_AS(train_config_from(tiny_config("d", "o", "colour = red\n")),
                         doctest::Contains("unknown key 'colour'"), ConfigError);
    CHECK_THROWS_AS(train_config_from(tiny_config("d", "o", "epochs = many\n")), ConfigError);
    CHECK_THROWS(train_config_from(tiny_config("d", "o", "ia = on\nia.strategy = sideways\n")));
    std::istringstream dup("a = 1\nb = 2\na = 3\n");
    CHECK_THROWS_WITH_AS(KeyValueConfig::parse(dup, "dup"), doctest::Contains("dup:3"), ConfigError);
    std::istringstream junk("just words\n");
    CHECK_THROWS_AS(KeyValueConfig::parse(junk, "junk"), ConfigError);
  }

  TEST_CASE("load_model rejects a mismatched checkpoint") {
    const auto out = scratch("mismatch");
    std::filesystem::create_directories(out);
    TrainConfig cfg;
    cfg.model = small_spec(ModelMode::classifier);
    save_model(out / "m", init_model(cfg.model, 1), cfg);
    CHECK(load_model(out / "m").params.size() == init_model(cfg.model, 1).params.size());
    TrainConfig other = cfg;
    other.model.fc_dims = {5};
    save_checkpoint(out / "m", init_model(other.model, 1).params);
    CHECK_THROWS_AS(load_model(out / "m"), ShapeError);
  }
}
