#include "ia/train.hpp"

#include "ia/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

namespace ia {

namespace {

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::vector<int> graph_labels(const ModelSpec& spec, const Batch& batch) {
  if (spec.mode == ModelMode::classifier) return batch.labels;
  std::vector<int> labels;
  labels.reserve(batch.proposals.size());
  for (const Proposal& p : batch.proposals) labels.push_back(p.label);
  return labels;
}

Index count_correct(const Tensor& logits, std::span<const int> labels) {
  Index hits = 0;
  const auto z = logits.matrix();
  for (Index n = 0; n < z.rows(); ++n) {
    Index arg = 0;
    z.row(n).maxCoeff(&arg);
    hits += arg == labels[n];
  }
  return hits;
}

}  // namespace

void Sgd::step(Model& model, const TensorDict& grads, double lr) {
  for (const auto& [name, g] : grads) {
    Tensor& p = model.params.at(name);
    auto [it, fresh] = velocity_.try_emplace(name, Tensor::zeros(p.shape()));
    Tensor& v = it->second;
    v.vec() = momentum_ * v.vec() + g.vec();
    p.vec() -= lr * v.vec();
  }
}

Tensor probe_gradient(ForwardGraph& graph, const LossNodes& loss, std::span<const int> labels,
                      Probe probe) {
  NodeId source = loss.classification;
  if (probe == Probe::gt_score) {
    const NodeId scores = gather_label_scores(graph.tape, graph.logits,
                                              std::vector<int>(labels.begin(), labels.end()));
    source = sum(graph.tape, scores);
  }
  return backward_to(graph.tape, source, graph.attach);
}

Tensor inverted_attention_masks(const Tensor& features, const Tensor& gradient,
                                const AttentionConfig& cfg, std::uint64_t step, Index* masked) {
  if (features.rank() != 4 || features.shape() != gradient.shape())
    throw ShapeError("inverted_attention_masks: features " + to_string(features.shape()) +
                     " and gradient " + to_string(gradient.shape()) + " must be equal 4-D");
  cfg.validate();
  const Index rows = features.dim(0);
  const Index k = std::clamp<Index>(std::lround(cfg.apply_probability * rows), 0, rows);

  // Per-batch subset without replacement.
  std::vector<Index> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), Index{0});
  auto subset_rng = make_rng(cfg.rng_seed, Stream::subset, step);
  for (Index i = 0; i < k; ++i) {
    std::uniform_int_distribution<Index> pick(i, rows - 1);
    std::swap(order[i], order[pick(subset_rng)]);
  }

  Tensor mask = Tensor::ones(features.shape());
  for (Index i = 0; i < k; ++i) {
    const Index r = order[i];
    auto rng = make_rng(cfg.rng_seed, Stream::mask, step, static_cast<std::uint64_t>(r));
    const auto m = generate_inverted_attention(features.slice(r), gradient.slice(r), cfg, rng);
    mask.set_slice(r, m.mask);
  }
  if (masked) *masked = k;
  return mask;
}

StepResult ia_training_step(Model& model, Sgd& sgd, const Batch& batch, double lr,
                            const StepOptions& opts) {
  const ModelSpec& spec = model.spec;
  ForwardOptions fo;
  fo.attach_ia = opts.ia.has_value();
  if (opts.ia) fo.placement = opts.ia->placement;

  ForwardGraph g = spec.mode == ModelMode::classifier
                       ? forward_classifier(model, batch.images, fo)
                       : forward_detector(model, batch.images, batch.proposals, fo);
  const std::vector<int> labels = graph_labels(spec, batch);
  const LossNodes loss =
      spec.mode == ModelMode::classifier
          ? classification_loss(g.tape, g.logits, labels)
          : detection_loss(g.tape, g.logits, *g.deltas, batch.proposals, spec.background_class());

  StepResult res;
  res.correct = count_correct(g.tape.value(g.logits), labels);
  res.total = static_cast<Index>(labels.size());

  if (opts.ia) {
    const Tensor grad = probe_gradient(g, loss, labels, opts.ia->probe);
    Tensor mask = inverted_attention_masks(g.tape.value(g.attach), grad, *opts.ia, opts.step,
                                           &res.masked);
    g.tape.replace_and_recompute(*g.mask, std::move(mask));
  }

  const auto by_node = backward_params(g.tape, loss.total);
  TensorDict grads;
  for (const auto& [name, id] : g.params) grads.emplace(name, by_node.at(id));

  res.loss = g.tape.value(loss.total)[0];
  res.classification_loss = g.tape.value(loss.classification)[0];
  res.regression_loss = loss.regression ? g.tape.value(*loss.regression)[0] : 0.0;
  if (!std::isfinite(res.loss))
    throw NonFiniteError("training step " + std::to_string(opts.step) + ": non-finite loss");
  sgd.step(model, grads, lr);
  return res;
}

Batch make_batch(const ModelSpec& spec, std::span<const DetectionSample> data,
                 std::span<const std::size_t> order, const ProposalConfig& proposals,
                 std::uint64_t seed, int epoch) {
  Batch b;
  std::vector<const Tensor*> images;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const DetectionSample& s = data[order[i]];
    if (s.objects.empty())
      throw std::runtime_error("sample " + std::to_string(s.index) + " has no objects");
    images.push_back(&s.image);
    if (spec.mode == ModelMode::classifier) {
      b.labels.push_back(s.objects.front().cls);
    } else {
      auto rng = make_rng(seed, Stream::proposals, static_cast<std::uint64_t>(epoch),
                          static_cast<std::uint64_t>(s.index));
      auto props = make_proposals(s.objects, static_cast<double>(spec.image_w),
                                  static_cast<double>(spec.image_h), spec.num_classes, rng,
                                  proposals);
      for (auto& p : props) {
        p.sample = static_cast<Index>(i);
        b.proposals.push_back(p);
      }
    }
  }
  b.images = stack_images(images);
  return b;
}

namespace {

TrainResult run_training(const TrainConfig& cfg, std::span<const DetectionSample> data,
                         const std::function<void(int, const Model&)>& on_epoch) {
  cfg.validate();
  if (data.empty()) throw std::runtime_error("train: empty dataset");
  for (const auto& s : data)
    for (const auto& o : s.objects)
      if (o.cls < 0 || o.cls >= cfg.model.num_classes)
        throw std::runtime_error("train: sample " + std::to_string(s.index) + " has class " +
                                 std::to_string(o.cls) + " outside the model's classes");
  TrainResult out{init_model(cfg.model, derive_seed(cfg.seed, Stream::init)), {}};
  Sgd sgd(cfg.momentum);
  std::uint64_t step = 0;
  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = make_rng(cfg.seed, Stream::shuffle, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = cfg.lr_at(epoch);
    double loss_sum = 0;
    Index correct = 0, total = 0, images = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Batch batch = make_batch(cfg.model, data, idx, cfg.proposals, cfg.seed, epoch);
      const StepResult r = ia_training_step(out.model, sgd, batch, lr, {cfg.ia, step++});
      loss_sum += r.loss * static_cast<double>(idx.size());
      images += static_cast<Index>(idx.size());
      correct += r.correct;
      total += r.total;
    }
    out.log.push_back({epoch + 1, loss_sum / static_cast<double>(images),
                       static_cast<double>(correct) / static_cast<double>(total), lr, cfg.seed});
    if (on_epoch) on_epoch(epoch + 1, out.model);
  }
  return out;
}

}  // namespace

TrainResult train_model(const TrainConfig& cfg, std::span<const DetectionSample> data) {
  return run_training(cfg, data, {});
}

std::string format_log_line(const EpochLog& e) {
  return std::to_string(e.epoch) + "\t" + shortest(e.loss) + "\t" + shortest(e.metric) + "\t" +
         shortest(e.lr) + "\t" + std::to_string(e.seed);
}

TrainResult train(const TrainConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("train: out_dir is required");
  if (cfg.train_data.empty()) throw ConfigError("train: train_data is required");
  const auto data = read_dataset(cfg.train_data);
  std::filesystem::create_directories(cfg.out_dir);
  to_config(cfg).save(cfg.out_dir / "effective.cfg");

  std::ofstream log(cfg.out_dir / "train.log", std::ios::binary);
  if (!log) throw std::runtime_error("train: cannot write log in " + cfg.out_dir.string());
  auto on_epoch = [&](int epoch, const Model& m) {
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d", epoch);
      save_model(cfg.out_dir / name, m, cfg);
    }
  };
  TrainResult result = run_training(cfg, data, on_epoch);
  for (const auto& e : result.log) log << format_log_line(e) << '\n';
  save_model(cfg.out_dir / "final", result.model, cfg);
  return result;
}

void save_model(const std::filesystem::path& base, const Model& model, const TrainConfig& cfg) {
  save_checkpoint(base, model.params);
  TrainConfig echo = cfg;
  echo.model = model.spec;
  to_config(echo).save(base.string() + ".cfg");
}

Model load_model(const std::filesystem::path& base, TrainConfig* cfg_out) {
  const TrainConfig cfg = train_config_from(KeyValueConfig::load(base.string() + ".cfg"));
  Model m = init_model(cfg.model, 0);
  TensorDict loaded = load_checkpoint(base);
  for (auto& [name, t] : m.params) {
    auto it = loaded.find(name);
    if (it == loaded.end())
      throw std::runtime_error("load_model: checkpoint lacks tensor '" + name + "'");
    if (it->second.shape() != t.shape())
      throw ShapeError("load_model: tensor '" + name + "' has shape " +
                       to_string(it->second.shape()) + ", model expects " + to_string(t.shape()));
    t = std::move(it->second);
  }
  if (cfg_out) *cfg_out = cfg;
  return m;
}

}  // namespace ia
