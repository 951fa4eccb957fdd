#include "ia/model.hpp"

#include <cmath>
#include <stdexcept>

namespace ia {

std::string_view to_string(ModelMode m) {
  return m == ModelMode::detector ? "detector" : "classifier";
}

ModelMode parse_model_mode(std::string_view s) {
  if (s == "classifier") return ModelMode::classifier;
  if (s == "detector") return ModelMode::detector;
  throw std::invalid_argument("unknown model mode '" + std::string(s) + "'");
}

Shape ModelSpec::feature_shape() const {
  Index c = in_channels, h = image_h, w = image_w;
  for (std::size_t i = 0; i < backbone.size(); ++i) {
    const auto& l = backbone[i];
    if (l.out_channels < 1 || l.kernel < 1 || l.stride < 1 || l.pad < 0 || l.pool < 0)
      throw ShapeError("model: invalid parameters in conv layer " + std::to_string(i));
    const ConvSpec cs{c, l.out_channels, l.kernel, l.kernel, l.stride, l.pad};
    h = cs.out_extent(h, l.kernel);
    w = cs.out_extent(w, l.kernel);
    if (l.pool > 0) {
      if (h < l.pool || w < l.pool)
        throw ShapeError("model: pool window larger than feature map at layer " +
                         std::to_string(i));
      h = (h - l.pool) / l.pool + 1;
      w = (w - l.pool) / l.pool + 1;
    }
    if (h < 1 || w < 1)
      throw ShapeError("model: empty feature map after conv layer " + std::to_string(i));
    c = l.out_channels;
  }
  return {c, h, w};
}

double ModelSpec::feature_stride() const {
  double s = 1;
  for (const auto& l : backbone) s *= static_cast<double>(l.stride * std::max<Index>(l.pool, 1));
  return s;
}

void ModelSpec::validate() const {
  if (image_h < 1 || image_w < 1 || in_channels < 1)
    throw ShapeError("model: invalid input shape");
  if (num_classes < 1) throw std::invalid_argument("model: num_classes must be >= 1");
  if (roi_out_h < 1 || roi_out_w < 1) throw ShapeError("model: roi output must be at least 1x1");
  for (Index d : fc_dims)
    if (d < 1) throw ShapeError("model: fully connected widths must be positive");
  feature_shape();
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

Index head_input(const ModelSpec& s) {
  const Shape f = s.feature_shape();
  return s.mode == ModelMode::detector ? f[0] * s.roi_out_h * s.roi_out_w : f[0] * f[1] * f[2];
}

std::string layer_name(const char* prefix, std::size_t i, const char* part) {
  return std::string(prefix) + std::to_string(i) + "." + part;
}

// fc trunk + heads on a flattened [rows, D] node.
void build_head(const Model& m, ForwardGraph& g, NodeId flat) {
  Tape& t = g.tape;
  auto param = [&](const std::string& name) {
    const NodeId id = t.parameter(m.params.at(name), name);
    g.params[name] = id;
    return id;
  };
  NodeId x = flat;
  for (std::size_t i = 0; i < m.spec.fc_dims.size(); ++i) {
    const NodeId w = param(layer_name("fc", i, "weight"));
    const NodeId b = param(layer_name("fc", i, "bias"));
    x = relu(t, linear(t, x, w, b));
  }
  const NodeId cw = param("cls.weight");
  const NodeId cb = param("cls.bias");
  g.logits = linear(t, x, cw, cb);
  if (m.spec.mode == ModelMode::detector) {
    const NodeId bw = param("box.weight");
    const NodeId bb = param("box.bias");
    g.deltas = linear(t, x, bw, bb);
  }
}

NodeId attach_mask(ForwardGraph& g, NodeId at) {
  g.attach = at;
  g.mask = g.tape.constant(Tensor::ones(g.tape.value(at).shape()), "ia.mask");
  return refine_features(g.tape, at, *g.mask);
}

NodeId build_backbone(const Model& m, ForwardGraph& g, const Tensor& images) {
  const ModelSpec& s = m.spec;
  if (images.rank() != 4 || images.dim(1) != s.in_channels || images.dim(2) != s.image_h ||
      images.dim(3) != s.image_w)
    throw ShapeError("model: images " + to_string(images.shape()) + " do not match [N," +
                     std::to_string(s.in_channels) + "," + std::to_string(s.image_h) + "," +
                     std::to_string(s.image_w) + "]");
  Tape& t = g.tape;
  g.image = t.constant(images, "image");
  NodeId x = g.image;
  Index c = s.in_channels;
  for (std::size_t i = 0; i < s.backbone.size(); ++i) {
    const auto& l = s.backbone[i];
    const std::string wn = layer_name("conv", i, "weight"), bn = layer_name("conv", i, "bias");
    const NodeId w = t.parameter(m.params.at(wn), wn);
    const NodeId b = t.parameter(m.params.at(bn), bn);
    g.params[wn] = w;
    g.params[bn] = b;
    x = relu(t, conv2d(t, x, w, b, ConvSpec{c, l.out_channels, l.kernel, l.kernel, l.stride, l.pad}));
    if (l.pool > 0) x = maxpool2d(t, x, l.pool, l.pool);
    c = l.out_channels;
  }
  g.features = x;
  return x;
}

}  // namespace

Model init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Model m{spec, {}};
  Index c = spec.in_channels;
  for (std::size_t i = 0; i < spec.backbone.size(); ++i) {
    const auto& l = spec.backbone[i];
    const Index fan_in = c * l.kernel * l.kernel;
    m.params[layer_name("conv", i, "weight")] =
        normal_tensor({l.out_channels, c, l.kernel, l.kernel}, std::sqrt(2.0 / fan_in), rng);
    m.params[layer_name("conv", i, "bias")] = Tensor::zeros({l.out_channels});
    c = l.out_channels;
  }
  Index d = head_input(spec);
  for (std::size_t i = 0; i < spec.fc_dims.size(); ++i) {
    m.params[layer_name("fc", i, "weight")] =
        normal_tensor({d, spec.fc_dims[i]}, std::sqrt(2.0 / d), rng);
    m.params[layer_name("fc", i, "bias")] = Tensor::zeros({spec.fc_dims[i]});
    d = spec.fc_dims[i];
  }
  m.params["cls.weight"] = normal_tensor({d, spec.logit_count()}, std::sqrt(1.0 / d), rng);
  m.params["cls.bias"] = Tensor::zeros({spec.logit_count()});
  if (spec.mode == ModelMode::detector) {
    m.params["box.weight"] = normal_tensor({d, 4}, 0.01, rng);
    m.params["box.bias"] = Tensor::zeros({4});
  }
  return m;
}

std::vector<Proposal> make_proposals(std::span<const GtObject> gts, double image_w,
                                     double image_h, int num_classes, std::mt19937_64& rng,
                                     const ProposalConfig& cfg) {
  if (gts.empty()) throw std::invalid_argument("make_proposals: no ground-truth boxes");
  std::uniform_real_distribution<double> sym(-1.0, 1.0), unit(0.0, 1.0);
  std::vector<Proposal> out;

  auto label = [&](Proposal& p) {
    double best = 0;
    int arg = -1;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      const double v = iou(p.box, gts[i].box);
      if (v > best) {
        best = v;
        arg = static_cast<int>(i);
      }
    }
    if (arg >= 0 && best >= 0.5) {
      p.label = gts[arg].cls;
      p.gt_index = arg;
      p.target = encode_box(p.box, gts[arg].box);
    } else {
      p.label = num_classes;
      p.gt_index = -1;
      p.target = {0, 0, 0, 0};
    }
  };

  for (const GtObject& g : gts) {
    for (int k = 0; k < cfg.per_gt; ++k) {
      Proposal p;
      if (cfg.jitter == 0) {
        p.box = g.box;
      } else {
        const double w = g.box.width(), h = g.box.height();
        const double cx = g.box.x1 + 0.5 * w + cfg.jitter * sym(rng) * w;
        const double cy = g.box.y1 + 0.5 * h + cfg.jitter * sym(rng) * h;
        const double nw = w * (1 + cfg.jitter * sym(rng));
        const double nh = h * (1 + cfg.jitter * sym(rng));
        p.box = clip_box({cx - 0.5 * nw, cy - 0.5 * nh, cx + 0.5 * nw, cy + 0.5 * nh}, image_w,
                         image_h);
        if (p.box.width() < 1 || p.box.height() < 1) p.box = g.box;
      }
      label(p);
      out.push_back(p);
    }
  }

  const double lo = 0.25 * std::min(image_w, image_h), hi = 0.6 * std::min(image_w, image_h);
  for (int k = 0; k < cfg.background; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const double w = lo + unit(rng) * (hi - lo), h = lo + unit(rng) * (hi - lo);
      const double x1 = unit(rng) * (image_w - w), y1 = unit(rng) * (image_h - h);
      Proposal p;
      p.box = {x1, y1, x1 + w, y1 + h};
      placed = std::all_of(gts.begin(), gts.end(),
                           [&](const GtObject& g) { return iou(g.box, p.box) < 0.5; });
      if (placed) {
        label(p);
        out.push_back(p);
      }
    }
    if (!placed)
      throw std::runtime_error("make_proposals: cannot place a background box with IoU < 0.5");
  }
  return out;
}

ForwardGraph forward_classifier(const Model& m, const Tensor& images, const ForwardOptions& opts) {
  if (m.spec.mode != ModelMode::classifier)
    throw std::invalid_argument("forward_classifier: model is not a classifier");
  ForwardGraph g;
  NodeId x = build_backbone(m, g, images);
  g.attach = x;
  if (opts.attach_ia) x = attach_mask(g, x);
  const Tensor& f = g.tape.value(g.features);
  const NodeId flat = reshape(g.tape, x, {f.dim(0), f.size() / f.dim(0)});
  build_head(m, g, flat);
  return g;
}

ForwardGraph forward_detector(const Model& m, const Tensor& images,
                              std::span<const Proposal> proposals, const ForwardOptions& opts) {
  if (m.spec.mode != ModelMode::detector)
    throw std::invalid_argument("forward_detector: model is not a detector");
  if (proposals.empty()) throw std::invalid_argument("forward_detector: no proposals");
  ForwardGraph g;
  NodeId x = build_backbone(m, g, images);
  g.attach = x;
  if (opts.attach_ia && opts.placement == Placement::full_feature) x = attach_mask(g, x);

  const double scale = 1.0 / m.spec.feature_stride();
  std::vector<RoiBox> rois;
  rois.reserve(proposals.size());
  for (const Proposal& p : proposals)
    rois.push_back({p.sample, p.box.x1 * scale, p.box.y1 * scale, p.box.x2 * scale,
                    p.box.y2 * scale});
  NodeId r = roi_pool(g.tape, x, std::move(rois), m.spec.roi_out_h, m.spec.roi_out_w);
  g.roi_features = r;
  if (opts.placement == Placement::roi_feature) {
    g.attach = r;
    if (opts.attach_ia) r = attach_mask(g, r);
  }
  const Tensor& rv = g.tape.value(*g.roi_features);
  const NodeId flat = reshape(g.tape, r, {rv.dim(0), rv.size() / rv.dim(0)});
  build_head(m, g, flat);
  return g;
}

LossNodes detection_loss(Tape& tape, NodeId logits, NodeId deltas,
                         std::span<const Proposal> proposals, int background_class) {
  if (proposals.empty()) throw std::invalid_argument("detection_loss: no proposals");
  const Index R = static_cast<Index>(proposals.size());
  std::vector<int> labels;
  std::vector<double> weights;
  Tensor targets({R, 4});
  for (Index r = 0; r < R; ++r) {
    const Proposal& p = proposals[r];
    labels.push_back(p.label);
    const bool fg = p.label != background_class;
    weights.push_back(fg ? 1.0 : 0.0);
    for (Index k = 0; k < 4; ++k) targets.at(r, k) = p.target[k];
  }
  LossNodes out;
  out.classification = softmax_xent(tape, logits, std::move(labels));
  const NodeId target_node = tape.constant(std::move(targets), "box.targets");
  out.regression = l1_reg_loss(tape, deltas, target_node, std::move(weights));
  out.total = add(tape, out.classification, *out.regression);
  return out;
}

LossNodes classification_loss(Tape& tape, NodeId logits, std::span<const int> labels) {
  LossNodes out;
  out.classification = softmax_xent(tape, logits, std::vector<int>(labels.begin(), labels.end()));
  out.total = out.classification;
  return out;
}

Tensor stack_images(std::span<const Tensor* const> images) {
  if (images.empty()) throw ShapeError("stack_images: no images");
  const Shape s = images.front()->shape();
  Shape out_shape{static_cast<Index>(images.size())};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  Tensor out(out_shape);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->shape() != s) throw ShapeError("stack_images: mixed image shapes");
    out.set_slice(static_cast<Index>(i), *images[i]);
  }
  return out;
}

}  // namespace ia
