#include "ia/eval.hpp"

#include "ia/heatmap.hpp"
#include "ia/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace ia {

double average_precision(std::vector<std::pair<double, bool>> ranked, Index num_gt) {
  if (num_gt <= 0 || ranked.empty()) return 0.0;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  const std::size_t n = ranked.size();
  std::vector<double> precision(n), recall(n);
  Index tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += ranked[i].second;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  // Monotone envelope from the right, then sum over recall steps.
  for (std::size_t i = n - 1; i-- > 0;) precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

MapResult mean_average_precision(std::span<const Detection> detections,
                                 std::span<const std::vector<GtObject>> ground_truth,
                                 int num_classes, double iou_threshold) {
  MapResult out;
  out.class_ap.assign(static_cast<std::size_t>(num_classes),
                      std::numeric_limits<double>::quiet_NaN());
  double total = 0;
  int counted = 0;
  for (int c = 0; c < num_classes; ++c) {
    Index num_gt = 0;
    std::vector<std::vector<char>> used(ground_truth.size());
    for (std::size_t i = 0; i < ground_truth.size(); ++i) {
      used[i].assign(ground_truth[i].size(), 0);
      for (const auto& g : ground_truth[i]) num_gt += g.cls == c;
    }
    if (num_gt == 0) continue;

    std::vector<const Detection*> dets;
    for (const auto& d : detections)
      if (d.cls == c) dets.push_back(&d);
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection* a, const Detection* b) { return a->score > b->score; });
    std::vector<std::pair<double, bool>> ranked;
    for (const Detection* d : dets) {
      bool tp = false;
      if (d->image >= 0 && static_cast<std::size_t>(d->image) < ground_truth.size()) {
        const auto& gts = ground_truth[d->image];
        double best = 0;
        int arg = -1;
        for (std::size_t j = 0; j < gts.size(); ++j) {
          if (gts[j].cls != c) continue;
          const double v = iou(d->box, gts[j].box);
          if (v > best) {
            best = v;
            arg = static_cast<int>(j);
          }
        }
        if (arg >= 0 && best >= iou_threshold && !used[d->image][arg]) {
          used[d->image][arg] = 1;
          tp = true;
        }
      }
      ranked.emplace_back(d->score, tp);
    }
    out.class_ap[c] = average_precision(std::move(ranked), num_gt);
    total += out.class_ap[c];
    ++counted;
  }
  out.map = counted ? total / counted : 0.0;
  return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> keep;
  for (const Detection& d : dets) {
    const bool suppressed = std::any_of(keep.begin(), keep.end(), [&](const Detection& k) {
      return k.image == d.image && k.cls == d.cls && iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) keep.push_back(d);
  }
  return keep;
}

namespace {

Tensor batch_of_one(const Tensor& image) {
  const Tensor* p = &image;
  return stack_images(std::span<const Tensor* const>(&p, 1));
}

Index argmax_row(const Tensor& logits, Index row) {
  Index arg = 0;
  logits.matrix().row(row).maxCoeff(&arg);
  return arg;
}

}  // namespace

std::vector<Detection> detect(const Model& model, const Tensor& image,
                              std::span<const Proposal> proposals, Index image_index,
                              double min_score) {
  std::vector<Proposal> props(proposals.begin(), proposals.end());
  for (auto& p : props) p.sample = 0;
  const ForwardGraph g = forward_detector(model, batch_of_one(image), props);
  const auto z = g.tape.value(g.logits).matrix();
  const Tensor& deltas = g.tape.value(*g.deltas);
  const double W = static_cast<double>(model.spec.image_w), H = static_cast<double>(model.spec.image_h);
  std::vector<Detection> out;
  for (Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    const Eigen::RowVectorXd e = (z.row(r).array() - m).exp().matrix();
    const double denom = e.sum();
    const Box box = clip_box(decode_box(props[r].box, {deltas.at(r, 0), deltas.at(r, 1),
                                                       deltas.at(r, 2), deltas.at(r, 3)}),
                             W, H);
    for (int c = 0; c < model.spec.num_classes; ++c) {
      const double score = e[c] / denom;
      if (score >= min_score) out.push_back({image_index, c, score, box});
    }
  }
  return nms(std::move(out));
}

std::vector<Proposal> eval_proposals(const ModelSpec& spec, const DetectionSample& sample,
                                     const ProposalConfig& cfg) {
  auto rng = make_rng(sample.seed, Stream::eval, static_cast<std::uint64_t>(sample.index));
  return make_proposals(sample.objects, static_cast<double>(spec.image_w),
                        static_cast<double>(spec.image_h), spec.num_classes, rng, cfg);
}

RegionAttention region_attention(const Model& model, const Tensor& image, int cls,
                                 const std::optional<Box>& roi, Probe probe) {
  const ModelSpec& spec = model.spec;
  const Tensor batch = batch_of_one(image);
  RegionAttention out;
  ForwardGraph g;
  LossNodes loss;
  std::vector<int> labels{cls};
  if (spec.mode == ModelMode::classifier) {
    g = forward_classifier(model, batch);
    loss = classification_loss(g.tape, g.logits, labels);
    out.region = {0, 0, static_cast<double>(spec.image_w), static_cast<double>(spec.image_h)};
  } else {
    const Box box = roi.value_or(
        Box{0, 0, static_cast<double>(spec.image_w), static_cast<double>(spec.image_h)});
    const Proposal p{0, box, cls, {0, 0, 0, 0}, -1};
    g = forward_detector(model, batch, std::span<const Proposal>(&p, 1));
    loss = detection_loss(g.tape, g.logits, *g.deltas, std::span<const Proposal>(&p, 1),
                          spec.background_class());
    const double s = spec.feature_stride();
    const Shape f = spec.feature_shape();
    const RoiCells cells = snap_roi({0, box.x1 / s, box.y1 / s, box.x2 / s, box.y2 / s}, f[1], f[2]);
    out.region = clip_box({cells.x0 * s, cells.y0 * s, cells.x1 * s, cells.y1 * s},
                          static_cast<double>(spec.image_w), static_cast<double>(spec.image_h));
  }
  const Tensor grad = probe_gradient(g, loss, labels, probe);
  out.map = gradcam_map(g.tape.value(g.attach).slice(0), grad.slice(0)).map;
  return out;
}

namespace {

// Shift-to-zero, sum-to-one distribution; uniform for constant maps.
Eigen::VectorXd attention_distribution(const Tensor& map) {
  Eigen::VectorXd p = map.vec().array() - map.vec().minCoeff();
  const double s = p.sum();
  if (!(s > 0)) return Eigen::VectorXd::Constant(map.size(), 1.0 / static_cast<double>(map.size()));
  return p / s;
}

}  // namespace

double normalized_entropy(const Tensor& map) {
  if (map.size() < 2) return 0.0;
  const Eigen::VectorXd p = attention_distribution(map);
  double h = 0;
  for (Index i = 0; i < p.size(); ++i)
    if (p[i] > 0) h -= p[i] * std::log(p[i]);
  return h / std::log(static_cast<double>(map.size()));
}

double coverage_at(const Tensor& map, double q) {
  Eigen::VectorXd p = attention_distribution(map);
  std::sort(p.data(), p.data() + p.size(), std::greater<>());
  double acc = 0;
  for (Index i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (acc >= q * (1 - 1e-12)) return static_cast<double>(i + 1) / static_cast<double>(p.size());
  }
  return 1.0;
}

AttentionStats attention_stats(const Model& model, std::span<const DetectionSample> data,
                               double q) {
  AttentionStats st;
  for (const auto& s : data) {
    const std::size_t count = model.spec.mode == ModelMode::classifier ? 1 : s.objects.size();
    for (std::size_t o = 0; o < count && o < s.objects.size(); ++o) {
      const auto& obj = s.objects[o];
      const auto att = region_attention(model, s.image, obj.cls,
                                        model.spec.mode == ModelMode::detector
                                            ? std::optional<Box>(obj.box)
                                            : std::nullopt);
      st.mean_entropy += normalized_entropy(att.map);
      st.mean_coverage += coverage_at(att.map, q);
      ++st.objects;
    }
  }
  if (st.objects) {
    st.mean_entropy /= static_cast<double>(st.objects);
    st.mean_coverage /= static_cast<double>(st.objects);
  }
  return st;
}

Tensor image_space_attention(const RegionAttention& att, Index height, Index width) {
  Tensor out = Tensor::zeros({height, width});
  const Index x0 = std::clamp<Index>(static_cast<Index>(std::floor(att.region.x1)), 0, width);
  const Index y0 = std::clamp<Index>(static_cast<Index>(std::floor(att.region.y1)), 0, height);
  const Index x1 = std::clamp<Index>(static_cast<Index>(std::ceil(att.region.x2)), 0, width);
  const Index y1 = std::clamp<Index>(static_cast<Index>(std::ceil(att.region.y2)), 0, height);
  if (x1 <= x0 || y1 <= y0) return out;
  const Tensor up = bilinear_upsample(normalize_min_max(att.map), y1 - y0, x1 - x0);
  for (Index y = y0; y < y1; ++y)
    for (Index x = x0; x < x1; ++x) out.at(y, x) = up.at(y - y0, x - x0);
  return out;
}

std::pair<Index, Index> extreme_patch(const Tensor& map, Index patch, bool minimum) {
  const Index H = map.dim(0), W = map.dim(1);
  if (patch < 1 || patch > H || patch > W)
    throw std::invalid_argument("extreme_patch: patch " + std::to_string(patch) +
                                " does not fit the map");
  // Summed-area table with a zero border.
  RowMatrix<double> sat = RowMatrix<double>::Zero(H + 1, W + 1);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      sat(y + 1, x + 1) = map.at(y, x) + sat(y, x + 1) + sat(y + 1, x) - sat(y, x);
  std::pair<Index, Index> best{0, 0};
  double best_v = 0;
  bool first = true;
  for (Index y = 0; y + patch <= H; ++y)
    for (Index x = 0; x + patch <= W; ++x) {
      const double v = sat(y + patch, x + patch) - sat(y, x + patch) - sat(y + patch, x) + sat(y, x);
      if (first || (minimum ? v < best_v : v > best_v)) {
        best = {y, x};
        best_v = v;
        first = false;
      }
    }
  return best;
}

namespace {

Index patch_side(const OcclusionOptions& opts, const Box& box) {
  if (opts.patch >= 0) return opts.patch;
  const double side = std::max(box.width(), box.height());
  return std::max<Index>(1, std::lround(opts.patch_fraction * side));
}

Tensor occlude(const Tensor& image, Index y0, Index x0, Index patch, double fill) {
  Tensor out = image;
  for (Index c = 0; c < image.dim(0); ++c)
    for (Index y = y0; y < y0 + patch; ++y)
      for (Index x = x0; x < x0 + patch; ++x) out.at(c, y, x) = fill;
  return out;
}

bool recalled(std::span<const Detection> dets, const GtObject& obj) {
  return std::any_of(dets.begin(), dets.end(), [&](const Detection& d) {
    return d.cls == obj.cls && d.score >= 0.5 && iou(d.box, obj.box) >= 0.5;
  });
}

}  // namespace

OcclusionResult occlusion_sensitivity(const Model& model, std::span<const DetectionSample> data,
                                      const OcclusionOptions& opts) {
  const ModelSpec& spec = model.spec;
  OcclusionResult res;
  Index clean_hits = 0, occluded_hits = 0;
  auto occluded_image = [&](const Tensor& image, const GtObject& obj) {
    const Index patch = patch_side(opts, obj.box);
    if (patch > spec.image_h || patch > spec.image_w)
      throw std::invalid_argument("occlusion_sensitivity: patch " + std::to_string(patch) +
                                  " larger than the image");
    if (patch == 0) return image;
    const auto att = region_attention(
        model, image, obj.cls,
        spec.mode == ModelMode::detector ? std::optional<Box>(obj.box) : std::nullopt);
    const auto [y0, x0] =
        extreme_patch(image_space_attention(att, spec.image_h, spec.image_w), patch, opts.minimum);
    return occlude(image, y0, x0, patch, opts.fill);
  };

  for (const auto& s : data) {
    if (s.objects.empty()) continue;
    if (spec.mode == ModelMode::classifier) {
      const GtObject& obj = s.objects.front();
      const Tensor occ = occluded_image(s.image, obj);
      const ForwardGraph clean = forward_classifier(model, batch_of_one(s.image));
      const ForwardGraph hidden = forward_classifier(model, batch_of_one(occ));
      clean_hits += argmax_row(clean.tape.value(clean.logits), 0) == obj.cls;
      occluded_hits += argmax_row(hidden.tape.value(hidden.logits), 0) == obj.cls;
      ++res.objects;
    } else {
      const auto props = eval_proposals(spec, s, opts.proposals);
      const auto clean = detect(model, s.image, props, 0);
      for (const auto& obj : s.objects) {
        const auto hidden = detect(model, occluded_image(s.image, obj), props, 0);
        clean_hits += recalled(clean, obj);
        occluded_hits += recalled(hidden, obj);
        ++res.objects;
      }
    }
  }
  if (res.objects) {
    res.clean = static_cast<double>(clean_hits) / static_cast<double>(res.objects);
    res.occluded = static_cast<double>(occluded_hits) / static_cast<double>(res.objects);
  }
  return res;
}

double classification_accuracy(const Model& model, std::span<const DetectionSample> data) {
  if (data.empty()) throw std::invalid_argument("classification_accuracy: empty dataset");
  Index hits = 0;
  constexpr std::size_t chunk = 50;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    std::vector<const Tensor*> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(&data[i].image);
    const ForwardGraph g = forward_classifier(model, stack_images(images));
    const Tensor& z = g.tape.value(g.logits);
    for (std::size_t i = start; i < end; ++i)
      hits += argmax_row(z, static_cast<Index>(i - start)) == data[i].objects.front().cls;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

EvalReport evaluate(const Model& model, const KeyValueConfig& config_echo,
                    std::span<const DetectionSample> data, const EvalOptions& opts) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const auto t0 = std::chrono::steady_clock::now();
  EvalReport r;
  r.mode = model.spec.mode;
  if (r.mode == ModelMode::classifier) {
    r.accuracy = classification_accuracy(model, data);
  } else {
    std::vector<Detection> dets;
    std::vector<std::vector<GtObject>> gts;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto props = eval_proposals(model.spec, data[i], opts.proposals);
      const auto d = detect(model, data[i].image, props, static_cast<Index>(i));
      dets.insert(dets.end(), d.begin(), d.end());
      gts.push_back(data[i].objects);
    }
    const MapResult m = mean_average_precision(dets, gts, model.spec.num_classes);
    r.class_ap = m.class_ap;
    r.map = m.map;
  }
  r.occlusion = occlusion_sensitivity(model, data, opts.occlusion);
  r.attention = attention_stats(model, data, opts.coverage_q);
  r.config = config_echo.values();
  r.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::string to_json(const EvalReport& r) {
  using nlohmann::json;
  json j;
  j["mode"] = std::string(to_string(r.mode));
  if (r.accuracy) j["accuracy"] = *r.accuracy;
  if (r.map) {
    json aps = json::array();
    for (double ap : r.class_ap) aps.push_back(std::isnan(ap) ? json(nullptr) : json(ap));
    j["class_ap"] = aps;
    j["map"] = *r.map;
  }
  j["occlusion"] = {{"clean", r.occlusion.clean},
                    {"occluded", r.occlusion.occluded},
                    {"drop", r.occlusion.drop()},
                    {"objects", r.occlusion.objects}};
  j["attention"] = {{"mean_entropy", r.attention.mean_entropy},
                    {"mean_coverage", r.attention.mean_coverage},
                    {"objects", r.attention.objects}};
  j["runtime_seconds"] = r.runtime_seconds;
  j["config"] = r.config;
  return j.dump(2);
}

}  // namespace ia
