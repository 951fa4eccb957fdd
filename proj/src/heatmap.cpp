#include "ia/heatmap.hpp"

#include "ia/eval.hpp"
#include "ia/ppm.hpp"

namespace ia {

std::array<double, 3> color_ramp(double t) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {0, 0, 1}, {0, 1, 1}, {0, 1, 0}, {1, 1, 0}, {1, 0, 0}}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), 3);
  const double f = t - static_cast<double>(i);
  std::array<double, 3> c{};
  for (std::size_t k = 0; k < 3; ++k) c[k] = (1 - f) * stops[i][k] + f * stops[i + 1][k];
  return c;
}

Tensor overlay_heatmap(const Tensor& image, const Tensor& map, const Box& region, double alpha) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError("overlay_heatmap: expected a [3,H,W] image, got " + to_string(image.shape()));
  const Index H = image.dim(1), W = image.dim(2);
  const Index x0 = std::clamp<Index>(static_cast<Index>(std::floor(region.x1)), 0, W);
  const Index y0 = std::clamp<Index>(static_cast<Index>(std::floor(region.y1)), 0, H);
  const Index x1 = std::clamp<Index>(static_cast<Index>(std::ceil(region.x2)), 0, W);
  const Index y1 = std::clamp<Index>(static_cast<Index>(std::ceil(region.y2)), 0, H);
  Tensor out = image;
  if (x1 <= x0 || y1 <= y0) return out;
  const Tensor up = bilinear_upsample(normalize_min_max(map), y1 - y0, x1 - x0);
  for (Index y = y0; y < y1; ++y)
    for (Index x = x0; x < x1; ++x) {
      const auto color = color_ramp(up.at(y - y0, x - x0));
      for (Index c = 0; c < 3; ++c)
        out.at(c, y, x) = (1 - alpha) * image.at(c, y, x) + alpha * color[c];
    }
  return out;
}

namespace {

int predicted_class(const Model& model, const Tensor& image, const std::optional<Box>& roi) {
  const Tensor* p = &image;
  const Tensor batch = stack_images(std::span<const Tensor* const>(&p, 1));
  Eigen::RowVectorXd z;
  if (model.spec.mode == ModelMode::classifier) {
    const ForwardGraph g = forward_classifier(model, batch);
    z = g.tape.value(g.logits).matrix().row(0);
  } else {
    const Box box = roi.value_or(Box{0, 0, static_cast<double>(model.spec.image_w),
                                     static_cast<double>(model.spec.image_h)});
    const Proposal prop{0, box, 0, {}, -1};
    const ForwardGraph g = forward_detector(model, batch, std::span<const Proposal>(&prop, 1));
    z = g.tape.value(g.logits).matrix().row(0).head(model.spec.num_classes);
  }
  Index arg = 0;
  z.maxCoeff(&arg);
  return static_cast<int>(arg);
}

}  // namespace

Tensor render_attention(const Model& model, const Tensor& image, std::optional<int> cls,
                        const std::optional<Box>& roi) {
  const Shape expected{model.spec.in_channels, model.spec.image_h, model.spec.image_w};
  if (image.shape() != expected)
    throw ShapeError("render_attention: image " + to_string(image.shape()) +
                     " does not match the model input " + to_string(expected));
  const int c = cls ? *cls : predicted_class(model, image, roi);
  if (c < 0 || c >= model.spec.num_classes)
    throw std::out_of_range("render_attention: class " + std::to_string(c) + " out of range");
  const RegionAttention att = region_attention(model, image, c, roi);
  return overlay_heatmap(image, att.map, att.region);
}

void export_heatmap(const Model& model, const Tensor& image, const std::filesystem::path& out,
                    std::optional<int> cls, const std::optional<Box>& roi) {
  write_ppm(out, render_attention(model, image, cls, roi));
}

}  // namespace ia
