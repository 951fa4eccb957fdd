#pragma once

#include "ia/attention.hpp"
#include "ia/boxes.hpp"
#include "ia/tensor.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <optional>

namespace ia {

struct Model;

/// Align-corners bilinear resampling of an [h,w] map to [out_h,out_w]. Output
/// corners coincide with input corners; a single row or column is replicated.
template <typename Scalar>
BasicTensor<Scalar> bilinear_upsample(const BasicTensor<Scalar>& map, Index out_h, Index out_w) {
  if (map.rank() != 2 || map.empty())
    throw ShapeError("bilinear_upsample: expected a non-empty [h,w] map, got " +
                     to_string(map.shape()));
  if (out_h < 1 || out_w < 1)
    throw ShapeError("bilinear_upsample: output size must be positive");
  const Index h = map.dim(0), w = map.dim(1);
  auto coord = [](Index i, Index out, Index in) {
    return out > 1 ? static_cast<double>(i) * static_cast<double>(in - 1) /
                         static_cast<double>(out - 1)
                   : 0.0;
  };
  BasicTensor<Scalar> out({out_h, out_w});
  for (Index y = 0; y < out_h; ++y) {
    const double sy = coord(y, out_h, h);
    const Index y0 = std::min<Index>(static_cast<Index>(sy), h - 1), y1 = std::min(y0 + 1, h - 1);
    const Scalar fy = static_cast<Scalar>(sy - static_cast<double>(y0));
    for (Index x = 0; x < out_w; ++x) {
      const double sx = coord(x, out_w, w);
      const Index x0 = std::min<Index>(static_cast<Index>(sx), w - 1),
                  x1 = std::min(x0 + 1, w - 1);
      const Scalar fx = static_cast<Scalar>(sx - static_cast<double>(x0));
      const Scalar top = (1 - fx) * map.at(y0, x0) + fx * map.at(y0, x1);
      const Scalar bottom = (1 - fx) * map.at(y1, x0) + fx * map.at(y1, x1);
      out.at(y, x) = (1 - fy) * top + fy * bottom;
    }
  }
  return out;
}

/// Piecewise-linear blue, cyan, green, yellow, red ramp over t in [0,1].
std::array<double, 3> color_ramp(double t);

/// Blends the ramp-colored, min-max normalized map onto `region` of a [3,H,W]
/// image: out = (1 - alpha) * image + alpha * color. Pixels outside the region
/// are copied.
Tensor overlay_heatmap(const Tensor& image, const Tensor& map, const Box& region,
                       double alpha = 0.5);

/// Overall attention of `model` for class cls (predicted class when empty),
/// over the ROI (detector) or the whole image, rendered onto the image.
Tensor render_attention(const Model& model, const Tensor& image, std::optional<int> cls,
                        const std::optional<Box>& roi = std::nullopt);

void export_heatmap(const Model& model, const Tensor& image, const std::filesystem::path& out,
                    std::optional<int> cls = std::nullopt,
                    const std::optional<Box>& roi = std::nullopt);

}  // namespace ia
