#pragma once

#include <algorithm>
#include <array>
#include <cmath>

namespace ia {

/// Axis-aligned box in continuous pixel coordinates; pixel i covers [i, i+1).
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  friend bool operator==(const Box&, const Box&) = default;
};

struct GtObject {
  int cls = 0;
  Box box;
  friend bool operator==(const GtObject&, const GtObject&) = default;
};

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

using BoxDelta = std::array<double, 4>;

/// (dx, dy, dw, dh) of target relative to source: center offsets scaled by the
/// source size, log size ratios.
inline BoxDelta encode_box(const Box& source, const Box& target) {
  const double sw = source.width(), sh = source.height();
  const double tw = target.width(), th = target.height();
  return {(target.x1 + 0.5 * tw - (source.x1 + 0.5 * sw)) / sw,
          (target.y1 + 0.5 * th - (source.y1 + 0.5 * sh)) / sh, std::log(tw / sw),
          std::log(th / sh)};
}

inline Box decode_box(const Box& source, const BoxDelta& d) {
  const double sw = source.width(), sh = source.height();
  const double cx = source.x1 + 0.5 * sw + d[0] * sw;
  const double cy = source.y1 + 0.5 * sh + d[1] * sh;
  const double w = sw * std::exp(std::clamp(d[2], -4.0, 4.0));
  const double h = sh * std::exp(std::clamp(d[3], -4.0, 4.0));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

inline Box clip_box(const Box& b, double width, double height) {
  return {std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height),
          std::clamp(b.x2, 0.0, width), std::clamp(b.y2, 0.0, height)};
}

}  // namespace ia
