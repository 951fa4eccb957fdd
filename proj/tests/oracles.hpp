#pragma once

// Naive-loop and direct-formula references used by the tests. Each one is
// written independently of the library kernels.

#include "ia/ops.hpp"
#include "ia/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

namespace oracle {

using ia::Index;
using ia::Tensor;

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, Index stride, Index pad) {
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const Index OH = (H + 2 * pad - KH) / stride + 1, OW = (W + 2 * pad - KW) / stride + 1;
  Tensor out({N, O, OH, OW});
  for (Index n = 0; n < N; ++n)
    for (Index o = 0; o < O; ++o)
      for (Index i = 0; i < OH; ++i)
        for (Index j = 0; j < OW; ++j) {
          double acc = b[o];
          for (Index c = 0; c < C; ++c)
            for (Index ki = 0; ki < KH; ++ki)
              for (Index kj = 0; kj < KW; ++kj) {
                const Index y = i * stride + ki - pad, xx = j * stride + kj - pad;
                if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
                acc += x.at(n, c, y, xx) * w.at(o, c, ki, kj);
              }
          out.at(n, o, i, j) = acc;
        }
  return out;
}

inline Tensor maxpool2d(const Tensor& x, Index window, Index stride) {
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index OH = (H - window) / stride + 1, OW = (W - window) / stride + 1;
  Tensor out({N, C, OH, OW});
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c)
      for (Index i = 0; i < OH; ++i)
        for (Index j = 0; j < OW; ++j) {
          double m = -std::numeric_limits<double>::infinity();
          for (Index a = 0; a < window; ++a)
            for (Index bb = 0; bb < window; ++bb)
              m = std::max(m, x.at(n, c, i * stride + a, j * stride + bb));
          out.at(n, c, i, j) = m;
        }
  return out;
}

// Bin [start, end) of `bins` even splits of [lo, hi), never empty.
inline std::pair<Index, Index> bin_range(Index lo, Index hi, Index bins, Index i) {
  const double len = static_cast<double>(hi - lo);
  Index s = lo + static_cast<Index>(std::floor(static_cast<double>(i) * len / static_cast<double>(bins)));
  Index e = lo + static_cast<Index>(std::ceil(static_cast<double>(i + 1) * len / static_cast<double>(bins)));
  s = std::min(s, hi - 1);
  e = std::clamp(e, s + 1, hi);
  return {s, e};
}

inline Tensor roi_pool(const Tensor& f, const std::vector<ia::RoiBox>& rois, Index oh, Index ow) {
  const Index C = f.dim(1), H = f.dim(2), W = f.dim(3);
  Tensor out({static_cast<Index>(rois.size()), C, oh, ow});
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const auto& b = rois[r];
    const Index x0 = std::clamp<Index>(static_cast<Index>(std::floor(b.x1)), 0, W);
    const Index y0 = std::clamp<Index>(static_cast<Index>(std::floor(b.y1)), 0, H);
    const Index x1 = std::clamp<Index>(static_cast<Index>(std::ceil(b.x2)), 0, W);
    const Index y1 = std::clamp<Index>(static_cast<Index>(std::ceil(b.y2)), 0, H);
    for (Index c = 0; c < C; ++c)
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) {
          const auto [ys, ye] = bin_range(y0, y1, oh, i);
          const auto [xs, xe] = bin_range(x0, x1, ow, j);
          double m = -std::numeric_limits<double>::infinity();
          for (Index y = ys; y < ye; ++y)
            for (Index x = xs; x < xe; ++x) m = std::max(m, f.at(b.sample, c, y, x));
          out.at(static_cast<Index>(r), c, i, j) = m;
        }
  }
  return out;
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const Index N = x.dim(0), D = x.dim(1), K = w.dim(1);
  Tensor out({N, K});
  for (Index n = 0; n < N; ++n)
    for (Index k = 0; k < K; ++k) {
      double acc = b[k];
      for (Index d = 0; d < D; ++d) acc += x.at(n, d) * w.at(d, k);
      out.at(n, k) = acc;
    }
  return out;
}

inline double softmax_xent(const Tensor& z, const std::vector<int>& labels) {
  double total = 0;
  for (Index n = 0; n < z.dim(0); ++n) {
    double m = z.at(n, 0);
    for (Index k = 1; k < z.dim(1); ++k) m = std::max(m, z.at(n, k));
    double s = 0;
    for (Index k = 0; k < z.dim(1); ++k) s += std::exp(z.at(n, k) - m);
    total += -(z.at(n, labels[n]) - m - std::log(s));
  }
  return total / static_cast<double>(z.dim(0));
}

// Two-branch elementwise reading of the combination rule.
inline Tensor combine_mask(const Tensor& spatial, const std::vector<double>& channel) {
  const Index C = static_cast<Index>(channel.size()), H = spatial.dim(0), W = spatial.dim(1);
  Tensor out({C, H, W});
  for (Index c = 0; c < C; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        if (channel[c] == 0.0)
          out.at(c, y, x) = spatial.at(y, x);
        else
          out.at(c, y, x) = 1.0;
      }
  return out;
}

inline Tensor gradcam(const Tensor& f, const Tensor& g) {
  const Index C = f.dim(0), H = f.dim(1), W = f.dim(2);
  Tensor m({H, W});
  for (Index c = 0; c < C; ++c) {
    double w = 0;
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) w += g.at(c, y, x);
    w /= static_cast<double>(H * W);
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) m.at(y, x) += w * f.at(c, y, x);
  }
  return m;
}

inline double entropy(const Tensor& map) {
  double lo = map[0];
  for (Index i = 0; i < map.size(); ++i) lo = std::min(lo, map[i]);
  double s = 0;
  for (Index i = 0; i < map.size(); ++i) s += map[i] - lo;
  double h = 0;
  for (Index i = 0; i < map.size(); ++i) {
    const double p = s > 0 ? (map[i] - lo) / s : 1.0 / static_cast<double>(map.size());
    if (p > 0) h -= p * std::log(p);
  }
  return h / std::log(static_cast<double>(map.size()));
}

// Interpolated-precision AP: sum over recall steps of the best precision at
// any recall at or beyond that step.
inline double average_precision(const std::vector<bool>& ranked_tp, int num_gt) {
  std::vector<double> precision, recall;
  int tp = 0;
  for (std::size_t i = 0; i < ranked_tp.size(); ++i) {
    tp += ranked_tp[i];
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(tp) / num_gt);
  }
  double ap = 0, prev = 0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    if (recall[i] <= prev) continue;
    double best = 0;
    for (std::size_t j = i; j < recall.size(); ++j) best = std::max(best, precision[j]);
    ap += (recall[i] - prev) * best;
    prev = recall[i];
  }
  return ap;
}

}  // namespace oracle
