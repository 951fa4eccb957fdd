#pragma once

// Inverted attention generation: gradient-guided attention map, spatial and
// channel inversion, mask combination and feature refinement.

#include "ia/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ia {

using Rng = std::mt19937_64;

enum class Strategy { random, overturn, hard_threshold, soft_threshold };
enum class Orientation { spatial, channel, spatial_and_channel };
enum class Placement { roi_feature, full_feature };
enum class Probe { gt_score, gt_loss };

std::string_view to_string(Strategy s);
std::string_view to_string(Orientation o);
std::string_view to_string(Placement p);
std::string_view to_string(Probe p);
Strategy parse_strategy(std::string_view s);
Orientation parse_orientation(std::string_view s);
Placement parse_placement(std::string_view s);
Probe parse_probe(std::string_view s);

struct AttentionConfig {
  Strategy strategy = Strategy::soft_threshold;
  Orientation orientation = Orientation::spatial_and_channel;
  /// Fraction of spatial positions dropped by the soft and random strategies.
  double spatial_drop_ratio = 0.33;
  /// Absolute threshold on the min-max normalized map for the hard strategy.
  double hard_threshold = 0.5;
  /// Fraction of channels (highest gradient weight) that receive the spatial mask.
  double channel_select_ratio = 0.8;
  Placement placement = Placement::roi_feature;
  /// Fraction of feature maps per batch that are reweighted.
  double apply_probability = 1.0;
  Probe probe = Probe::gt_score;
  std::uint64_t rng_seed = 0;

  /// Throws std::invalid_argument when a ratio or probability lies outside [0,1].
  void validate() const;
};

template <typename Scalar>
struct AttentionMap {
  BasicTensor<Scalar> map;                              // [H,W]
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> channel_weights;  // [C]
};

template <typename Scalar>
struct InvertedAttentionMask {
  BasicTensor<Scalar> mask;                     // [C,H,W]
  BasicTensor<Scalar> spatial;                  // [H,W]
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> channel;  // [C]
  Strategy strategy = Strategy::soft_threshold;
};

/// Number of selected items, floor(ratio * n + 1e-9) clamped to [0, n].
inline Index quantile_count(double ratio, Index n) {
  const auto k = static_cast<Index>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  return std::clamp<Index>(k, 0, n);
}

/// Indices of the k largest values; ties go to the smaller index.
template <typename Scalar>
std::vector<Index> top_k_indices(std::span<const Scalar> values, Index k) {
  std::vector<Index> order(values.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return values[a] > values[b]; });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

/// Channel weights are the spatial means of G; the map is sum_i w_i * F_i.
/// No rectification or normalization.
template <typename Scalar>
AttentionMap<Scalar> gradcam_map(const BasicTensor<Scalar>& features,
                                 const BasicTensor<Scalar>& gradient) {
  if (features.rank() != 3 || features.shape() != gradient.shape())
    throw ShapeError("gradcam_map: feature " + to_string(features.shape()) + " and gradient " +
                     to_string(gradient.shape()) + " must be equal [C,H,W] shapes");
  const Index C = features.dim(0), H = features.dim(1), W = features.dim(2);
  AttentionMap<Scalar> out;
  out.channel_weights = gradient.matrix(C, H * W).rowwise().mean();
  out.map = BasicTensor<Scalar>({H, W});
  out.map.matrix(1, H * W).noalias() =
      out.channel_weights.transpose() * features.matrix(C, H * W);
  return out;
}

/// 0 where m > threshold, 1 otherwise.
template <typename Scalar>
BasicTensor<Scalar> invert_spatial_hard(const BasicTensor<Scalar>& map, Scalar threshold) {
  BasicTensor<Scalar> out(map.shape());
  out.vec() = (map.vec().array() <= threshold).template cast<Scalar>().matrix();
  return out;
}

/// Zeroes the floor(ratio*H*W) largest entries.
template <typename Scalar>
BasicTensor<Scalar> invert_spatial_soft(const BasicTensor<Scalar>& map, double drop_ratio) {
  BasicTensor<Scalar> out = BasicTensor<Scalar>::ones(map.shape());
  for (Index i : top_k_indices(map.span(), quantile_count(drop_ratio, map.size())))
    out[i] = Scalar(0);
  return out;
}

/// Zeroes floor(ratio*H*W) positions chosen uniformly without replacement.
template <typename Scalar>
BasicTensor<Scalar> invert_spatial_random(Index height, Index width, double drop_ratio,
                                          Rng& rng) {
  BasicTensor<Scalar> out = BasicTensor<Scalar>::ones({height, width});
  const Index n = height * width, k = quantile_count(drop_ratio, n);
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index i = 0; i < k; ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
    out[idx[i]] = Scalar(0);
  }
  return out;
}

/// Min-max normalization to [0,1]; a constant map becomes 0.5 everywhere.
template <typename Scalar>
BasicTensor<Scalar> normalize_min_max(const BasicTensor<Scalar>& map) {
  const Scalar lo = map.vec().minCoeff(), hi = map.vec().maxCoeff();
  BasicTensor<Scalar> out(map.shape(), Scalar(0.5));
  if (hi > lo) out.vec() = (map.vec().array() - lo) / (hi - lo);
  return out;
}

/// 1 - normalized map.
template <typename Scalar>
BasicTensor<Scalar> invert_overturn(const BasicTensor<Scalar>& map) {
  BasicTensor<Scalar> out = normalize_min_max(map);
  out.vec() = (Scalar(1) - out.vec().array()).matrix();
  return out;
}

/// 0 for the floor(ratio*C) channels with the largest weights, 1 elsewhere.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> invert_channel(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& weights, double select_ratio) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out =
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Ones(weights.size());
  std::span<const Scalar> w(weights.data(), static_cast<std::size_t>(weights.size()));
  for (Index i : top_k_indices(w, quantile_count(select_ratio, weights.size())))
    out[i] = Scalar(0);
  return out;
}

/// a[c,i] = spatial[i] if channel[c] == 0, else 1 (spatial_and_channel).
/// spatial: every channel takes the spatial map. channel: selected channels are zeroed.
template <typename Scalar>
BasicTensor<Scalar> combine_mask(const BasicTensor<Scalar>& spatial,
                                 const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& channel,
                                 Orientation orientation) {
  if (spatial.rank() != 2)
    throw ShapeError("combine_mask: spatial map must be [H,W], got " + to_string(spatial.shape()));
  const Index C = channel.size(), H = spatial.dim(0), W = spatial.dim(1);
  if (C < 1) throw ShapeError("combine_mask: empty channel vector");
  BasicTensor<Scalar> out({C, H, W});
  auto m = out.matrix(C, H * W);
  const auto s = spatial.matrix(1, H * W);
  for (Index c = 0; c < C; ++c) {
    switch (orientation) {
      case Orientation::spatial:
        m.row(c) = s;
        break;
      case Orientation::channel:
        m.row(c).setConstant(channel[c] == Scalar(0) ? Scalar(0) : Scalar(1));
        break;
      case Orientation::spatial_and_channel:
        if (channel[c] == Scalar(0))
          m.row(c) = s;
        else
          m.row(c).setOnes();
        break;
    }
  }
  return out;
}

/// Map -> strategy-selected spatial inversion -> channel inversion -> combination.
template <typename Scalar>
InvertedAttentionMask<Scalar> generate_inverted_attention(const BasicTensor<Scalar>& features,
                                                          const BasicTensor<Scalar>& gradient,
                                                          const AttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  const AttentionMap<Scalar> att = gradcam_map(features, gradient);
  const Index C = features.dim(0), H = features.dim(1), W = features.dim(2);

  InvertedAttentionMask<Scalar> out;
  out.strategy = cfg.strategy;
  if (cfg.orientation == Orientation::channel) {
    out.spatial = BasicTensor<Scalar>::zeros({H, W});
  } else {
    switch (cfg.strategy) {
      case Strategy::random:
        out.spatial = invert_spatial_random<Scalar>(H, W, cfg.spatial_drop_ratio, rng);
        break;
      case Strategy::overturn:
        out.spatial = invert_overturn(att.map);
        break;
      case Strategy::hard_threshold:
        out.spatial = invert_spatial_hard(normalize_min_max(att.map),
                                          static_cast<Scalar>(cfg.hard_threshold));
        break;
      case Strategy::soft_threshold:
        out.spatial = invert_spatial_soft(att.map, cfg.spatial_drop_ratio);
        break;
    }
  }

  if (cfg.orientation == Orientation::spatial) {
    out.channel = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(C);
  } else if (cfg.strategy == Strategy::random) {
    BasicTensor<Scalar> pick = invert_spatial_random<Scalar>(1, C, cfg.channel_select_ratio, rng);
    out.channel = pick.vec();
  } else {
    out.channel = invert_channel(att.channel_weights, cfg.channel_select_ratio);
  }
  out.mask = combine_mask(out.spatial, out.channel, cfg.orientation);
  return out;
}

/// Text dump: "C H W strategy" header, then C*H rows of W values.
void write_mask(std::ostream& os, const InvertedAttentionMask<double>& mask);
/// Reads a dump back; spatial and channel parts are not stored and stay empty.
InvertedAttentionMask<double> read_mask(std::istream& is);

}  // namespace ia
