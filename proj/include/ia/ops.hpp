#pragma once

#include "ia/autodiff.hpp"
#include "ia/tensor.hpp"

#include <span>
#include <vector>

namespace ia {

struct ConvSpec {
  Index in_channels = 1;
  Index out_channels = 1;
  Index kernel_h = 1;
  Index kernel_w = 1;
  Index stride = 1;
  Index pad = 0;

  /// floor((in + 2*pad - kernel)/stride) + 1, or 0 when the window does not fit.
  Index out_extent(Index in, Index kernel) const {
    const Index span = in + 2 * pad - kernel;
    return span < 0 ? 0 : span / stride + 1;
  }
};

/// Region of interest in feature-map coordinates.
struct RoiBox {
  Index sample = 0;
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

/// Integer cell range [y0,y1) x [x0,x1) covered by an ROI after snapping.
struct RoiCells {
  Index y0, y1, x0, x1;
};

/// floor(x1,y1), ceil(x2,y2), clamped to the map; throws ShapeError when empty.
RoiCells snap_roi(const RoiBox& roi, Index height, Index width);

// Kernels. Pure functions on values; the tape ops below call into them.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              const ConvSpec& spec);
Tensor relu(const Tensor& input);
Tensor maxpool2d(const Tensor& input, Index window, Index stride);
Tensor roi_pool(const Tensor& features, std::span<const RoiBox> rois, Index out_h, Index out_w);
Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias);
/// Mean over rows of -log softmax(logits)[label].
double softmax_xent(const Tensor& logits, std::span<const int> labels);
/// sum_n w_n * sum_k |pred - target| / (4 * sum_n w_n); zero when all weights are zero.
double l1_reg_loss(const Tensor& pred, const Tensor& target, std::span<const double> weights);
/// Elementwise F .* A.
Tensor refine_features(const Tensor& features, const Tensor& mask);

// Tape builders.
NodeId add(Tape& tape, NodeId a, NodeId b);
NodeId mul(Tape& tape, NodeId a, NodeId b);
NodeId sum(Tape& tape, NodeId a);
NodeId scale(Tape& tape, NodeId a, double factor);
NodeId reshape(Tape& tape, NodeId a, Shape shape);
NodeId relu(Tape& tape, NodeId x);
NodeId conv2d(Tape& tape, NodeId input, NodeId weights, NodeId bias, const ConvSpec& spec);
NodeId maxpool2d(Tape& tape, NodeId input, Index window, Index stride);
NodeId roi_pool(Tape& tape, NodeId features, std::vector<RoiBox> rois, Index out_h,
                Index out_w);
NodeId linear(Tape& tape, NodeId input, NodeId weights, NodeId bias);
NodeId softmax_xent(Tape& tape, NodeId logits, std::vector<int> labels);
/// Pre-softmax score of each row's label, shape [N].
NodeId gather_label_scores(Tape& tape, NodeId logits, std::vector<int> labels);
NodeId l1_reg_loss(Tape& tape, NodeId pred, NodeId target, std::vector<double> weights);
/// F .* A with A treated as a constant: gradient reaches F only.
NodeId refine_features(Tape& tape, NodeId features, NodeId mask);

}  // namespace ia
