#include "ia/ops.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace ia {

namespace {

using Inputs = std::span<const Tensor* const>;
using Grads = std::span<Tensor* const>;

void expect_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + to_string(t.shape()));
}

void expect_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
}

void check_labels(std::span<const int> labels, Index rows, Index classes, const char* what) {
  if (static_cast<Index>(labels.size()) != rows)
    throw ShapeError(std::string(what) + ": " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(rows) + " rows");
  for (int l : labels)
    if (l < 0 || l >= classes)
      throw std::out_of_range(std::string(what) + ": label " + std::to_string(l) +
                              " outside [0," + std::to_string(classes) + ")");
}

// ---------------------------------------------------------------- convolution

void check_conv(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& s) {
  expect_rank(x, 4, "conv2d input");
  if (x.dim(1) != s.in_channels)
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, spec " +
                     std::to_string(s.in_channels));
  const Shape ws{s.out_channels, s.in_channels, s.kernel_h, s.kernel_w};
  if (w.shape() != ws)
    throw ShapeError("conv2d: weights " + to_string(w.shape()) + ", expected " + to_string(ws));
  if (b.shape() != Shape{s.out_channels})
    throw ShapeError("conv2d: bias " + to_string(b.shape()) + ", expected [" +
                     std::to_string(s.out_channels) + "]");
  if (s.stride < 1 || s.pad < 0) throw ShapeError("conv2d: invalid stride/padding");
  if (s.out_extent(x.dim(2), s.kernel_h) < 1 || s.out_extent(x.dim(3), s.kernel_w) < 1)
    throw ShapeError("conv2d: empty output for input " + to_string(x.shape()));
}

// Unrolls sample n into a (C*kh*kw) x (OH*OW) patch matrix.
void im2col(const Tensor& x, Index n, const ConvSpec& s, Index oh, Index ow,
            RowMatrix<double>& cols) {
  const Index C = x.dim(1), H = x.dim(2), W = x.dim(3);
  cols.resize(C * s.kernel_h * s.kernel_w, oh * ow);
  Index row = 0;
  for (Index c = 0; c < C; ++c)
    for (Index ki = 0; ki < s.kernel_h; ++ki)
      for (Index kj = 0; kj < s.kernel_w; ++kj, ++row) {
        double* dst = cols.row(row).data();
        for (Index i = 0; i < oh; ++i) {
          const Index y = i * s.stride - s.pad + ki;
          for (Index j = 0; j < ow; ++j) {
            const Index xx = j * s.stride - s.pad + kj;
            dst[i * ow + j] = (y >= 0 && y < H && xx >= 0 && xx < W) ? x.at(n, c, y, xx) : 0.0;
          }
        }
      }
}

void col2im_add(const RowMatrix<double>& cols, Index n, const ConvSpec& s, Index oh, Index ow,
                Tensor& dx) {
  const Index C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
  Index row = 0;
  for (Index c = 0; c < C; ++c)
    for (Index ki = 0; ki < s.kernel_h; ++ki)
      for (Index kj = 0; kj < s.kernel_w; ++kj, ++row) {
        const double* src = cols.row(row).data();
        for (Index i = 0; i < oh; ++i) {
          const Index y = i * s.stride - s.pad + ki;
          if (y < 0 || y >= H) continue;
          for (Index j = 0; j < ow; ++j) {
            const Index xx = j * s.stride - s.pad + kj;
            if (xx >= 0 && xx < W) dx.at(n, c, y, xx) += src[i * ow + j];
          }
        }
      }
}

class Conv2dOp final : public Op {
 public:
  explicit Conv2dOp(ConvSpec spec) : spec_(spec) {}
  std::string_view name() const override { return "conv2d"; }

  Tensor forward(Inputs in, OpState&) const override { return conv2d(*in[0], *in[1], *in[2], spec_); }

  void backward(Inputs in, const Tensor& out, const Tensor& g, const OpState&,
                Grads grads) const override {
    const Tensor& x = *in[0];
    const Tensor& w = *in[1];
    const Index N = x.dim(0), O = spec_.out_channels, oh = out.dim(2), ow = out.dim(3);
    const Index K = spec_.in_channels * spec_.kernel_h * spec_.kernel_w;
    const auto wm = w.matrix(O, K);
    RowMatrix<double> cols, dcols;
    for (Index n = 0; n < N; ++n) {
      Eigen::Map<const RowMatrix<double>> gn(g.data() + n * O * oh * ow, O, oh * ow);
      if (grads[1]) {
        im2col(x, n, spec_, oh, ow, cols);
        grads[1]->matrix(O, K).noalias() += gn * cols.transpose();
      }
      if (grads[2]) grads[2]->vec() += gn.rowwise().sum();
      if (grads[0]) {
        dcols.noalias() = wm.transpose() * gn;
        col2im_add(dcols, n, spec_, oh, ow, *grads[0]);
      }
    }
  }

 private:
  ConvSpec spec_;
};

// ------------------------------------------------------------------- pooling

Tensor maxpool_impl(const Tensor& x, Index window, Index stride, std::vector<Index>* argmax) {
  expect_rank(x, 4, "maxpool2d input");
  if (window < 1 || stride < 1) throw ShapeError("maxpool2d: window and stride must be >= 1");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (window > H || window > W)
    throw ShapeError("maxpool2d: window " + std::to_string(window) + " larger than input " +
                     to_string(x.shape()));
  const Index oh = (H - window) / stride + 1, ow = (W - window) / stride + 1;
  Tensor out({N, C, oh, ow});
  if (argmax) argmax->assign(out.size(), 0);
  Index o = 0;
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c)
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j, ++o) {
          Index best = ((n * C + c) * H + i * stride) * W + j * stride;
          for (Index di = 0; di < window; ++di)
            for (Index dj = 0; dj < window; ++dj) {
              const Index idx = ((n * C + c) * H + i * stride + di) * W + j * stride + dj;
              if (x[idx] > x[best]) best = idx;
            }
          out[o] = x[best];
          if (argmax) (*argmax)[o] = best;
        }
  return out;
}

class MaxPoolOp final : public Op {
 public:
  MaxPoolOp(Index window, Index stride) : window_(window), stride_(stride) {}
  std::string_view name() const override { return "maxpool2d"; }
  Tensor forward(Inputs in, OpState& st) const override {
    return maxpool_impl(*in[0], window_, stride_, &st.indices);
  }
  void backward(Inputs, const Tensor&, const Tensor& g, const OpState& st,
                Grads grads) const override {
    if (!grads[0]) return;
    for (Index o = 0; o < g.size(); ++o) (*grads[0])[st.indices[o]] += g[o];
  }

 private:
  Index window_, stride_;
};

Tensor roi_pool_impl(const Tensor& f, std::span<const RoiBox> rois, Index out_h, Index out_w,
                     std::vector<Index>* argmax) {
  expect_rank(f, 4, "roi_pool features");
  if (out_h < 1 || out_w < 1) throw ShapeError("roi_pool: output size must be at least 1x1");
  if (rois.empty()) throw ShapeError("roi_pool: no ROIs");
  const Index N = f.dim(0), C = f.dim(1), H = f.dim(2), W = f.dim(3);
  const Index R = static_cast<Index>(rois.size());
  Tensor out({R, C, out_h, out_w});
  if (argmax) argmax->assign(out.size(), 0);
  for (Index r = 0; r < R; ++r) {
    const RoiBox& roi = rois[r];
    if (roi.sample < 0 || roi.sample >= N)
      throw ShapeError("roi_pool: ROI " + std::to_string(r) + " refers to sample " +
                       std::to_string(roi.sample));
    const RoiCells cells = snap_roi(roi, H, W);
    const Index rh = cells.y1 - cells.y0, rw = cells.x1 - cells.x0;
    for (Index c = 0; c < C; ++c) {
      const Index plane = (roi.sample * C + c) * H * W;
      for (Index i = 0; i < out_h; ++i) {
        const Index ys = cells.y0 + i * rh / out_h;
        const Index ye = std::max(std::min(cells.y0 + ((i + 1) * rh + out_h - 1) / out_h, cells.y1), ys + 1);
        for (Index j = 0; j < out_w; ++j) {
          const Index xs = cells.x0 + j * rw / out_w;
          const Index xe = std::max(std::min(cells.x0 + ((j + 1) * rw + out_w - 1) / out_w, cells.x1), xs + 1);
          Index best = plane + ys * W + xs;
          for (Index y = ys; y < ye; ++y)
            for (Index x = xs; x < xe; ++x)
              if (f[plane + y * W + x] > f[best]) best = plane + y * W + x;
          const Index o = ((r * C + c) * out_h + i) * out_w + j;
          out[o] = f[best];
          if (argmax) (*argmax)[o] = best;
        }
      }
    }
  }
  return out;
}

class RoiPoolOp final : public Op {
 public:
  RoiPoolOp(std::vector<RoiBox> rois, Index out_h, Index out_w)
      : rois_(std::move(rois)), out_h_(out_h), out_w_(out_w) {}
  std::string_view name() const override { return "roi_pool"; }
  Tensor forward(Inputs in, OpState& st) const override {
    return roi_pool_impl(*in[0], rois_, out_h_, out_w_, &st.indices);
  }
  void backward(Inputs, const Tensor&, const Tensor& g, const OpState& st,
                Grads grads) const override {
    if (!grads[0]) return;
    for (Index o = 0; o < g.size(); ++o) (*grads[0])[st.indices[o]] += g[o];
  }

 private:
  std::vector<RoiBox> rois_;
  Index out_h_, out_w_;
};

// ------------------------------------------------------------ dense and loss

void check_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  expect_rank(x, 2, "linear input");
  expect_rank(w, 2, "linear weights");
  if (x.dim(1) != w.dim(0))
    throw ShapeError("linear: input " + to_string(x.shape()) + " vs weights " +
                     to_string(w.shape()));
  if (b.shape() != Shape{w.dim(1)})
    throw ShapeError("linear: bias " + to_string(b.shape()) + " vs weights " +
                     to_string(w.shape()));
}

class LinearOp final : public Op {
 public:
  std::string_view name() const override { return "linear"; }
  Tensor forward(Inputs in, OpState&) const override { return linear(*in[0], *in[1], *in[2]); }
  void backward(Inputs in, const Tensor&, const Tensor& g, const OpState&,
                Grads grads) const override {
    const auto gm = g.matrix();
    if (grads[0]) grads[0]->matrix().noalias() += gm * in[1]->matrix().transpose();
    if (grads[1]) grads[1]->matrix().noalias() += in[0]->matrix().transpose() * gm;
    if (grads[2]) grads[2]->vec() += gm.colwise().sum().transpose();
  }
};

// Row-wise softmax probabilities of a [N,K] logits tensor.
RowMatrix<double> softmax_rows(const Tensor& logits) {
  const auto z = logits.matrix();
  RowMatrix<double> p(z.rows(), z.cols());
  for (Index n = 0; n < z.rows(); ++n) {
    const double m = z.row(n).maxCoeff();
    p.row(n) = (z.row(n).array() - m).exp().matrix();
    p.row(n) /= p.row(n).sum();
  }
  return p;
}

class SoftmaxXentOp final : public Op {
 public:
  explicit SoftmaxXentOp(std::vector<int> labels) : labels_(std::move(labels)) {}
  std::string_view name() const override { return "softmax_xent"; }
  Tensor forward(Inputs in, OpState&) const override {
    return Tensor::scalar(softmax_xent(*in[0], labels_));
  }
  void backward(Inputs in, const Tensor&, const Tensor& g, const OpState&,
                Grads grads) const override {
    if (!grads[0]) return;
    RowMatrix<double> p = softmax_rows(*in[0]);
    const Index N = p.rows();
    for (Index n = 0; n < N; ++n) p(n, labels_[n]) -= 1.0;
    grads[0]->matrix() += p * (g[0] / static_cast<double>(N));
  }

 private:
  std::vector<int> labels_;
};

class GatherLabelOp final : public Op {
 public:
  explicit GatherLabelOp(std::vector<int> labels) : labels_(std::move(labels)) {}
  std::string_view name() const override { return "gather_label_scores"; }
  Tensor forward(Inputs in, OpState&) const override {
    const Tensor& z = *in[0];
    expect_rank(z, 2, "gather_label_scores");
    check_labels(labels_, z.dim(0), z.dim(1), "gather_label_scores");
    Tensor out({z.dim(0)});
    for (Index n = 0; n < z.dim(0); ++n) out[n] = z.at(n, labels_[n]);
    return out;
  }
  void backward(Inputs, const Tensor&, const Tensor& g, const OpState&,
                Grads grads) const override {
    if (!grads[0]) return;
    for (Index n = 0; n < g.size(); ++n) grads[0]->at(n, labels_[n]) += g[n];
  }

 private:
  std::vector<int> labels_;
};

class L1RegOp final : public Op {
 public:
  explicit L1RegOp(std::vector<double> weights) : weights_(std::move(weights)) {}
  std::string_view name() const override { return "l1_reg_loss"; }
  Tensor forward(Inputs in, OpState&) const override {
    return Tensor::scalar(l1_reg_loss(*in[0], *in[1], weights_));
  }
  void backward(Inputs in, const Tensor&, const Tensor& g, const OpState&,
                Grads grads) const override {
    double total = 0;
    for (double w : weights_) total += w;
    if (total == 0) return;
    const Tensor& p = *in[0];
    const Tensor& t = *in[1];
    const Index cols = p.dim(1);
    for (Index n = 0; n < p.dim(0); ++n)
      for (Index k = 0; k < cols; ++k) {
        const double r = p.at(n, k) - t.at(n, k);
        const double s = r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0);
        const double d = g[0] * weights_[n] * s / (static_cast<double>(cols) * total);
        if (grads[0]) grads[0]->at(n, k) += d;
        if (grads[1]) grads[1]->at(n, k) -= d;
      }
  }

 private:
  std::vector<double> weights_;
};

class RefineOp final : public Op {
 public:
  std::string_view name() const override { return "refine_features"; }
  Tensor forward(Inputs in, OpState&) const override { return refine_features(*in[0], *in[1]); }
  void backward(Inputs in, const Tensor&, const Tensor& g, const OpState&,
                Grads grads) const override {
    if (grads[0]) grads[0]->vec().array() += g.vec().array() * in[1]->vec().array();
  }
};

// ------------------------------------------------------------ elementwise

class AddOp final : public Op {
 public:
  std::string_view name() const override { return "add"; }
  Tensor forward(Inputs in, OpState&) const override {
    expect_same_shape(*in[0], *in[1], "add");
    return Tensor(in[0]->shape(), Tensor::Vector(in[0]->vec() + in[1]->vec()));
  }
  void backward(Inputs, const Tensor&, const Tensor& g, const OpState&,
                Grads grads) const override {
    if (grads[0]) grads[0]->vec() += g.vec();
    if (grads[1]) grads[1]->vec() += g.vec();
  }
};

class MulOp final : public Op {
 public:
  std::string_view name() const override { return "mul"; }
  Tensor forward(Inputs in, OpState&) const override {
    expect_same_shape(*in[0], *in[1], "mul");
    return Tensor(in[0]->shape(), Tensor::Vector(in[0]->vec().cwiseProduct(in[1]->vec())));
  }
  void backward(Inputs in, const Tensor&, const Tensor& g, const OpState&,
                Grads grads) const override {
    if (grads[0]) grads[0]->vec() += g.vec().cwiseProduct(in[1]->vec());
    if (grads[1]) grads[1]->vec() += g.vec().cwiseProduct(in[0]->vec());
  }
};

class SumOp final : public Op {
 public:
  std::string_view name() const override { return "sum"; }
  Tensor forward(Inputs in, OpState&) const override { return Tensor::scalar(in[0]->vec().sum()); }
  void backward(Inputs, const Tensor&, const Tensor& g, const OpState&,
                Grads grads) const override {
    if (grads[0]) grads[0]->vec().array() += g[0];
  }
};

class ScaleOp final : public Op {
 public:
  explicit ScaleOp(double factor) : factor_(factor) {}
  std::string_view name() const override { return "scale"; }
  Tensor forward(Inputs in, OpState&) const override {
    return Tensor(in[0]->shape(), Tensor::Vector(in[0]->vec() * factor_));
  }
  void backward(Inputs, const Tensor&, const Tensor& g, const OpState&,
                Grads grads) const override {
    if (grads[0]) grads[0]->vec() += g.vec() * factor_;
  }

 private:
  double factor_;
};

class ReshapeOp final : public Op {
 public:
  explicit ReshapeOp(Shape shape) : shape_(std::move(shape)) {}
  std::string_view name() const override { return "reshape"; }
  Tensor forward(Inputs in, OpState&) const override { return in[0]->reshaped(shape_); }
  void backward(Inputs, const Tensor&, const Tensor& g, const OpState&,
                Grads grads) const override {
    if (grads[0]) grads[0]->vec() += g.vec();
  }

 private:
  Shape shape_;
};

class ReluOp final : public Op {
 public:
  std::string_view name() const override { return "relu"; }
  Tensor forward(Inputs in, OpState&) const override { return relu(*in[0]); }
  void backward(Inputs in, const Tensor&, const Tensor& g, const OpState&,
                Grads grads) const override {
    if (grads[0])
      grads[0]->vec().array() += (in[0]->vec().array() > 0).select(g.vec().array(), 0.0);
  }
};

}  // namespace

RoiCells snap_roi(const RoiBox& roi, Index height, Index width) {
  if (!(roi.x2 > roi.x1) || !(roi.y2 > roi.y1))
    throw ShapeError("roi_pool: box must satisfy x2 > x1 and y2 > y1");
  auto clamp = [](double v, Index hi) {
    return std::clamp<Index>(static_cast<Index>(v), 0, hi);
  };
  RoiCells c{clamp(std::floor(roi.y1), height), clamp(std::ceil(roi.y2), height),
             clamp(std::floor(roi.x1), width), clamp(std::ceil(roi.x2), width)};
  if (c.y1 <= c.y0 || c.x1 <= c.x0)
    throw ShapeError("roi_pool: box does not cover any feature cell after snapping");
  return c;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& s) {
  check_conv(x, w, b, s);
  const Index N = x.dim(0), O = s.out_channels;
  const Index oh = s.out_extent(x.dim(2), s.kernel_h), ow = s.out_extent(x.dim(3), s.kernel_w);
  const Index K = s.in_channels * s.kernel_h * s.kernel_w;
  Tensor out({N, O, oh, ow});
  const auto wm = w.matrix(O, K);
  RowMatrix<double> cols;
  for (Index n = 0; n < N; ++n) {
    im2col(x, n, s, oh, ow, cols);
    Eigen::Map<RowMatrix<double>> on(out.data() + n * O * oh * ow, O, oh * ow);
    on.noalias() = wm * cols;
    on.colwise() += b.vec();
  }
  return out;
}

Tensor relu(const Tensor& x) {
  return Tensor(x.shape(), Tensor::Vector(x.vec().cwiseMax(0.0)));
}

Tensor maxpool2d(const Tensor& x, Index window, Index stride) {
  return maxpool_impl(x, window, stride, nullptr);
}

Tensor roi_pool(const Tensor& f, std::span<const RoiBox> rois, Index out_h, Index out_w) {
  return roi_pool_impl(f, rois, out_h, out_w, nullptr);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_linear(x, w, b);
  Tensor out({x.dim(0), w.dim(1)});
  out.matrix().noalias() = x.matrix() * w.matrix();
  out.matrix().rowwise() += b.vec().transpose();
  return out;
}

double softmax_xent(const Tensor& logits, std::span<const int> labels) {
  expect_rank(logits, 2, "softmax_xent");
  const Index N = logits.dim(0), K = logits.dim(1);
  check_labels(labels, N, K, "softmax_xent");
  const auto z = logits.matrix();
  double total = 0;
  for (Index n = 0; n < N; ++n) {
    const double m = z.row(n).maxCoeff();
    const double lse = m + std::log((z.row(n).array() - m).exp().sum());
    total += lse - z(n, labels[n]);
  }
  return total / static_cast<double>(N);
}

double l1_reg_loss(const Tensor& pred, const Tensor& target, std::span<const double> weights) {
  expect_rank(pred, 2, "l1_reg_loss");
  expect_same_shape(pred, target, "l1_reg_loss");
  if (static_cast<Index>(weights.size()) != pred.dim(0))
    throw ShapeError("l1_reg_loss: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(pred.dim(0)) + " rows");
  double total_w = 0, acc = 0;
  for (Index n = 0; n < pred.dim(0); ++n) {
    total_w += weights[n];
    if (weights[n] == 0) continue;
    double row = 0;
    for (Index k = 0; k < pred.dim(1); ++k) row += std::abs(pred.at(n, k) - target.at(n, k));
    acc += weights[n] * row;
  }
  if (total_w == 0) return 0.0;
  return acc / (static_cast<double>(pred.dim(1)) * total_w);
}

Tensor refine_features(const Tensor& f, const Tensor& a) {
  expect_same_shape(f, a, "refine_features");
  return Tensor(f.shape(), Tensor::Vector(f.vec().cwiseProduct(a.vec())));
}

NodeId add(Tape& t, NodeId a, NodeId b) { return t.apply(std::make_shared<AddOp>(), {a, b}); }
NodeId mul(Tape& t, NodeId a, NodeId b) { return t.apply(std::make_shared<MulOp>(), {a, b}); }
NodeId sum(Tape& t, NodeId a) { return t.apply(std::make_shared<SumOp>(), {a}); }
NodeId scale(Tape& t, NodeId a, double f) { return t.apply(std::make_shared<ScaleOp>(f), {a}); }
NodeId reshape(Tape& t, NodeId a, Shape s) {
  return t.apply(std::make_shared<ReshapeOp>(std::move(s)), {a});
}
NodeId relu(Tape& t, NodeId x) { return t.apply(std::make_shared<ReluOp>(), {x}); }
NodeId conv2d(Tape& t, NodeId x, NodeId w, NodeId b, const ConvSpec& spec) {
  return t.apply(std::make_shared<Conv2dOp>(spec), {x, w, b});
}
NodeId maxpool2d(Tape& t, NodeId x, Index window, Index stride) {
  return t.apply(std::make_shared<MaxPoolOp>(window, stride), {x});
}
NodeId roi_pool(Tape& t, NodeId f, std::vector<RoiBox> rois, Index out_h, Index out_w) {
  return t.apply(std::make_shared<RoiPoolOp>(std::move(rois), out_h, out_w), {f});
}
NodeId linear(Tape& t, NodeId x, NodeId w, NodeId b) {
  return t.apply(std::make_shared<LinearOp>(), {x, w, b});
}
NodeId softmax_xent(Tape& t, NodeId logits, std::vector<int> labels) {
  return t.apply(std::make_shared<SoftmaxXentOp>(std::move(labels)), {logits});
}
NodeId gather_label_scores(Tape& t, NodeId logits, std::vector<int> labels) {
  return t.apply(std::make_shared<GatherLabelOp>(std::move(labels)), {logits});
}
NodeId l1_reg_loss(Tape& t, NodeId pred, NodeId target, std::vector<double> weights) {
  return t.apply(std::make_shared<L1RegOp>(std::move(weights)), {pred, target});
}
NodeId refine_features(Tape& t, NodeId f, NodeId a) {
  return t.apply(std::make_shared<RefineOp>(), {f, a});
}

}  // namespace ia
