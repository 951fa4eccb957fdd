#include "ia/gradcheck.hpp"

#include "ia/ops.hpp"

#include <algorithm>
#include <cmath>

namespace ia {

double gradient_error(const GraphBuilder& build, const std::vector<Tensor>& inputs,
                      std::mt19937_64& rng, double h) {
  Tape tape;
  std::vector<NodeId> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.parameter(t));
  const NodeId out = build(tape, leaves);

  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor r(tape.value(out).shape());
  for (Index i = 0; i < r.size(); ++i) r[i] = u(rng);
  const NodeId loss = sum(tape, mul(tape, out, tape.constant(r)));
  const auto analytic = backward_params(tape, loss);

  double worst = 0;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    Tensor x = inputs[k];
    Tensor numeric(x.shape());
    for (Index i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + h;
      tape.set_leaf(leaves[k], x);
      const double plus = forward(tape)[0];
      x[i] = saved - h;
      tape.set_leaf(leaves[k], x);
      const double minus = forward(tape)[0];
      x[i] = saved;
      numeric[i] = (plus - minus) / (2 * h);
    }
    tape.set_leaf(leaves[k], x);
    const double scale = std::max(numeric.vec().cwiseAbs().maxCoeff(), 1e-8);
    worst = std::max(worst, max_abs_diff(analytic.at(leaves[k]), numeric) / scale);
  }
  return worst;
}

namespace {

using Rng = std::mt19937_64;

Tensor uniform(const Shape& shape, Rng& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

// Values bounded away from zero by `gap`.
Tensor away_from_zero(const Shape& shape, Rng& rng, double gap = 0.05) {
  Tensor t = uniform(shape, rng, gap, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (Index i = 0; i < t.size(); ++i)
    if (sign(rng)) t[i] = -t[i];
  return t;
}

// A shuffled grid of distinct values so pooling windows have clear winners.
Tensor distinct(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(t.size());
  std::shuffle(t.data(), t.data() + t.size(), rng);
  return t;
}

Index draw(Rng& rng, Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); }

using Case = std::function<double(Rng&)>;

double conv_case(Rng& rng) {
  ConvSpec s;
  s.in_channels = draw(rng, 1, 3);
  s.out_channels = draw(rng, 1, 3);
  s.kernel_h = draw(rng, 1, 3);
  s.kernel_w = draw(rng, 1, 3);
  s.stride = draw(rng, 1, 2);
  s.pad = draw(rng, 0, 1);
  const Shape x{draw(rng, 1, 2), s.in_channels, draw(rng, 3, 6), draw(rng, 3, 6)};
  return gradient_error(
      [&](Tape& t, std::span<const NodeId> in) { return conv2d(t, in[0], in[1], in[2], s); },
      {uniform(x, rng), uniform({s.out_channels, s.in_channels, s.kernel_h, s.kernel_w}, rng),
       uniform({s.out_channels}, rng)},
      rng);
}

double relu_case(Rng& rng) {
  const Shape x{draw(rng, 1, 3), draw(rng, 1, 4), draw(rng, 2, 5)};
  return gradient_error([](Tape& t, std::span<const NodeId> in) { return relu(t, in[0]); },
                        {away_from_zero(x, rng)}, rng);
}

double maxpool_case(Rng& rng) {
  const Index window = draw(rng, 1, 3), stride = draw(rng, 1, 2);
  const Shape x{draw(rng, 1, 2), draw(rng, 1, 3), draw(rng, window, 7), draw(rng, window, 7)};
  return gradient_error(
      [&](Tape& t, std::span<const NodeId> in) { return maxpool2d(t, in[0], window, stride); },
      {distinct(x, rng)}, rng);
}

double roi_pool_case(Rng& rng) {
  const Shape x{2, draw(rng, 1, 3), draw(rng, 4, 8), draw(rng, 4, 8)};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<RoiBox> rois;
  for (Index r = 0, n = draw(rng, 1, 3); r < n; ++r) {
    const double x1 = u(rng) * (x[3] - 2), y1 = u(rng) * (x[2] - 2);
    rois.push_back({draw(rng, 0, 1), x1, y1, x1 + 1 + u(rng) * (x[3] - 1 - x1),
                    y1 + 1 + u(rng) * (x[2] - 1 - y1)});
  }
  const Index oh = draw(rng, 1, 3), ow = draw(rng, 1, 3);
  return gradient_error(
      [&](Tape& t, std::span<const NodeId> in) { return roi_pool(t, in[0], rois, oh, ow); },
      {distinct(x, rng)}, rng);
}

double linear_case(Rng& rng) {
  const Index n = draw(rng, 1, 4), in = draw(rng, 1, 6), out = draw(rng, 1, 5);
  return gradient_error(
      [](Tape& t, std::span<const NodeId> x) { return linear(t, x[0], x[1], x[2]); },
      {uniform({n, in}, rng), uniform({in, out}, rng), uniform({out}, rng)}, rng);
}

double softmax_xent_case(Rng& rng) {
  const Index n = draw(rng, 1, 5), k = draw(rng, 2, 5);
  std::vector<int> labels;
  for (Index i = 0; i < n; ++i) labels.push_back(static_cast<int>(draw(rng, 0, k - 1)));
  return gradient_error(
      [&](Tape& t, std::span<const NodeId> x) { return softmax_xent(t, x[0], labels); },
      {uniform({n, k}, rng, -3, 3)}, rng);
}

double l1_case(Rng& rng) {
  const Index n = draw(rng, 1, 5);
  std::vector<double> weights;
  std::bernoulli_distribution fg(0.6);
  for (Index i = 0; i < n; ++i) weights.push_back(i == 0 || fg(rng) ? 1.0 : 0.0);
  const Tensor target = uniform({n, 4}, rng);
  Tensor pred = away_from_zero({n, 4}, rng);
  pred.vec() += target.vec();
  return gradient_error(
      [&](Tape& t, std::span<const NodeId> x) { return l1_reg_loss(t, x[0], x[1], weights); },
      {pred, target}, rng);
}

double refine_case(Rng& rng) {
  const Shape x{draw(rng, 1, 3), draw(rng, 1, 4), draw(rng, 2, 5), draw(rng, 2, 5)};
  Tensor mask(x);
  std::bernoulli_distribution keep(0.6);
  for (Index i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? 1.0 : 0.0;
  return gradient_error(
      [&](Tape& t, std::span<const NodeId> in) {
        return refine_features(t, in[0], t.constant(mask));
      },
      {uniform(x, rng)}, rng);
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck(std::uint64_t seed, int instances, double tolerance) {
  const std::vector<std::pair<std::string, Case>> cases{
      {"conv2d", conv_case},           {"relu", relu_case},
      {"maxpool2d", maxpool_case},     {"roi_pool", roi_pool_case},
      {"linear", linear_case},         {"softmax_xent", softmax_xent_case},
      {"l1_reg_loss", l1_case},        {"refine_features", refine_case},
  };
  std::vector<GradcheckResult> out;
  Rng rng(seed);
  for (const auto& [name, run] : cases) {
    GradcheckResult r{name, instances, 0.0, false};
    for (int i = 0; i < instances; ++i) r.max_error = std::max(r.max_error, run(rng));
    r.passed = r.max_error < tolerance;
    out.push_back(r);
  }
  return out;
}

}  // namespace ia
