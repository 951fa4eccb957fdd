#pragma once

#include "ia/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ia {

/// Builds the op under test on the tape from the given input leaves.
using GraphBuilder = std::function<NodeId(Tape&, std::span<const NodeId>)>;

/// Compares reverse-mode gradients of sum(out .* R) (R random, fixed) with
/// central differences of step h. Returns max|analytic - numeric| divided by
/// max(max|numeric|, 1e-8), the worst over all inputs.
double gradient_error(const GraphBuilder& build, const std::vector<Tensor>& inputs,
                      std::mt19937_64& rng, double h = 1e-5);

struct GradcheckResult {
  std::string op;
  int instances = 0;
  double max_error = 0;
  bool passed = false;
};

/// Finite-difference suite over every differentiable op on random instances
/// kept away from the ops' kinks.
std::vector<GradcheckResult> run_gradcheck(std::uint64_t seed, int instances = 10,
                                           double tolerance = 1e-4);

}  // namespace ia
