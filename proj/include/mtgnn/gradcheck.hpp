#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mtgnn/tensor.hpp"

namespace mtgnn {

/// Relative error |a − n| / max(|a|, |n|, floor).
inline constexpr double kGradcheckFloor = 1e-3;

/// Compares reverse-mode gradients of L = Σ f(inputs) ⊙ R (R random, fixed per
/// call) with central differences of step `h`, perturbing `inputs` in place.
/// When `max_coords` is non-zero, at most that many randomly chosen entries per
/// input are checked. Returns the largest relative error.
double check_gradients(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                       std::mt19937_64& rng, double h = 1e-5, std::size_t max_coords = 0);

struct GradcheckReport {
  std::string op;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Names accepted by run_gradcheck, one per differentiable op plus composed
/// modules ("mixhop", "gc", "inception", "tc", "graph_learning", "model").
const std::vector<std::string>& gradcheck_op_names();

/// Runs `instances` random cases of `op` (every op when empty). Throws
/// ConfigError for an unknown op name.
std::vector<GradcheckReport> run_gradcheck(const std::string& op = "", double tolerance = 1e-4,
                                           std::size_t instances = 20, std::uint64_t seed = 1);

}  // namespace mtgnn
