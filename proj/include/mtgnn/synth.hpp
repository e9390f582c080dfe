#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "mtgnn/data.hpp"

namespace mtgnn {

struct SynthOptions {
  std::size_t nodes = 10;
  std::size_t edges = 15;
  std::size_t lag = 3;
  double noise = 0.1;
  std::size_t length = 5734;
  std::uint64_t seed = 1;
};

struct SynthEdge {
  std::size_t src, dst;
  double weight;
};

/// Series over a random directed graph:
///   x_i(t) = a_i·sin(2πt/T_i + φ_i) + Σ_{j→i} w_ji·x_j(t − lag) + σ·ε
/// with a_i ~ U[1,2], T_i ~ U[12,48], φ_i ~ U[0,2π), |w| ~ U[0.5,0.9] with a
/// random sign, incoming |w| rescaled to sum at most 0.9, ε ~ N(0,1). Parent
/// terms before t = lag are zero.
struct SynthData {
  RawSeries series;
  std::vector<SynthEdge> edges;
  std::vector<double> amplitude, period, phase;

  double base(std::size_t node, std::size_t t) const;
};

SynthData generate_synthetic(const SynthOptions& options);

/// Writes series.csv (T×N) and edges.csv (`src,dst,weight`) into `dir`.
void save_synthetic(const SynthData& data, const std::filesystem::path& dir);

/// Smallest series length giving at least `train_windows` single-step
/// training windows under the given training fraction.
std::size_t synthetic_length_for(std::size_t train_windows, std::size_t input_len,
                                 std::size_t horizon, double train_frac);

}  // namespace mtgnn
