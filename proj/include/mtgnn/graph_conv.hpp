#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "mtgnn/parameters.hpp"
#include "mtgnn/tensor.hpp"

namespace mtgnn {

/// Ã = D̃⁻¹(A + I) with D̃ᵢᵢ = 1 + Σⱼ Aᵢⱼ. Accepts [n,n] or per-sample [b,n,n];
/// differentiable in A. Rows of the result sum to one.
Tensor normalize_adjacency(const Tensor& adjacency);

/// Mix-hop propagation:
///   H⁽⁰⁾ = H_in,  H⁽ᵏ⁾ = β·H_in + (1−β)·Ã·H⁽ᵏ⁻¹⁾   (over the node axis, per step)
///   H_out = Σ_{k=0..K} H⁽ᵏ⁾ W⁽ᵏ⁾
/// Each W⁽ᵏ⁾ maps d_in → d_out channels and is stored as a 1×1 convolution
/// kernel [d_out, d_in, 1, 1]. With selection disabled the layer returns H⁽ᴷ⁾
/// and owns no weights.
class MixHopLayer {
 public:
  MixHopLayer(std::size_t in_channels, std::size_t out_channels, std::size_t depth, double beta,
              std::mt19937_64& rng, bool select = true);

  Tensor forward(const Tensor& h_in, const Tensor& a_tilde) const;

  std::size_t depth() const noexcept { return depth_; }
  double beta() const noexcept { return beta_; }
  std::vector<Tensor>& weights() noexcept { return weights_; }
  const std::vector<Tensor>& weights() const noexcept { return weights_; }

  ParameterList parameters(const std::string& prefix) const;

 private:
  std::size_t in_channels_, out_channels_, depth_;
  double beta_;
  bool select_;
  std::vector<Tensor> weights_;
};

/// Graph convolution module: an inflow layer over Ã(A) plus an outflow layer
/// over Ã(Aᵀ), summed.
class GCModule {
 public:
  GCModule(std::size_t in_channels, std::size_t out_channels, std::size_t depth, double beta,
           std::mt19937_64& rng, bool select = true);

  /// h [b,c,n,t]; adjacency [n,n] or [b,n,n] (unnormalized).
  Tensor forward(const Tensor& h, const Tensor& adjacency) const;

  MixHopLayer& inflow() noexcept { return inflow_; }
  MixHopLayer& outflow() noexcept { return outflow_; }

  ParameterList parameters(const std::string& prefix) const;

 private:
  MixHopLayer inflow_, outflow_;
};

}  // namespace mtgnn
