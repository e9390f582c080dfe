#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtgnn/config.hpp"
#include "mtgnn/graph_conv.hpp"
#include "mtgnn/graph_learning.hpp"
#include "mtgnn/parameters.hpp"
#include "mtgnn/temporal_conv.hpp"
#include "mtgnn/tensor.hpp"

namespace mtgnn {

/// 1×1 or 1×L convolution with bias, the building block of the start, skip and
/// output layers.
struct ConvLayer {
  Tensor kernel;  // [c_out, c_in, 1, width]
  Tensor bias;    // [c_out]

  ConvLayer() = default;
  ConvLayer(std::size_t in, std::size_t out, std::size_t width, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  ParameterList parameters(const std::string& prefix) const;
};

/// One temporal/graph block.
struct MtgnnBlock {
  std::size_t dilation = 1;
  std::size_t input_length = 0;   // sequence length entering the block
  std::size_t output_length = 0;  // after the temporal module
  std::unique_ptr<TCModule> tc;
  ConvLayer skip;                          // width = output_length
  std::unique_ptr<GCModule> gc;            // null when graph convolution is disabled
  ConvLayer linear;                        // 1×1 replacement for gc
  // Layer norm affine [start_channels, N]. Statistics span (channel, node), or
  // channels only when gc is null.
  Tensor norm_weight, norm_bias;
};

/// The full network: start conv, interleaved temporal/graph blocks with
/// residual and skip connections, layer norm, and a two-layer output head.
class MtgnnModel {
 public:
  MtgnnModel(const MtgnnConfig& config, std::mt19937_64& rng);

  const MtgnnConfig& config() const noexcept { return config_; }

  /// x [b,D,n,P] over `nodes` (n = nodes.size()), adjacency [n,n] or [b,n,n]
  /// over the same nodes. Returns [b,Q,n]. Dropout is active iff `dropout_rng`
  /// is non-null.
  Tensor forward(const Tensor& x, const Tensor& adjacency, std::span<const std::size_t> nodes,
                 std::mt19937_64* dropout_rng = nullptr) const;
  /// Builds the adjacency for `nodes` with the graph learner, then runs forward.
  Tensor forward(const Tensor& x, std::span<const std::size_t> nodes,
                 std::mt19937_64* dropout_rng = nullptr) const;
  /// All N nodes.
  Tensor forward(const Tensor& x, std::mt19937_64* dropout_rng = nullptr) const;

  /// Adjacency for a node subset; for dynamic mode it depends on `x`.
  Tensor adjacency_for(const Tensor& x, std::span<const std::size_t> nodes) const;

  GraphLearner* graph_learner() noexcept { return learner_.get(); }
  const GraphLearner* graph_learner() const noexcept { return learner_.get(); }

  std::vector<MtgnnBlock>& blocks() noexcept { return blocks_; }
  const std::vector<MtgnnBlock>& blocks() const noexcept { return blocks_; }
  ConvLayer& start_conv() noexcept { return start_; }
  ConvLayer& end_conv1() noexcept { return end1_; }
  ConvLayer& end_conv2() noexcept { return end2_; }

  /// Every named tensor; frozen tensors (static features, predefined graph)
  /// included with requires_grad = false.
  ParameterList parameters() const;
  /// Trainable tensors only.
  ParameterList trainable_parameters() const;

  /// Trainable scalar counts per top-level submodule, in forward order.
  std::vector<std::pair<std::string, std::size_t>> parameter_breakdown() const;
  std::size_t count_parameters() const;

 private:
  MtgnnConfig config_;
  std::unique_ptr<GraphLearner> learner_;
  ConvLayer start_;
  std::vector<MtgnnBlock> blocks_;
  ConvLayer end1_, end2_;
};

}  // namespace mtgnn
