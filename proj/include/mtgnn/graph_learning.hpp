#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtgnn/parameters.hpp"
#include "mtgnn/tensor.hpp"

namespace mtgnn {

/// How the adjacency matrix is built from parameters.
///   uni_directed  ReLU(tanh(α(M1·M2ᵀ − M2·M1ᵀ)))  with Mi = tanh(α·Ei·Θi)
///   directed      ReLU(tanh(α·M1·M2ᵀ))
///   undirected    ReLU(tanh(α·M1·M1ᵀ))
///   global        ReLU(W), W a free N×N parameter
///   dynamic       SoftMax_rows(tanh(X·W1)·tanh(W2ᵀ·Xᵀ)) per input window
///   predefined    a fixed, externally supplied matrix
/// Every mode finishes with row-wise top-k sparsification.
enum class GraphMode { uni_directed, directed, undirected, global, dynamic, predefined };

std::string_view to_string(GraphMode mode);
GraphMode parse_graph_mode(std::string_view text);

struct GraphLearnerOptions {
  std::size_t num_nodes = 0;
  std::size_t embed_dim = 40;   // columns of E1/E2
  std::size_t hidden_dim = 40;  // columns of Θ1/Θ2
  std::size_t k = 20;           // neighbours kept per row
  double alpha = 3.0;           // saturation rate
  GraphMode mode = GraphMode::uni_directed;
  std::size_t feature_dim = 1;  // node feature width seen by dynamic mode
};

/// Non-negative N×N matrix with at most k nonzeros per row. `values` may be on
/// a tape; gradients reach the parameters through retained entries only.
struct AdjacencyMatrix {
  Tensor values;
  std::size_t k = 0;

  std::size_t size() const { return values.dim(values.rank() - 1); }
  double operator()(std::size_t i, std::size_t j) const { return values.data()[i * size() + j]; }
};

/// Keeps the k largest entries (ties to the lowest index); k >= row length is
/// the identity.
std::vector<double> topk_sparsify(std::span<const double> row, std::size_t k);

class GraphLearner {
 public:
  GraphLearner(GraphLearnerOptions options, std::mt19937_64& rng);

  const GraphLearnerOptions& options() const noexcept { return options_; }

  AdjacencyMatrix compute_adjacency() const;
  /// Adjacency restricted to `nodes` (rows/columns in the given order).
  AdjacencyMatrix compute_adjacency(std::span<const std::size_t> nodes) const;
  /// Dynamic mode only: one adjacency per sample from node features [b,n,D].
  AdjacencyMatrix compute_dynamic(const Tensor& features) const;

  /// Freezes E1 = E2 = z (N × embed_dim); Θ1 and Θ2 stay trainable.
  GraphLearner& set_static_features(const Tensor& z);
  /// Supplies the fixed matrix used by predefined mode.
  GraphLearner& set_predefined(const Tensor& adjacency);
  bool has_static_features() const noexcept { return static_features_; }

  /// Every tensor owned by the learner, frozen ones included.
  ParameterList parameters(const std::string& prefix) const;

 private:
  Tensor scores(std::span<const std::size_t> nodes) const;

  GraphLearnerOptions options_;
  Tensor e1_, e2_, theta1_, theta2_;  // embedding modes
  Tensor global_;                     // global mode
  Tensor w1_, w2_;                    // dynamic mode
  Tensor predefined_;                 // predefined mode
  bool static_features_ = false;
};

/// Writes the matrix as CSV (row i = source node i, 12 significant digits) and
/// an edge list `src,dst,weight` of the nonzero entries, heaviest first.
void export_adjacency(const AdjacencyMatrix& adjacency, const std::filesystem::path& matrix_csv,
                      const std::filesystem::path& edge_csv);

struct Neighbor {
  std::size_t node;
  double weight;
};

/// The `count` heaviest nonzero entries of row `node`, sorted by weight.
std::vector<Neighbor> top_neighbors(const AdjacencyMatrix& adjacency, std::size_t node,
                                    std::size_t count);

}  // namespace mtgnn
