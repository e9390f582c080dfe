#include "mtgnn/graph_learning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "mtgnn/errors.hpp"
#include "mtgnn/ops.hpp"

namespace mtgnn {

std::string_view to_string(GraphMode mode) {
  switch (mode) {
    case GraphMode::uni_directed: return "uni_directed";
    case GraphMode::directed: return "directed";
    case GraphMode::undirected: return "undirected";
    case GraphMode::global: return "global";
    case GraphMode::dynamic: return "dynamic";
    case GraphMode::predefined: return "predefined";
  }
  return "?";
}

GraphMode parse_graph_mode(std::string_view text) {
  for (auto m : {GraphMode::uni_directed, GraphMode::directed, GraphMode::undirected,
                 GraphMode::global, GraphMode::dynamic, GraphMode::predefined})
    if (to_string(m) == text) return m;
  throw ConfigError("unknown graph mode '" + std::string(text) + "'");
}

std::vector<double> topk_sparsify(std::span<const double> row, std::size_t k) {
  if (k == 0) throw ConfigError("top-k sparsification needs k >= 1");
  std::vector<double> out(row.size(), 0.0);
  for (auto j : topk_indices(row, k)) out[j] = row[j];
  return out;
}

GraphLearner::GraphLearner(GraphLearnerOptions options, std::mt19937_64& rng)
    : options_(options) {
  const auto n = options_.num_nodes;
  if (n == 0) throw ConfigError("graph learner needs at least one node");
  if (options_.k == 0 || options_.k > n)
    throw ConfigError("neighbour count k=" + std::to_string(options_.k) + " must lie in [1, " +
                      std::to_string(n) + "]");
  if (!(options_.alpha > 0.0)) throw ConfigError("saturation rate alpha must be positive");

  switch (options_.mode) {
    case GraphMode::uni_directed:
    case GraphMode::directed:
    case GraphMode::undirected: {
      if (options_.embed_dim == 0 || options_.hidden_dim == 0)
        throw ConfigError("embedding dimensions must be positive");
      const double theta_bound = 1.0 / std::sqrt(static_cast<double>(options_.embed_dim));
      e1_ = uniform_parameter({n, options_.embed_dim}, 0.5, rng);
      theta1_ = uniform_parameter({options_.embed_dim, options_.hidden_dim}, theta_bound, rng);
      if (options_.mode != GraphMode::undirected) {
        e2_ = uniform_parameter({n, options_.embed_dim}, 0.5, rng);
        theta2_ = uniform_parameter({options_.embed_dim, options_.hidden_dim}, theta_bound, rng);
      }
      break;
    }
    case GraphMode::global:
      global_ = uniform_parameter({n, n}, 0.5, rng);
      break;
    case GraphMode::dynamic: {
      if (options_.feature_dim == 0) throw ConfigError("dynamic graph needs feature_dim >= 1");
      const double bound = 1.0 / std::sqrt(static_cast<double>(options_.feature_dim));
      w1_ = uniform_parameter({options_.feature_dim, options_.hidden_dim}, bound, rng);
      w2_ = uniform_parameter({options_.feature_dim, options_.hidden_dim}, bound, rng);
      break;
    }
    case GraphMode::predefined:
      break;
  }
}

GraphLearner& GraphLearner::set_static_features(const Tensor& z) {
  if (!e1_.defined())
    throw ConfigError("static features need an embedding-based graph mode, not " +
                      std::string(to_string(options_.mode)));
  if (z.rank() != 2 || z.dim(0) != options_.num_nodes || z.dim(1) != options_.embed_dim)
    throw DimensionError("static feature matrix " + shape_str(z.shape()) + ", expected [" +
                         std::to_string(options_.num_nodes) + "," +
                         std::to_string(options_.embed_dim) + "]");
  e1_ = z.detach();
  if (e2_.defined()) e2_ = e1_;
  static_features_ = true;
  return *this;
}

GraphLearner& GraphLearner::set_predefined(const Tensor& adjacency) {
  const auto n = options_.num_nodes;
  if (adjacency.rank() != 2 || adjacency.dim(0) != n || adjacency.dim(1) != n)
    throw DimensionError("predefined adjacency " + shape_str(adjacency.shape()) + ", expected [" +
                         std::to_string(n) + "," + std::to_string(n) + "]");
  for (double v : adjacency.data())
    if (!(v >= 0.0)) throw ConfigError("predefined adjacency must be non-negative and finite");
  predefined_ = adjacency.detach();
  return *this;
}

Tensor GraphLearner::scores(std::span<const std::size_t> nodes) const {
  const double a = options_.alpha;
  switch (options_.mode) {
    case GraphMode::uni_directed:
    case GraphMode::directed:
    case GraphMode::undirected: {
      Tensor m1 = tanh(mul_scalar(matmul(index_select(e1_, 0, nodes), theta1_), a));
      if (options_.mode == GraphMode::undirected)
        return relu(tanh(mul_scalar(matmul(m1, transpose(m1)), a)));
      Tensor m2 = tanh(mul_scalar(matmul(index_select(e2_, 0, nodes), theta2_), a));
      if (options_.mode == GraphMode::directed)
        return relu(tanh(mul_scalar(matmul(m1, transpose(m2)), a)));
      Tensor anti = sub(matmul(m1, transpose(m2)), matmul(m2, transpose(m1)));
      return relu(tanh(mul_scalar(anti, a)));
    }
    case GraphMode::global:
      return relu(index_select(index_select(global_, 0, nodes), 1, nodes));
    case GraphMode::predefined:
      if (!predefined_.defined())
        throw MissingInputError("predefined graph mode requires an adjacency matrix");
      return index_select(index_select(predefined_, 0, nodes), 1, nodes);
    case GraphMode::dynamic:
      throw ContractError("dynamic graph mode needs input features; use compute_dynamic");
  }
  throw ContractError("unreachable graph mode");
}

AdjacencyMatrix GraphLearner::compute_adjacency() const {
  std::vector<std::size_t> all(options_.num_nodes);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return compute_adjacency(all);
}

AdjacencyMatrix GraphLearner::compute_adjacency(std::span<const std::size_t> nodes) const {
  const std::size_t k = std::min(options_.k, nodes.size());
  return {topk_rows(scores(nodes), k), k};
}

AdjacencyMatrix GraphLearner::compute_dynamic(const Tensor& features) const {
  if (options_.mode != GraphMode::dynamic)
    throw ContractError("compute_dynamic called in " + std::string(to_string(options_.mode)) +
                        " mode");
  if (features.rank() != 3 || features.dim(2) != options_.feature_dim)
    throw DimensionError("dynamic graph features " + shape_str(features.shape()) +
                         ", expected [b,n," + std::to_string(options_.feature_dim) + "]");
  Tensor left = tanh(matmul(features, w1_));
  Tensor right = tanh(matmul(features, w2_));
  Tensor s = softmax(matmul(left, transpose(right)), 2);
  const std::size_t k = std::min(options_.k, features.dim(1));
  return {topk_rows(s, k), k};
}

ParameterList GraphLearner::parameters(const std::string& prefix) const {
  ParameterList out;
  auto add = [&](const char* name, const Tensor& t) {
    if (t.defined()) out.push_back({prefix + name, t});
  };
  add("E1", e1_);
  if (!static_features_) add("E2", e2_);
  add("theta1", theta1_);
  add("theta2", theta2_);
  add("W", global_);
  add("W1", w1_);
  add("W2", w2_);
  add("predefined", predefined_);
  return out;
}

void export_adjacency(const AdjacencyMatrix& adjacency, const std::filesystem::path& matrix_csv,
                      const std::filesystem::path& edge_csv) {
  const std::size_t n = adjacency.size();
  std::ofstream m(matrix_csv);
  if (!m) throw MissingInputError("cannot write " + matrix_csv.string());
  m << std::setprecision(12);
  struct Edge {
    std::size_t src, dst;
    double w;
  };
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = adjacency(i, j);
      m << (j ? "," : "") << v;
      if (v != 0.0) edges.push_back({i, j, v});
    }
    m << '\n';
  }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) { return a.w > b.w; });
  std::ofstream e(edge_csv);
  if (!e) throw MissingInputError("cannot write " + edge_csv.string());
  e << std::setprecision(12) << "src,dst,weight\n";
  for (const auto& edge : edges) e << edge.src << ',' << edge.dst << ',' << edge.w << '\n';
}

std::vector<Neighbor> top_neighbors(const AdjacencyMatrix& adjacency, std::size_t node,
                                    std::size_t count) {
  const std::size_t n = adjacency.size();
  if (node >= n) throw DimensionError("node " + std::to_string(node) + " out of range");
  std::vector<double> row(n);
  for (std::size_t j = 0; j < n; ++j) row[j] = adjacency(node, j);
  std::vector<Neighbor> out;
  for (auto j : topk_indices(row, count))
    if (row[j] > 0.0) out.push_back({j, row[j]});
  return out;
}

}  // namespace mtgnn
