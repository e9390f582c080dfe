#include "mtgnn/model.hpp"

#include <cmath>
#include <numeric>

#include "mtgnn/errors.hpp"
#include "mtgnn/ops.hpp"

namespace mtgnn {

ConvLayer::ConvLayer(std::size_t in, std::size_t out, std::size_t width, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * width));
  kernel = uniform_parameter({out, in, 1, width}, bound, rng);
  bias = uniform_parameter({out}, bound, rng);
}

Tensor ConvLayer::forward(const Tensor& x) const { return conv1d_dilated(x, kernel, bias, 1); }

ParameterList ConvLayer::parameters(const std::string& prefix) const {
  return {{prefix + "kernel", kernel}, {prefix + "bias", bias}};
}

MtgnnModel::MtgnnModel(const MtgnnConfig& config, std::mt19937_64& rng) : config_(config) {
  config_.validate();
  const auto& c = config_;

  if (c.use_gc) {
    GraphLearnerOptions g;
    g.num_nodes = c.num_nodes;
    g.embed_dim = c.embed_dim;
    g.hidden_dim = c.embed_dim;
    g.k = c.subgraph_k;
    g.alpha = c.alpha;
    g.mode = c.graph_mode;
    g.feature_dim = c.in_dim;
    learner_ = std::make_unique<GraphLearner>(g, rng);
  }

  start_ = ConvLayer(c.in_dim, c.start_channels, 1, rng);

  const auto widths = c.filter_widths();
  std::size_t length = c.effective_input_len();
  std::size_t dilation = 1;
  for (std::size_t i = 0; i < c.layers; ++i) {
    MtgnnBlock b;
    b.dilation = dilation;
    b.input_length = length;
    b.tc = std::make_unique<TCModule>(c.start_channels, c.conv_channels, dilation, widths, rng);
    b.output_length = b.tc->filter().output_length(length);
    b.skip = ConvLayer(c.conv_channels, c.skip_channels, b.output_length, rng);
    if (c.use_gc)
      b.gc = std::make_unique<GCModule>(c.conv_channels, c.start_channels, c.gcn_depth,
                                        c.retain_ratio, rng, c.use_mixhop_selection);
    else
      b.linear = ConvLayer(c.conv_channels, c.start_channels, 1, rng);
    b.norm_weight = constant_parameter({c.start_channels, c.num_nodes}, 1.0);
    b.norm_bias = constant_parameter({c.start_channels, c.num_nodes}, 0.0);
    length = b.output_length;
    dilation *= c.dilation_rate;
    blocks_.push_back(std::move(b));
  }

  end1_ = ConvLayer(c.skip_channels, c.end_channels, 1, rng);
  end2_ = ConvLayer(c.end_channels, c.output_len, 1, rng);
}

namespace {

// [C,n] -> [b,C,n,t], repeating over batch and time.
Tensor broadcast_affine(const Tensor& p, std::size_t b, std::size_t t) {
  const std::size_t c = p.dim(0), n = p.dim(1);
  Tensor e = reshape(matmul(reshape(p, {c, n, 1}), Tensor::ones({1, t})), {1, c, n, t});
  return b == 1 ? e : concat(std::vector<Tensor>(b, e), 0);
}

}  // namespace

Tensor MtgnnModel::adjacency_for(const Tensor& x, std::span<const std::size_t> nodes) const {
  if (!learner_) throw ContractError("graph convolution is disabled; no adjacency to build");
  if (config_.graph_mode != GraphMode::dynamic) return learner_->compute_adjacency(nodes).values;
  // Node features at the final input step, [b,n,D].
  const std::size_t b = x.dim(0), d = x.dim(1), n = x.dim(2), t = x.dim(3);
  Tensor last = reshape(slice(x, 3, t - 1, 1), {b, d, n});
  return learner_->compute_dynamic(transpose(last)).values;
}

Tensor MtgnnModel::forward(const Tensor& x, std::mt19937_64* dropout_rng) const {
  std::vector<std::size_t> all(config_.num_nodes);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return forward(x, all, dropout_rng);
}

Tensor MtgnnModel::forward(const Tensor& x, std::span<const std::size_t> nodes,
                           std::mt19937_64* dropout_rng) const {
  return forward(x, learner_ ? adjacency_for(x, nodes) : Tensor(), nodes, dropout_rng);
}

Tensor MtgnnModel::forward(const Tensor& x, const Tensor& adjacency,
                           std::span<const std::size_t> nodes,
                           std::mt19937_64* dropout_rng) const {
  const auto& c = config_;
  const std::size_t n = nodes.size();
  if (x.rank() != 4 || x.dim(1) != c.in_dim || x.dim(2) != n)
    throw DimensionError("model input " + shape_str(x.shape()) + ", expected [b," +
                         std::to_string(c.in_dim) + "," + std::to_string(n) + "," +
                         std::to_string(c.input_len) + "]");
  for (auto v : nodes)
    if (v >= c.num_nodes) throw DimensionError("node index " + std::to_string(v) + " out of range");
  if (x.dim(3) != c.input_len)
    throw LengthError("model input has " + std::to_string(x.dim(3)) + " steps, configured for " +
                      std::to_string(c.input_len) + " (receptive field " +
                      std::to_string(c.receptive_field()) + ")");
  if (c.use_gc && !adjacency.defined()) throw MissingInputError("model forward needs an adjacency");

  const std::size_t b = x.dim(0);
  Tensor input = x;
  const std::size_t len = c.effective_input_len();
  if (len > x.dim(3))
    input = concat({Tensor::zeros({b, c.in_dim, n, len - x.dim(3)}), x}, 3);

  Tensor h = start_.forward(input);
  Tensor skip;
  const bool training = dropout_rng != nullptr && c.dropout > 0.0;
  for (const auto& blk : blocks_) {
    Tensor residual = h;
    Tensor f = blk.tc->forward(h);
    if (training) f = dropout(f, c.dropout, true, *dropout_rng);
    Tensor s = blk.skip.forward(f);
    skip = skip.defined() ? add(skip, s) : s;
    Tensor g = blk.gc ? blk.gc->forward(f, adjacency) : blk.linear.forward(f);
    h = add(g, slice_last_steps(residual, blk.output_length));
    Tensor w = index_select(blk.norm_weight, 1, nodes);
    Tensor beta = index_select(blk.norm_bias, 1, nodes);
    if (blk.gc) {
      h = layer_norm(h, {1, 2}, w, beta, c.layer_norm_eps);
    } else {
      // Statistics over channels only, so no information crosses nodes.
      h = layer_norm(h, {1}, Tensor(), Tensor(), c.layer_norm_eps);
      const std::size_t t = h.dim(3);
      h = add(hadamard(h, broadcast_affine(w, b, t)), broadcast_affine(beta, b, t));
    }
  }

  Tensor out = end2_.forward(relu(end1_.forward(relu(skip))));
  return reshape(out, {b, c.output_len, n});
}

ParameterList MtgnnModel::parameters() const {
  ParameterList out;
  auto append = [&](ParameterList p) {
    for (auto& e : p) out.push_back(std::move(e));
  };
  if (learner_) append(learner_->parameters("graph."));
  append(start_.parameters("start."));
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& blk = blocks_[i];
    const std::string p = "block" + std::to_string(i) + ".";
    append(blk.tc->parameters(p + "tc."));
    append(blk.skip.parameters(p + "skip."));
    if (blk.gc)
      append(blk.gc->parameters(p + "gc."));
    else
      append(blk.linear.parameters(p + "linear."));
    out.push_back({p + "norm.weight", blk.norm_weight});
    out.push_back({p + "norm.bias", blk.norm_bias});
  }
  append(end1_.parameters("end1."));
  append(end2_.parameters("end2."));
  return out;
}

ParameterList MtgnnModel::trainable_parameters() const {
  ParameterList out;
  for (auto& p : parameters())
    if (p.tensor.requires_grad()) out.push_back(std::move(p));
  return out;
}

std::vector<std::pair<std::string, std::size_t>> MtgnnModel::parameter_breakdown() const {
  std::vector<std::pair<std::string, std::size_t>> out;
  for (const auto& p : trainable_parameters()) {
    const std::string group = p.name.substr(0, p.name.find('.'));
    if (out.empty() || out.back().first != group) out.emplace_back(group, 0);
    out.back().second += p.tensor.numel();
  }
  return out;
}

std::size_t MtgnnModel::count_parameters() const {
  return count_scalars(parameters());
}

}  // namespace mtgnn
