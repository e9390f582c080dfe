#include "mtgnn/graph_conv.hpp"

#include <cmath>

#include "mtgnn/errors.hpp"
#include "mtgnn/ops.hpp"

namespace mtgnn {

Tensor normalize_adjacency(const Tensor& adjacency) {
  const auto& s = adjacency.shape();
  if (!((s.size() == 2 || s.size() == 3) && s[s.size() - 1] == s[s.size() - 2]))
    throw DimensionError("normalize_adjacency: expected square [n,n] or [b,n,n], got " +
                         shape_str(s));
  const std::size_t n = s.back();
  const std::size_t batches = adjacency.numel() / (n * n);
  auto a = adjacency.data();
  std::vector<double> out(a.size());
  auto inv_deg = std::make_shared<std::vector<double>>(batches * n);
  for (std::size_t z = 0; z < batches; ++z)
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = a.data() + (z * n + i) * n;
      double d = 1.0;
      for (std::size_t j = 0; j < n; ++j) d += row[j];
      const double inv = 1.0 / d;
      (*inv_deg)[z * n + i] = inv;
      double* o = out.data() + (z * n + i) * n;
      for (std::size_t j = 0; j < n; ++j) o[j] = (row[j] + (i == j ? 1.0 : 0.0)) * inv;
    }
  auto y = std::make_shared<std::vector<double>>(out);
  // dÃᵢⱼ/dAᵢₗ = δⱼₗ/dᵢ − Ãᵢⱼ/dᵢ
  return make_op(s, std::move(out), {adjacency},
                 [n, batches, inv_deg, y](std::span<const double> g, std::span<double* const> gin) {
                   if (!gin[0]) return;
                   for (std::size_t r = 0; r < batches * n; ++r) {
                     const double* gr = g.data() + r * n;
                     const double* yr = y->data() + r * n;
                     double dot = 0.0;
                     for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                     const double inv = (*inv_deg)[r];
                     double* out = gin[0] + r * n;
                     for (std::size_t l = 0; l < n; ++l) out[l] += (gr[l] - dot) * inv;
                   }
                 });
}

MixHopLayer::MixHopLayer(std::size_t in_channels, std::size_t out_channels, std::size_t depth,
                         double beta, std::mt19937_64& rng, bool select)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      depth_(depth),
      beta_(beta),
      select_(select) {
  if (depth == 0) throw ConfigError("mix-hop depth K must be at least 1");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("retain ratio beta must lie in [0,1]");
  if (in_channels == 0 || out_channels == 0) throw ConfigError("mix-hop channels must be positive");
  if (!select) {
    if (in_channels != out_channels)
      throw ConfigError("mix-hop without selection needs equal in/out channels");
    return;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels));
  for (std::size_t k = 0; k <= depth; ++k)
    weights_.push_back(uniform_parameter({out_channels, in_channels, 1, 1}, bound, rng));
}

Tensor MixHopLayer::forward(const Tensor& h_in, const Tensor& a_tilde) const {
  if (h_in.rank() != 4 || h_in.dim(1) != in_channels_)
    throw DimensionError("mix-hop expects [b," + std::to_string(in_channels_) +
                         ",n,t] input, got " + shape_str(h_in.shape()));
  Tensor h = h_in;
  Tensor retained = mul_scalar(h_in, beta_);
  Tensor out = select_ ? conv1d_dilated(h, weights_[0], 1) : Tensor();
  for (std::size_t k = 1; k <= depth_; ++k) {
    h = add(retained, mul_scalar(node_propagate(a_tilde, h), 1.0 - beta_));
    if (select_) out = add(out, conv1d_dilated(h, weights_[k], 1));
  }
  return select_ ? out : h;
}

ParameterList MixHopLayer::parameters(const std::string& prefix) const {
  ParameterList out;
  for (std::size_t k = 0; k < weights_.size(); ++k)
    out.push_back({prefix + "W" + std::to_string(k), weights_[k]});
  return out;
}

GCModule::GCModule(std::size_t in_channels, std::size_t out_channels, std::size_t depth,
                   double beta, std::mt19937_64& rng, bool select)
    : inflow_(in_channels, out_channels, depth, beta, rng, select),
      outflow_(in_channels, out_channels, depth, beta, rng, select) {}

Tensor GCModule::forward(const Tensor& h, const Tensor& adjacency) const {
  Tensor in = inflow_.forward(h, normalize_adjacency(adjacency));
  Tensor out = outflow_.forward(h, normalize_adjacency(transpose(adjacency)));
  return add(in, out);
}

ParameterList GCModule::parameters(const std::string& prefix) const {
  ParameterList out = inflow_.parameters(prefix + "inflow.");
  for (auto& p : outflow_.parameters(prefix + "outflow.")) out.push_back(std::move(p));
  return out;
}

}  // namespace mtgnn
