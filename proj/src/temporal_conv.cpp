#include "mtgnn/temporal_conv.hpp"

#include <algorithm>
#include <cmath>

#include "mtgnn/errors.hpp"
#include "mtgnn/ops.hpp"

namespace mtgnn {

std::size_t receptive_field(std::size_t layers, std::size_t kernel_width, long long rate,
                            DilationGrowth growth) {
  if (layers == 0) throw ConfigError("receptive field needs at least one layer");
  if (kernel_width < 2) throw ConfigError("receptive field needs kernel width >= 2");
  if (rate <= 0) throw ConfigError("dilation rate must be positive, got " + std::to_string(rate));
  const std::size_t c1 = kernel_width - 1;
  if (growth == DilationGrowth::linear || rate == 1) return layers * c1 + 1;
  // 1 + (c−1)·Σ_{i<m} qⁱ, evaluated exactly in integers.
  std::size_t sum = 0, term = 1;
  for (std::size_t i = 0; i < layers; ++i) {
    sum += term;
    term *= static_cast<std::size_t>(rate);
  }
  return 1 + c1 * sum;
}

DilatedInception::DilatedInception(std::size_t in_channels, std::size_t out_channels,
                                   std::size_t dilation, std::vector<std::size_t> widths,
                                   std::mt19937_64& rng)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      dilation_(dilation),
      widths_(std::move(widths)) {
  if (widths_.empty()) throw ConfigError("dilated inception needs at least one filter width");
  if (!std::is_sorted(widths_.begin(), widths_.end()))
    throw ConfigError("dilated inception widths must be ascending");
  if (dilation_ == 0) throw ConfigError("dilation factor must be positive");
  if (in_channels_ == 0 || out_channels_ == 0 || out_channels_ % widths_.size() != 0)
    throw ConfigError("output channels (" + std::to_string(out_channels_) +
                      ") must be a positive multiple of the number of filter widths (" +
                      std::to_string(widths_.size()) + ")");
  const std::size_t per_branch = out_channels_ / widths_.size();
  for (auto w : widths_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels_ * w));
    kernels_.push_back(uniform_parameter({per_branch, in_channels_, 1, w}, bound, rng));
    biases_.push_back(uniform_parameter({per_branch}, bound, rng));
  }
}

std::size_t DilatedInception::output_length(std::size_t input_length) const {
  const std::size_t span = dilation_ * (max_width() - 1);
  if (input_length <= span)
    throw LengthError("dilated inception: sequence length " + std::to_string(input_length) +
                      " too short, need at least " + std::to_string(span + 1));
  return input_length - span;
}

Tensor DilatedInception::forward(const Tensor& z) const {
  if (z.rank() != 4 || z.dim(1) != in_channels_)
    throw DimensionError("dilated inception expects [b," + std::to_string(in_channels_) +
                         ",n,t], got " + shape_str(z.shape()));
  const std::size_t len = output_length(z.dim(3));
  std::vector<Tensor> branches;
  branches.reserve(widths_.size());
  for (std::size_t i = 0; i < widths_.size(); ++i)
    branches.push_back(
        slice_last_steps(conv1d_dilated(z, kernels_[i], biases_[i], dilation_), len));
  return branches.size() == 1 ? branches[0] : concat(branches, 1);
}

ParameterList DilatedInception::parameters(const std::string& prefix) const {
  ParameterList out;
  for (std::size_t i = 0; i < widths_.size(); ++i) {
    const std::string w = std::to_string(widths_[i]);
    out.push_back({prefix + "kernel" + w, kernels_[i]});
    out.push_back({prefix + "bias" + w, biases_[i]});
  }
  return out;
}

TCModule::TCModule(std::size_t in_channels, std::size_t out_channels, std::size_t dilation,
                   std::vector<std::size_t> widths, std::mt19937_64& rng)
    : filter_(in_channels, out_channels, dilation, widths, rng),
      gate_(in_channels, out_channels, dilation, widths, rng) {}

Tensor TCModule::forward(const Tensor& x) const {
  return hadamard(tanh(filter_.forward(x)), sigmoid(gate_.forward(x)));
}

ParameterList TCModule::parameters(const std::string& prefix) const {
  ParameterList out = filter_.parameters(prefix + "filter.");
  for (auto& p : gate_.parameters(prefix + "gate.")) out.push_back(std::move(p));
  return out;
}

}  // namespace mtgnn
