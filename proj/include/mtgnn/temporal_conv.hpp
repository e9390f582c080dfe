#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "mtgnn/parameters.hpp"
#include "mtgnn/tensor.hpp"

namespace mtgnn {

enum class DilationGrowth { linear, exponential };

/// Receptive field of m stacked 1-D convolutions of width c.
///   linear:       m(c−1) + 1
///   exponential:  1 + (c−1)(qᵐ−1)/(q−1), dilation qⁱ at layer i (q = 1 gives
///                 the linear value)
std::size_t receptive_field(std::size_t layers, std::size_t kernel_width, long long rate,
                            DilationGrowth growth);

inline constexpr std::array<std::size_t, 4> kInceptionWidths{2, 3, 6, 7};

/// Parallel dilated convolutions of several widths. Each branch produces
/// c_out / #widths channels; outputs are right-aligned to the length of the
/// widest branch and concatenated in width order.
class DilatedInception {
 public:
  DilatedInception(std::size_t in_channels, std::size_t out_channels, std::size_t dilation,
                   std::vector<std::size_t> widths, std::mt19937_64& rng);

  /// z [b,c_in,n,t] -> [b,c_out,n,t − d·(max_width−1)]
  Tensor forward(const Tensor& z) const;

  std::size_t dilation() const noexcept { return dilation_; }
  std::size_t max_width() const noexcept { return widths_.back(); }
  std::size_t output_length(std::size_t input_length) const;
  const std::vector<std::size_t>& widths() const noexcept { return widths_; }

  std::vector<Tensor>& kernels() noexcept { return kernels_; }
  std::vector<Tensor>& biases() noexcept { return biases_; }

  ParameterList parameters(const std::string& prefix) const;

 private:
  std::size_t in_channels_, out_channels_, dilation_;
  std::vector<std::size_t> widths_;
  std::vector<Tensor> kernels_;  // [c_out/#widths, c_in, 1, width]
  std::vector<Tensor> biases_;   // [c_out/#widths]
};

/// Gated temporal convolution: tanh(filter(x)) ⊙ sigmoid(gate(x)).
class TCModule {
 public:
  TCModule(std::size_t in_channels, std::size_t out_channels, std::size_t dilation,
           std::vector<std::size_t> widths, std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;

  DilatedInception& filter() noexcept { return filter_; }
  DilatedInception& gate() noexcept { return gate_; }
  const DilatedInception& filter() const noexcept { return filter_; }

  ParameterList parameters(const std::string& prefix) const;

 private:
  DilatedInception filter_, gate_;
};

}  // namespace mtgnn
