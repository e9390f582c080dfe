#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtgnn/config.hpp"
#include "mtgnn/tensor.hpp"

namespace mtgnn {

/// T×N matrix, row = time step, column = variable.
struct RawSeries {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major
  std::vector<std::string> names;  // empty unless the file had a header row
  std::string sample_rate;

  double operator()(std::size_t t, std::size_t i) const { return values[t * cols + i]; }
};

/// Parses delimiter-separated numbers. `delimiter` 0 auto-detects comma,
/// semicolon, tab, or runs of whitespace from the first data line. A first
/// line consisting only of non-numeric cells is taken as variable names.
/// Empty cells and "nan" follow `policy`.
RawSeries parse_series(std::istream& in, char delimiter = 0, NanPolicy policy = NanPolicy::reject);
RawSeries load_csv(const std::filesystem::path& path, char delimiter = 0,
                   NanPolicy policy = NanPolicy::reject);
void save_csv(const std::filesystem::path& path, const RawSeries& series);

/// Per-variable affine normalization fitted on training rows.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> scale;

  static NormStats fit(const RawSeries& raw, std::size_t row_begin, std::size_t row_end,
                       Normalization kind);
  double normalize(double v, std::size_t var) const { return (v - mean[var]) / scale[var]; }
  double denormalize(double v, std::size_t var) const { return v * scale[var] + mean[var]; }
};

/// Scales below this are replaced by 1 so constant series normalize to zero.
inline constexpr double kScaleGuard = 1e-8;

enum class Split { train, valid, test };

/// Row ranges [begin, end) per split: first floor(train·T) rows train, the next
/// floor((train+valid)·T) − floor(train·T) rows valid, the rest test.
struct SplitBounds {
  std::size_t train_end = 0;
  std::size_t valid_end = 0;
  std::size_t total = 0;

  static SplitBounds from_fractions(std::size_t rows, double train, double valid);
  Split split_of(std::size_t row) const;
};

/// Sliding windows over a normalized series. Sample s uses input rows
/// [s, s+P); multi-step targets are rows [s+P, s+P+Q), the single-step target
/// is row s+P−1+horizon. A sample belongs to the split containing all of its
/// target rows; samples whose targets straddle a boundary are dropped.
class WindowedDataset {
 public:
  /// `stats` overrides the statistics fitted on the training rows (used when
  /// a checkpoint carries them).
  WindowedDataset(const RawSeries& raw, std::size_t input_len, std::size_t output_len,
                  const DataConfig& config, const NormStats* stats = nullptr);

  std::size_t num_nodes() const noexcept { return raw_.cols; }
  std::size_t num_rows() const noexcept { return raw_.rows; }
  std::size_t in_dim() const noexcept { return time_of_day_ ? 2 : 1; }
  std::size_t input_len() const noexcept { return input_len_; }
  std::size_t output_len() const noexcept { return output_len_; }
  const NormStats& stats() const noexcept { return stats_; }
  const SplitBounds& bounds() const noexcept { return bounds_; }
  const RawSeries& raw() const noexcept { return raw_; }

  /// Window start indices of a split, ascending.
  const std::vector<std::size_t>& samples(Split split) const;
  /// Raw row indices of sample `start`'s targets, in horizon order.
  std::vector<std::size_t> target_rows(std::size_t start) const;

  /// X [b,D,n,P] (normalized values, time-of-day channel when enabled) and
  /// Y [b,Q,n] (raw units) for the given window starts and nodes.
  std::pair<Tensor, Tensor> batch(std::span<const std::size_t> starts,
                                  std::span<const std::size_t> nodes) const;
  std::pair<Tensor, Tensor> batch(std::span<const std::size_t> starts) const;
  /// X [1,D,N,P] for the window starting at `start`; targets may lie past the
  /// end of the series.
  Tensor input_window(std::size_t start) const;

  /// Normalized value of variable `var` at row `t`.
  double normalized(std::size_t t, std::size_t var) const { return norm_[t * raw_.cols + var]; }

 private:
  RawSeries raw_;
  std::vector<double> norm_;
  std::size_t input_len_, output_len_, horizon_, steps_per_day_;
  bool single_step_, time_of_day_;
  NormStats stats_;
  SplitBounds bounds_;
  std::vector<std::size_t> train_, valid_, test_;
};

/// Writes `step,node,prediction[,truth]` rows. pred/truth are [Q,n] (or [b,Q,n]
/// with b = 1); truth may be undefined.
void write_forecast_csv(const std::filesystem::path& path, const Tensor& prediction,
                        const Tensor& truth);

}  // namespace mtgnn
