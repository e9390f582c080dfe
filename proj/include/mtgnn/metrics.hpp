#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

namespace mtgnn {

/// MAPE ignores targets with |y| at or below this.
inline constexpr double kMapeMask = 1e-8;

struct MetricReport {
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> mape;  // empty when every target is masked
  double rse = 0.0;            // +inf when the target is constant
  std::optional<double> corr;  // empty when no variable has variance

  static std::string csv_header();  // "mae,rmse,mape,rse,corr"
  std::string csv_line() const;     // undefined values print as NA
  std::string table() const;        // aligned, one metric per line
};

/// Metrics over equally shaped prediction/target buffers.
///   MAE  mean |p − y|
///   RMSE sqrt(mean (p − y)²)
///   MAPE mean over |y| > kMapeMask of |(p − y)/y|
///   RSE  ||p − y||₂ / ||y − mean(y)||₂ over the whole buffer
///   CORR mean over variables of the Pearson correlation between predicted and
///        true values; variable = index along the last axis (stride
///        `num_vars`), variables where either side has zero variance skipped.
MetricReport compute_metrics(std::span<const double> prediction, std::span<const double> target,
                             std::size_t num_vars);

}  // namespace mtgnn
