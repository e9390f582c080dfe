#include "mtgnn/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "mtgnn/errors.hpp"

namespace mtgnn {

namespace {

// Sum of squared deviations small relative to the sum of squares counts as
// zero variance, so constant series survive rounding in the mean.
bool negligible(double ss_dev, double ss) { return ss_dev <= 1e-24 * ss || ss_dev == 0.0; }

std::string fmt(std::optional<double> v) {
  if (!v) return "NA";
  std::ostringstream os;
  os << std::setprecision(10) << *v;
  return os.str();
}

}  // namespace

MetricReport compute_metrics(std::span<const double> p, std::span<const double> y,
                             std::size_t num_vars) {
  if (p.size() != y.size())
    throw DimensionError("metrics: prediction has " + std::to_string(p.size()) +
                         " values, target " + std::to_string(y.size()));
  if (p.empty()) throw ContractError("metrics: empty input");
  if (num_vars == 0 || p.size() % num_vars != 0)
    throw DimensionError("metrics: " + std::to_string(p.size()) +
                         " values do not split into variables of " + std::to_string(num_vars));
  const double n = static_cast<double>(p.size());

  MetricReport r;
  double abs_sum = 0.0, sq_sum = 0.0, ape_sum = 0.0, y_sum = 0.0;
  std::size_t ape_count = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = p[i] - y[i];
    abs_sum += std::fabs(e);
    sq_sum += e * e;
    y_sum += y[i];
    if (std::fabs(y[i]) > kMapeMask) {
      ape_sum += std::fabs(e / y[i]);
      ++ape_count;
    }
  }
  r.mae = abs_sum / n;
  r.rmse = std::sqrt(sq_sum / n);
  if (ape_count) r.mape = ape_sum / static_cast<double>(ape_count);

  const double y_mean = y_sum / n;
  double dev = 0.0, y_ss = 0.0;
  for (double v : y) {
    dev += (v - y_mean) * (v - y_mean);
    y_ss += v * v;
  }
  if (negligible(dev, y_ss))
    r.rse = sq_sum == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  else
    r.rse = std::sqrt(sq_sum) / std::sqrt(dev);

  const std::size_t per_var = p.size() / num_vars;
  double corr_sum = 0.0;
  std::size_t corr_count = 0;
  for (std::size_t v = 0; v < num_vars; ++v) {
    double pm = 0.0, ym = 0.0;
    for (std::size_t j = 0; j < per_var; ++j) {
      pm += p[j * num_vars + v];
      ym += y[j * num_vars + v];
    }
    pm /= static_cast<double>(per_var);
    ym /= static_cast<double>(per_var);
    double sxy = 0.0, sxx = 0.0, syy = 0.0, px2 = 0.0, py2 = 0.0;
    for (std::size_t j = 0; j < per_var; ++j) {
      const double a = p[j * num_vars + v], b = y[j * num_vars + v];
      sxy += (a - pm) * (b - ym);
      sxx += (a - pm) * (a - pm);
      syy += (b - ym) * (b - ym);
      px2 += a * a;
      py2 += b * b;
    }
    if (negligible(sxx, px2) || negligible(syy, py2)) continue;
    corr_sum += sxy / std::sqrt(sxx * syy);
    ++corr_count;
  }
  if (corr_count) r.corr = corr_sum / static_cast<double>(corr_count);
  return r;
}

std::string MetricReport::csv_header() { return "mae,rmse,mape,rse,corr"; }

std::string MetricReport::csv_line() const {
  return fmt(mae) + "," + fmt(rmse) + "," + fmt(mape) + "," + fmt(rse) + "," + fmt(corr);
}

std::string MetricReport::table() const {
  std::ostringstream os;
  auto row = [&](const char* name, std::optional<double> v) {
    os << std::left << std::setw(6) << name << std::right << std::setw(16) << fmt(v) << '\n';
  };
  row("MAE", mae);
  row("RMSE", rmse);
  row("MAPE", mape);
  row("RSE", rse);
  row("CORR", corr);
  return os.str();
}

}  // namespace mtgnn
