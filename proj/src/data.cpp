#include "mtgnn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>

#include "mtgnn/errors.hpp"

namespace mtgnn {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

char detect_delimiter(std::string_view line) {
  for (char c : {',', ';', '\t'})
    if (line.find(c) != std::string_view::npos) return c;
  return ' ';
}

std::vector<std::string_view> split_cells(std::string_view line, char delim) {
  std::vector<std::string_view> cells;
  if (delim == ' ') {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
      if (i >= line.size()) break;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
      cells.push_back(line.substr(i, j - i));
      i = j;
    }
    return cells;
  }
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

// False for a malformed cell; `missing` marks empty/NaN cells.
bool parse_number(std::string_view cell, double& out, bool& missing) {
  missing = false;
  if (cell.empty() || cell == "nan" || cell == "NaN" || cell == "NAN" || cell == "NA") {
    missing = true;
    return true;
  }
  if (cell.front() == '+') cell.remove_prefix(1);
  auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  if (ec != std::errc() || p != cell.data() + cell.size()) return false;
  if (std::isnan(out)) missing = true;
  return std::isfinite(out) || missing;
}

}  // namespace

RawSeries parse_series(std::istream& in, char delimiter, NanPolicy policy) {
  RawSeries s;
  std::string line;
  std::size_t lineno = 0;
  char delim = delimiter;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (!delim) delim = detect_delimiter(line);
    const auto cells = split_cells(line, delim);

    if (first_content) {
      first_content = false;
      bool all_text = true;
      for (auto c : cells) {
        double v;
        bool missing;
        if (parse_number(c, v, missing) && !missing) all_text = false;
      }
      if (all_text && !cells.empty() && !cells[0].empty() && cells[0] != "nan" && cells[0] != "NaN") {
        for (auto c : cells) s.names.emplace_back(c);
        s.cols = cells.size();
        continue;
      }
    }

    if (s.cols == 0) s.cols = cells.size();
    if (cells.size() != s.cols)
      throw ParseError(lineno, "expected " + std::to_string(s.cols) + " columns, found " +
                                   std::to_string(cells.size()));
    for (std::size_t j = 0; j < cells.size(); ++j) {
      double v = 0.0;
      bool missing = false;
      if (!parse_number(cells[j], v, missing))
        throw ParseError(lineno, "non-numeric cell '" + std::string(cells[j]) + "' in column " +
                                     std::to_string(j + 1));
      if (missing) {
        if (policy == NanPolicy::reject)
          throw ParseError(lineno, "missing value in column " + std::to_string(j + 1));
        if (s.rows == 0)
          throw ParseError(lineno, "missing value in the first row cannot be forward-filled");
        v = s.values[(s.rows - 1) * s.cols + j];
      }
      s.values.push_back(v);
    }
    ++s.rows;
  }
  if (s.rows == 0) throw ParseError(std::max<std::size_t>(lineno, 1), "no numeric rows (empty file)");
  if (s.rows < 2) throw ParseError(lineno, "need at least 2 time steps, found 1");
  return s;
}

RawSeries load_csv(const std::filesystem::path& path, char delimiter, NanPolicy policy) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open data file " + path.string());
  try {
    return parse_series(in, delimiter, policy);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path.string() + ": " +
                                   std::string(e.what()).substr(std::string(e.what()).find(": ") + 2));
  }
}

void save_csv(const std::filesystem::path& path, const RawSeries& series) {
  std::ofstream out(path);
  if (!out) throw MissingInputError("cannot write " + path.string());
  out << std::setprecision(17);
  if (!series.names.empty()) {
    for (std::size_t j = 0; j < series.names.size(); ++j) out << (j ? "," : "") << series.names[j];
    out << '\n';
  }
  for (std::size_t t = 0; t < series.rows; ++t) {
    for (std::size_t j = 0; j < series.cols; ++j) out << (j ? "," : "") << series(t, j);
    out << '\n';
  }
}

NormStats NormStats::fit(const RawSeries& raw, std::size_t row_begin, std::size_t row_end,
                         Normalization kind) {
  if (row_end <= row_begin || row_end > raw.rows)
    throw LengthError("normalization needs a non-empty training range");
  NormStats st;
  st.mean.assign(raw.cols, 0.0);
  st.scale.assign(raw.cols, 1.0);
  const double count = static_cast<double>(row_end - row_begin);
  for (std::size_t j = 0; j < raw.cols; ++j) {
    double scale = 0.0;
    if (kind == Normalization::zscore) {
      double m = 0.0;
      for (std::size_t t = row_begin; t < row_end; ++t) m += raw(t, j);
      m /= count;
      double var = 0.0;
      for (std::size_t t = row_begin; t < row_end; ++t) var += (raw(t, j) - m) * (raw(t, j) - m);
      st.mean[j] = m;
      scale = std::sqrt(var / count);
    } else {
      for (std::size_t t = row_begin; t < row_end; ++t) scale = std::max(scale, std::fabs(raw(t, j)));
    }
    st.scale[j] = scale > kScaleGuard ? scale : 1.0;
  }
  return st;
}

SplitBounds SplitBounds::from_fractions(std::size_t rows, double train, double valid) {
  // The epsilon keeps products such as 0.6 · 10 from flooring to 5.
  auto cut = [rows](double frac) {
    return std::min(rows, static_cast<std::size_t>(std::floor(frac * static_cast<double>(rows) + 1e-9)));
  };
  SplitBounds b;
  b.total = rows;
  b.train_end = cut(train);
  b.valid_end = std::max(b.train_end, cut(train + valid));
  return b;
}

Split SplitBounds::split_of(std::size_t row) const {
  if (row < train_end) return Split::train;
  if (row < valid_end) return Split::valid;
  return Split::test;
}

WindowedDataset::WindowedDataset(const RawSeries& raw, std::size_t input_len,
                                 std::size_t output_len, const DataConfig& config,
                                 const NormStats* stats)
    : raw_(raw),
      input_len_(input_len),
      output_len_(output_len),
      horizon_(config.horizon),
      steps_per_day_(config.steps_per_day),
      single_step_(config.horizon_mode == HorizonMode::single),
      time_of_day_(config.time_of_day) {
  config.validate();
  if (input_len_ == 0 || output_len_ == 0) throw LengthError("window lengths must be positive");
  if (single_step_ && output_len_ != 1)
    throw ConfigError("single-step windows have exactly one target (output_len = 1)");
  const std::size_t span = input_len_ + (single_step_ ? horizon_ : output_len_);
  if (span > raw_.rows)
    throw LengthError("series has " + std::to_string(raw_.rows) + " rows, windows need " +
                      std::to_string(span));

  bounds_ = SplitBounds::from_fractions(raw_.rows, config.train_frac, config.valid_frac);
  if (bounds_.train_end == 0) throw LengthError("training split is empty");
  if (stats) {
    if (stats->mean.size() != raw_.cols || stats->scale.size() != raw_.cols)
      throw DimensionError("normalization statistics cover " + std::to_string(stats->mean.size()) +
                           " variables, data has " + std::to_string(raw_.cols));
    stats_ = *stats;
  } else {
    stats_ = NormStats::fit(raw_, 0, bounds_.train_end, config.normalization);
  }

  norm_.resize(raw_.values.size());
  for (std::size_t t = 0; t < raw_.rows; ++t)
    for (std::size_t j = 0; j < raw_.cols; ++j)
      norm_[t * raw_.cols + j] = stats_.normalize(raw_(t, j), j);

  for (std::size_t s = 0; s + span <= raw_.rows; ++s) {
    const auto rows = target_rows(s);
    const Split first = bounds_.split_of(rows.front());
    if (bounds_.split_of(rows.back()) != first) continue;
    (first == Split::train ? train_ : first == Split::valid ? valid_ : test_).push_back(s);
  }
}

const std::vector<std::size_t>& WindowedDataset::samples(Split split) const {
  return split == Split::train ? train_ : split == Split::valid ? valid_ : test_;
}

std::vector<std::size_t> WindowedDataset::target_rows(std::size_t start) const {
  if (single_step_) return {start + input_len_ - 1 + horizon_};
  std::vector<std::size_t> rows(output_len_);
  for (std::size_t q = 0; q < output_len_; ++q) rows[q] = start + input_len_ + q;
  return rows;
}

std::pair<Tensor, Tensor> WindowedDataset::batch(std::span<const std::size_t> starts) const {
  std::vector<std::size_t> all(raw_.cols);
  for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
  return batch(starts, all);
}

std::pair<Tensor, Tensor> WindowedDataset::batch(std::span<const std::size_t> starts,
                                                 std::span<const std::size_t> nodes) const {
  const std::size_t b = starts.size(), n = nodes.size(), p = input_len_, d = in_dim();
  const std::size_t q = output_len_;
  if (b == 0) throw ContractError("empty batch");
  for (auto v : nodes)
    if (v >= raw_.cols) throw DimensionError("node index " + std::to_string(v) + " out of range");
  std::vector<double> x(b * d * n * p), y(b * q * n);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t s = starts[i];
    if (s + input_len_ + (single_step_ ? horizon_ : q) > raw_.rows)
      throw LengthError("window start " + std::to_string(s) + " runs past the series end");
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t t = 0; t < p; ++t) {
        const std::size_t row = s + t;
        x[((i * d + 0) * n + v) * p + t] = normalized(row, nodes[v]);
        if (time_of_day_)
          x[((i * d + 1) * n + v) * p + t] =
              static_cast<double>(row % steps_per_day_) / static_cast<double>(steps_per_day_);
      }
    const auto rows = target_rows(s);
    for (std::size_t h = 0; h < q; ++h)
      for (std::size_t v = 0; v < n; ++v) y[(i * q + h) * n + v] = raw_(rows[h], nodes[v]);
  }
  return {Tensor({b, d, n, p}, std::move(x)), Tensor({b, q, n}, std::move(y))};
}

Tensor WindowedDataset::input_window(std::size_t start) const {
  const std::size_t n = raw_.cols, p = input_len_, d = in_dim();
  if (start + p > raw_.rows)
    throw LengthError("input window at row " + std::to_string(start) + " runs past the series end");
  std::vector<double> x(d * n * p);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t t = 0; t < p; ++t) {
      const std::size_t row = start + t;
      x[v * p + t] = normalized(row, v);
      if (time_of_day_)
        x[(n + v) * p + t] =
            static_cast<double>(row % steps_per_day_) / static_cast<double>(steps_per_day_);
    }
  return Tensor({1, d, n, p}, std::move(x));
}

void write_forecast_csv(const std::filesystem::path& path, const Tensor& prediction,
                        const Tensor& truth) {
  const auto& s = prediction.shape();
  if (!(s.size() == 2 || (s.size() == 3 && s[0] == 1)))
    throw DimensionError("forecast output expects [Q,n] or [1,Q,n], got " + shape_str(s));
  if (truth.defined() && truth.numel() != prediction.numel())
    throw DimensionError("forecast truth " + shape_str(truth.shape()) + " does not match " +
                         shape_str(s));
  const std::size_t q = s[s.size() - 2], n = s.back();
  std::ofstream out(path);
  if (!out) throw MissingInputError("cannot write " + path.string());
  out << std::setprecision(12) << "step,node,prediction" << (truth.defined() ? ",truth" : "") << '\n';
  auto p = prediction.data();
  for (std::size_t h = 0; h < q; ++h)
    for (std::size_t v = 0; v < n; ++v) {
      out << h + 1 << ',' << v << ',' << p[h * n + v];
      if (truth.defined()) out << ',' << truth.data()[h * n + v];
      out << '\n';
    }
}

}  // namespace mtgnn
