#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mtgnn/data.hpp"
#include "mtgnn/errors.hpp"
#include "mtgnn/metrics.hpp"
#include "test_util.hpp"

using namespace mtgnn;

namespace {

RawSeries parse(const std::string& text, char delim = 0, NanPolicy p = NanPolicy::reject) {
  std::istringstream in(text);
  return parse_series(in, delim, p);
}

RawSeries random_series(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(5.0, 2.0);
  RawSeries s;
  s.rows = rows;
  s.cols = cols;
  for (std::size_t i = 0; i < rows * cols; ++i) s.values.push_back(g(rng));
  return s;
}

std::size_t parse_error_line(const std::string& text) {
  try {
    parse(text);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST_SUITE("data_metrics") {

TEST_CASE("parse small tables") {
  RawSeries s = parse("1,2\n3,4\n5,6");
  CHECK(s.rows == 3);
  CHECK(s.cols == 2);
  CHECK(s.values == std::vector<double>{1, 2, 3, 4, 5, 6});

  RawSeries w = parse("1 2  3\n4\t5 6\n");
  CHECK(w.rows == 2);
  CHECK(w.cols == 3);

  RawSeries h = parse("a,b\n1,2\n3,4\n");
  CHECK(h.rows == 2);
  CHECK(h.names == std::vector<std::string>{"a", "b"});

  RawSeries semi = parse("1;2\n3;4\n", ';');
  CHECK(semi.values == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("parse errors carry the line number") {
  CHECK(parse_error_line("1,2\n3,4\n5,6\n7,8\n9,10\n11,12\n13,x\n15,16\n") == 7);
  CHECK(parse_error_line("1,2\n3,4,5\n") == 2);
  CHECK(parse_error_line("") >= 1);
  CHECK_THROWS_AS(parse("1,2\n3,nan\n"), ParseError);
  CHECK_THROWS_AS(parse("1,2\n"), ParseError);
  CHECK_THROWS_AS(load_csv("/nonexistent/series.csv"), MissingInputError);
}

TEST_CASE("forward fill") {
  RawSeries s = parse("1,2\n,4\n5,nan\n", 0, NanPolicy::forward_fill);
  CHECK(s.values == std::vector<double>{1, 2, 1, 4, 5, 4});
  CHECK_THROWS_AS(parse(",2\n3,4\n", 0, NanPolicy::forward_fill), ParseError);
}

TEST_CASE("csv round trip") {
  RawSeries s = random_series(20, 3, 1);
  s.names = {"x", "y", "z"};
  auto dir = testutil::scratch_dir("csv");
  save_csv(dir / "s.csv", s);
  RawSeries back = load_csv(dir / "s.csv");
  CHECK(back.names == s.names);
  CHECK(back.values == s.values);
}

TEST_CASE("window counts match an enumeration oracle") {
  RawSeries s = random_series(10, 2, 2);
  DataConfig c;
  c.horizon_mode = HorizonMode::single;
  c.horizon = 1;
  c.train_frac = 0.6;
  c.valid_frac = 0.2;
  c.test_frac = 0.2;
  WindowedDataset d(s, 3, 1, c);
  // rows 0-5 train, 6-7 valid, 8-9 test; target row of start s is s + 3
  std::vector<std::size_t> tr, va, te;
  for (std::size_t st = 0; st + 3 + 1 <= 10; ++st) {
    const std::size_t row = st + 3;
    (row < 6 ? tr : row < 8 ? va : te).push_back(st);
  }
  CHECK(d.samples(Split::train) == tr);
  CHECK(d.samples(Split::valid) == va);
  CHECK(d.samples(Split::test) == te);
  CHECK(tr.size() == 3);
  CHECK(va.size() == 2);
  CHECK(te.size() == 2);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = 8 + rng() % 40, P = 1 + rng() % 5, Q = 1 + rng() % 4;
    DataConfig m;
    m.horizon_mode = rng() % 2 ? HorizonMode::multi : HorizonMode::single;
    m.horizon = 1 + rng() % 4;
    const std::size_t q = m.horizon_mode == HorizonMode::single ? 1 : Q;
    const std::size_t span = P + (m.horizon_mode == HorizonMode::single ? m.horizon : Q);
    if (span > T) continue;
    RawSeries r = random_series(T, 2, trial);
    WindowedDataset w(r, P, q, m);
    const std::size_t a = static_cast<std::size_t>(std::floor(0.7 * T + 1e-9));
    const std::size_t b = static_cast<std::size_t>(std::floor(0.9 * T + 1e-9));
    auto split = [&](std::size_t row) { return row < a ? 0 : row < b ? 1 : 2; };
    std::vector<std::size_t> expect[3];
    for (std::size_t st = 0; st + span <= T; ++st) {
      std::size_t lo, hi;
      if (m.horizon_mode == HorizonMode::single) {
        lo = hi = st + P - 1 + m.horizon;
      } else {
        lo = st + P;
        hi = st + P + Q - 1;
      }
      if (split(lo) == split(hi)) expect[split(lo)].push_back(st);
    }
    CHECK(w.samples(Split::train) == expect[0]);
    CHECK(w.samples(Split::valid) == expect[1]);
    CHECK(w.samples(Split::test) == expect[2]);
  }
}

TEST_CASE("insufficient length") {
  RawSeries s = random_series(10, 2, 4);
  DataConfig c;
  CHECK_THROWS_AS(WindowedDataset(s, 8, 3, c), LengthError);
}

TEST_CASE("constant series normalizes to zero") {
  RawSeries s;
  s.rows = 30;
  s.cols = 2;
  s.values.assign(60, 4.0);
  DataConfig c;
  WindowedDataset d(s, 5, 2, c);
  auto starts = d.samples(Split::train);
  auto [x, y] = d.batch(starts);
  for (double v : x.data()) CHECK(v == 0.0);
  for (double v : y.data()) CHECK(v == 4.0);
}

TEST_CASE("multi-step traffic-shaped windows") {
  RawSeries s = random_series(80, 207, 5);
  DataConfig c;
  c.time_of_day = true;
  WindowedDataset d(s, 12, 12, c);
  std::vector<std::size_t> starts{0, 1, 2};
  auto [x, y] = d.batch(starts);
  CHECK(x.shape() == Shape{3, 2, 207, 12});
  CHECK(y.shape() == Shape{3, 12, 207});
  CHECK(x.at({1, 1, 0, 3}) == doctest::Approx(4.0 / 288.0).epsilon(1e-15));
}

TEST_CASE("targets start right after the input window") {
  RawSeries s = random_series(60, 3, 6);
  DataConfig c;
  WindowedDataset d(s, 7, 4, c);
  for (auto split : {Split::train, Split::valid, Split::test})
    for (auto st : d.samples(split)) {
      std::vector<std::size_t> one{st};
      auto [x, y] = d.batch(one);
      for (std::size_t v = 0; v < 3; ++v) {
        CHECK(d.stats().denormalize(x.at({0, 0, v, 6}), v) == doctest::Approx(s(st + 6, v)).epsilon(1e-12));
        CHECK(y.at({0, 0, v}) == s(st + 7, v));
        CHECK(y.at({0, 3, v}) == s(st + 10, v));
      }
    }
}

TEST_CASE("statistics use training rows only") {
  RawSeries s = random_series(50, 3, 7);
  DataConfig c;
  WindowedDataset a(s, 5, 2, c);
  RawSeries t = s;
  for (std::size_t row = a.bounds().train_end; row < 50; ++row)
    for (std::size_t v = 0; v < 3; ++v) t.values[row * 3 + v] += 1000.0 * (row + v);
  WindowedDataset b(t, 5, 2, c);
  CHECK(a.stats().mean == b.stats().mean);
  CHECK(a.stats().scale == b.stats().scale);

  RawSeries u = s;
  u.values[0] += 1.0;
  WindowedDataset e(u, 5, 2, c);
  CHECK(e.stats().mean != a.stats().mean);
}

TEST_CASE("normalization round trip") {
  RawSeries s = random_series(40, 4, 8);
  for (auto kind : {Normalization::zscore, Normalization::max}) {
    NormStats st = NormStats::fit(s, 0, 28, kind);
    for (std::size_t t = 0; t < 40; ++t)
      for (std::size_t v = 0; v < 4; ++v)
        CHECK(std::abs(st.denormalize(st.normalize(s(t, v), v), v) - s(t, v)) <= 1e-9);
  }
}

TEST_CASE("metric examples") {
  std::vector<double> y{1, 2, 3, 4, 5, 6};
  MetricReport same = compute_metrics(y, y, 2);
  CHECK(same.mae == 0.0);
  CHECK(same.rmse == 0.0);
  CHECK(*same.mape == 0.0);
  CHECK(same.rse == 0.0);
  CHECK(*same.corr == doctest::Approx(1.0));

  double m = 3.5;
  std::vector<double> flat(6, m);
  CHECK(compute_metrics(flat, y, 2).rse == doctest::Approx(1.0).epsilon(1e-15));

  std::vector<double> p{1, 2, 3}, t{2, 2, 2};
  MetricReport r = compute_metrics(p, t, 1);
  CHECK(r.mae == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r.rmse == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));
  CHECK(*r.mape == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(std::isinf(r.rse));
  CHECK_FALSE(r.corr.has_value());
  CHECK(r.csv_line().find("NA") != std::string::npos);
}

TEST_CASE("mape mask and hand-computed correlation") {
  std::vector<double> zeros(4, 0.0), p{1, 2, 3, 4};
  MetricReport r = compute_metrics(p, zeros, 1);
  CHECK_FALSE(r.mape.has_value());
  CHECK(r.csv_line().find("NA") != std::string::npos);
  CHECK(MetricReport::csv_header() == "mae,rmse,mape,rse,corr");

  // two variables interleaved; Pearson per variable, then averaged
  std::vector<double> pred{1, 10, 2, 8, 3, 9}, truth{2, 1, 4, 3, 6, 2};
  auto pearson = [](std::vector<double> a, std::vector<double> b) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ma += a[i] / a.size();
      mb += b[i] / b.size();
    }
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
  };
  const double expected = 0.5 * (pearson({1, 2, 3}, {2, 4, 6}) + pearson({10, 8, 9}, {1, 3, 2}));
  CHECK(*compute_metrics(pred, truth, 2).corr == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("metric symmetry") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.5, 3.0);
  std::vector<double> a(30), b(30);
  for (auto& v : a) v = u(rng);
  for (auto& v : b) v = u(rng) * 2;
  MetricReport ab = compute_metrics(a, b, 3), ba = compute_metrics(b, a, 3);
  CHECK(ab.mae == doctest::Approx(ba.mae).epsilon(1e-15));
  CHECK(ab.rmse == doctest::Approx(ba.rmse).epsilon(1e-15));
  CHECK(ab.rse != doctest::Approx(ba.rse));
  CHECK(*ab.mape != doctest::Approx(*ba.mape));
}

TEST_CASE("forecast csv") {
  auto dir = testutil::scratch_dir("forecast");
  Tensor pred({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  write_forecast_csv(dir / "f.csv", pred, Tensor());
  std::ifstream in(dir / "f.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,node,prediction");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 6);

  write_forecast_csv(dir / "g.csv", pred, pred);
  std::ifstream g(dir / "g.csv");
  std::getline(g, line);
  CHECK(line == "step,node,prediction,truth");
}

}  // TEST_SUITE
