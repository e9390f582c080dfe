#include "mtgnn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>

#include "mtgnn/errors.hpp"

namespace mtgnn {

double SynthData::base(std::size_t node, std::size_t t) const {
  return amplitude[node] *
         std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period[node] + phase[node]);
}

SynthData generate_synthetic(const SynthOptions& o) {
  if (o.nodes < 2) throw ConfigError("synthetic data needs at least 2 nodes");
  if (o.edges > o.nodes * (o.nodes - 1))
    throw ConfigError("requested " + std::to_string(o.edges) + " edges, a simple directed graph on " +
                      std::to_string(o.nodes) + " nodes has at most " +
                      std::to_string(o.nodes * (o.nodes - 1)));
  if (o.lag == 0) throw ConfigError("synthetic lag must be at least 1");
  if (o.length < 2) throw ConfigError("synthetic series needs at least 2 steps");
  if (!(o.noise >= 0.0)) throw ConfigError("noise level must be non-negative");

  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SynthData d;
  const std::size_t n = o.nodes;
  for (std::size_t i = 0; i < n; ++i) {
    d.amplitude.push_back(1.0 + unit(rng));
    d.period.push_back(12.0 + 36.0 * unit(rng));
    d.phase.push_back(2.0 * std::numbers::pi * unit(rng));
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) pairs.emplace_back(i, j);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  pairs.resize(o.edges);
  std::sort(pairs.begin(), pairs.end());
  std::vector<double> incoming(n, 0.0);
  for (auto [s, t] : pairs) {
    const double w = (0.5 + 0.4 * unit(rng)) * (unit(rng) < 0.5 ? -1.0 : 1.0);
    d.edges.push_back({s, t, w});
    incoming[t] += std::fabs(w);
  }
  for (auto& e : d.edges)
    if (incoming[e.dst] > 0.9) e.weight *= 0.9 / incoming[e.dst];

  std::normal_distribution<double> gauss(0.0, 1.0);
  auto& s = d.series;
  s.rows = o.length;
  s.cols = n;
  s.values.assign(o.length * n, 0.0);
  s.sample_rate = "synthetic";
  for (std::size_t t = 0; t < o.length; ++t) {
    for (std::size_t i = 0; i < n; ++i) s.values[t * n + i] = d.base(i, t);
    if (t >= o.lag)
      for (const auto& e : d.edges) s.values[t * n + e.dst] += e.weight * s.values[(t - o.lag) * n + e.src];
    for (std::size_t i = 0; i < n; ++i) {
      const double eps = gauss(rng);
      s.values[t * n + i] += o.noise * eps;
    }
  }
  return d;
}

void save_synthetic(const SynthData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_csv(dir / "series.csv", data.series);
  std::ofstream e(dir / "edges.csv");
  if (!e) throw MissingInputError("cannot write " + (dir / "edges.csv").string());
  e << std::setprecision(17) << "src,dst,weight\n";
  for (const auto& edge : data.edges) e << edge.src << ',' << edge.dst << ',' << edge.weight << '\n';
}

std::size_t synthetic_length_for(std::size_t train_windows, std::size_t input_len,
                                 std::size_t horizon, double train_frac) {
  // Training windows = floor(frac·T) − (P − 1 + h); floor rules out a closed form.
  for (std::size_t t = input_len + horizon;; ++t) {
    const auto train_end =
        static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(t) + 1e-9));
    const std::size_t span = input_len - 1 + horizon;
    if (train_end > span && train_end - span >= train_windows) return t;
  }
}

}  // namespace mtgnn
