#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mtgnn/errors.hpp"
#include "mtgnn/ops.hpp"
#include "mtgnn/training.hpp"
#include "test_util.hpp"

using namespace mtgnn;
using testutil::random_tensor;

namespace {

RawSeries noise_series(std::size_t rows, std::size_t cols, std::uint64_t seed, double wave = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  RawSeries s;
  s.rows = rows;
  s.cols = cols;
  for (std::size_t t = 0; t < rows; ++t)
    for (std::size_t i = 0; i < cols; ++i)
      s.values.push_back(3.0 + wave * std::sin(0.3 * t + i) + 0.5 * g(rng));
  return s;
}

RunConfig tiny_run(std::size_t n = 4) {
  RunConfig rc;
  auto& m = rc.model;
  m.num_nodes = n;
  m.input_len = 13;
  m.output_len = 3;
  m.layers = 2;
  m.start_channels = 4;
  m.conv_channels = 4;
  m.skip_channels = 4;
  m.end_channels = 4;
  m.embed_dim = 3;
  m.subgraph_k = n;
  m.dropout = 0.0;
  rc.train.batch_size = 8;
  rc.train.learning_rate = 0.01;
  rc.data.horizon_mode = HorizonMode::multi;
  return rc;
}

double param_norm(const ParameterList& params) {
  double s = 0;
  for (const auto& p : params)
    for (double v : p.tensor.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("loss examples") {
  Tensor y({2, 3, 4}, 1.5);
  CHECK(forecast_loss(y, y, {}, 0.0).item() == 0.0);
  Tensor shifted({2, 3, 4}, 2.5);
  CHECK(forecast_loss(shifted, y, {}, 0.0).item() == doctest::Approx(1.0).epsilon(1e-15));
  Tensor theta({2}, {3, 4});
  CHECK(forecast_loss(y, y, {{"theta", theta}}, 0.0001).item() == doctest::Approx(0.00125).epsilon(1e-12));
  CHECK_THROWS_AS(forecast_loss(Tensor(), Tensor(), {}, 0.0), ContractError);
  CHECK_THROWS_AS(forecast_loss(Tensor({2, 3}), Tensor({3, 2}), {}, 0.0), DimensionError);
}

TEST_CASE("curriculum traces") {
  std::vector<std::size_t> trace;
  std::size_t r = 1;
  for (std::size_t iter = 1; iter <= 8; ++iter) {
    r = curriculum_step(iter, r, 2, 3);
    trace.push_back(r);
  }
  CHECK(trace == std::vector<std::size_t>{1, 2, 2, 3, 3, 3, 3, 3});

  r = 1;
  for (std::size_t iter = 1; iter <= 100000; ++iter) r = curriculum_step(iter, r, 1000000000, 12);
  CHECK(r == 1);

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t s = 1 + rng() % 5, q = 1 + rng() % 6;
    std::size_t prev = 1;
    r = 1;
    for (std::size_t iter = 1; iter <= 60; ++iter) {
      r = curriculum_step(iter, r, s, q);
      CHECK(r >= prev);
      CHECK(r <= q);
      CHECK(r >= 1);
      prev = r;
    }
  }
  CHECK_THROWS_AS(curriculum_step(1, 1, 0, 3), ConfigError);
}

TEST_CASE("split_nodes examples and errors") {
  std::mt19937_64 rng(2);
  auto one = split_nodes(5, 1, rng);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == std::vector<std::size_t>{0, 1, 2, 3, 4});

  auto three = split_nodes(6, 3, rng);
  REQUIRE(three.size() == 3);
  std::set<std::size_t> seen;
  for (const auto& g : three) {
    CHECK(g.size() == 2);
    seen.insert(g.begin(), g.end());
  }
  CHECK(seen.size() == 6);
  CHECK_THROWS_AS(split_nodes(4, 5, rng), ConfigError);
  CHECK_THROWS_AS(split_nodes(4, 0, rng), ConfigError);
}

TEST_CASE("split_nodes always partitions") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    const std::size_t m = 1 + rng() % n;
    auto groups = split_nodes(n, m, rng);
    REQUIRE(groups.size() == m);
    std::vector<int> hits(n, 0);
    std::size_t lo = n, hi = 0;
    for (const auto& g : groups) {
      lo = std::min(lo, g.size());
      hi = std::max(hi, g.size());
      for (auto v : g) ++hits[v];
      CHECK(std::is_sorted(g.begin(), g.end()));
    }
    CHECK(hi - lo <= 1);
    for (int h : hits) CHECK(h == 1);
  }
}

TEST_CASE("every node pair eventually shares a group") {
  std::mt19937_64 rng(4);
  std::vector<std::vector<int>> co(10, std::vector<int>(10, 0));
  for (int iter = 0; iter < 10000; ++iter)
    for (const auto& g : split_nodes(10, 2, rng))
      for (auto a : g)
        for (auto b : g) ++co[a][b];
  for (std::size_t a = 0; a < 10; ++a)
    for (std::size_t b = 0; b < 10; ++b) CHECK(co[a][b] > 0);
}

TEST_CASE("adam examples") {
  Tensor w = Tensor({3}, {0.5, -1.0, 2.0}).set_requires_grad(true);
  Adam adam({{"w", w}}, 0.001);
  w.mutable_grad();
  w.zero_grad();
  adam.step();
  CHECK(std::vector<double>(w.data().begin(), w.data().end()) == std::vector<double>{0.5, -1.0, 2.0});

  Tensor s = Tensor::scalar(0.0).set_requires_grad(true);
  Adam a2({{"s", s}}, 0.001);
  s.mutable_grad()[0] = 1.0;
  a2.step();
  CHECK(s.item() == doctest::Approx(-0.001).epsilon(1e-7));
  CHECK(a2.steps() == 1);
}

TEST_CASE("clipping rescales to the threshold") {
  Tensor a = Tensor({2}, {0, 0}).set_requires_grad(true);
  Tensor b = Tensor({1}, {0}).set_requires_grad(true);
  a.mutable_grad()[0] = 30.0;
  a.mutable_grad()[1] = 0.0;
  b.mutable_grad()[0] = 40.0;
  ParameterList params{{"a", a}, {"b", b}};
  CHECK(clip_gradients(params, 5.0) == doctest::Approx(50.0));
  CHECK(a.grad()[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(b.grad()[0] == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(gradient_norm(params) == doctest::Approx(5.0).epsilon(1e-15));

  // below the threshold nothing changes
  CHECK(clip_gradients(params, 10.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("non-finite gradient names the parameter") {
  Tensor a = Tensor({2}, {0, 0}).set_requires_grad(true);
  a.mutable_grad()[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    gradient_norm({{"block3.gc.inflow.W1", a}});
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("block3.gc.inflow.W1") != std::string::npos);
  }
}

TEST_CASE("one iteration equals a reference clipped Adam step") {
  for (double clip : {5.0, 0.05}) {
    RunConfig rc = tiny_run(5);
    rc.model.use_curriculum = false;
    rc.train.grad_clip = clip;
    rc.train.l2_penalty = 0.01;
    RawSeries raw = noise_series(200, 5, 5, 1.0);
    WindowedDataset data(raw, 13, 3, rc.data);

    std::mt19937_64 r1(6), r2(6);
    MtgnnModel model(rc.model, r1), reference(rc.model, r2);
    Trainer trainer(model, data, rc);
    std::vector<std::size_t> starts(data.samples(Split::train).begin(),
                                    data.samples(Split::train).begin() + 8);
    auto [x, y] = data.batch(starts);
    IterationStats st = trainer.train_iteration(x, y);
    CHECK(st.r == 3);
    CHECK(st.max_clipped_norm <= clip + 1e-9);

    // straight-line step on the reference copy
    ParameterList params = reference.trainable_parameters();
    {
      Tape tape;
      TapeScope scope(tape);
      Tensor pred = reference.forward(x);
      const auto& st_data = data.stats();
      Tensor scaled(pred.shape()), shift(pred.shape());
      for (std::size_t i = 0; i < pred.numel(); ++i) {
        scaled.mutable_data()[i] = st_data.scale[i % 5];
        shift.mutable_data()[i] = st_data.mean[i % 5];
      }
      Tensor denorm = add(hadamard(pred, scaled), shift);
      Tensor loss = mean(abs(sub(denorm, y)));
      for (const auto& p : params) loss = add(loss, mul_scalar(sum_squares(p.tensor), 0.005));
      tape.backward(loss);
    }
    double sq = 0.0;
    for (const auto& p : params)
      for (double g : p.tensor.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    const double scale = norm > clip ? clip / norm : 1.0;
    for (auto& p : params) {
      auto w = p.tensor.mutable_data();
      auto g = p.tensor.grad();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = g[j] * scale;
        const double m = 0.1 * gj, v = 0.001 * gj * gj;
        w[j] -= rc.train.learning_rate * (m / 0.1) / (std::sqrt(v / 0.001) + 1e-8);
      }
    }

    auto got = model.trainable_parameters();
    REQUIRE(got.size() == params.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i)
      for (std::size_t j = 0; j < got[i].tensor.numel(); ++j)
        worst = std::max(worst, std::abs(got[i].tensor.data()[j] - params[i].tensor.data()[j]));
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("trainer curriculum and node groups") {
  RunConfig rc = tiny_run(6);
  rc.train.curriculum_step = 2;
  rc.train.split_size = 3;
  RawSeries raw = noise_series(200, 6, 7);
  WindowedDataset data(raw, 13, 3, rc.data);
  std::mt19937_64 r(8);
  MtgnnModel model(rc.model, r);
  Trainer trainer(model, data, rc);
  std::vector<std::size_t> starts{0, 1, 2, 3};
  auto [x, y] = data.batch(starts);
  std::vector<std::size_t> rs;
  for (int i = 0; i < 6; ++i) {
    IterationStats st = trainer.train_iteration(x, y);
    rs.push_back(st.r);
    CHECK(st.graph_macs.size() == 3);
    CHECK(st.max_clipped_norm <= rc.train.grad_clip + 1e-9);
  }
  CHECK(rs == std::vector<std::size_t>{1, 2, 2, 3, 3, 3});
  CHECK(trainer.optimizer().steps() == 18);

  rc.model.use_curriculum = false;
  std::mt19937_64 r2(8);
  MtgnnModel m2(rc.model, r2);
  Trainer t2(m2, data, rc);
  CHECK(t2.train_iteration(x, y).r == 3);
}

TEST_CASE("strong l2 shrinks parameters on noise") {
  RunConfig rc = tiny_run(4);
  rc.train.l2_penalty = 10.0;
  rc.train.learning_rate = 0.001;
  RawSeries raw = noise_series(120, 4, 9);
  WindowedDataset data(raw, 13, 3, rc.data);
  std::mt19937_64 r(10);
  MtgnnModel model(rc.model, r);
  Trainer trainer(model, data, rc);
  double prev = param_norm(model.trainable_parameters());
  std::mt19937_64 pick(11);
  for (int i = 0; i < 30; ++i) {
    std::vector<std::size_t> starts;
    for (int j = 0; j < 8; ++j) starts.push_back(data.samples(Split::train)[pick() % data.samples(Split::train).size()]);
    auto [x, y] = data.batch(starts);
    trainer.train_iteration(x, y);
    const double now = param_norm(model.trainable_parameters());
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("training decreases loss and keeps the best snapshot") {
  RunConfig rc = tiny_run(4);
  rc.train.epochs = 5;
  rc.train.batch_size = 16;
  rc.model.use_curriculum = false;
  RawSeries raw = noise_series(600, 4, 12, 2.0);
  WindowedDataset data(raw, 13, 3, rc.data);
  std::mt19937_64 r(13);
  MtgnnModel model(rc.model, r);
  Trainer trainer(model, data, rc);
  std::ostringstream log;
  TrainResult res = trainer.train(&log);
  REQUIRE(res.history.size() == 5);
  double drops = 0;
  for (std::size_t e = 1; e < 5; ++e) drops += res.history[e - 1].train_mae - res.history[e].train_mae;
  CHECK(drops > 0.0);
  CHECK(res.history.back().train_mae < res.history.front().train_mae);
  CHECK(trainer.evaluate(Split::valid).mae == doctest::Approx(res.best_valid_mae).epsilon(1e-12));
  CHECK(log.str().find("epoch,iter,r,train_mae,valid_mae,valid_rmse,valid_mape,seconds") != std::string::npos);
  CHECK(log.str().find("# split_size=1") != std::string::npos);
}

TEST_CASE("threaded batch assembly gives the same result") {
  RunConfig rc = tiny_run(4);
  rc.train.epochs = 2;
  RawSeries raw = noise_series(300, 4, 14, 1.0);
  WindowedDataset data(raw, 13, 3, rc.data);
  auto run = [&](const char* threads) {
    setenv("MTGNN_THREADS", threads, 1);
    std::mt19937_64 r(15);
    MtgnnModel model(rc.model, r);
    Trainer trainer(model, data, rc);
    trainer.train();
    unsetenv("MTGNN_THREADS");
    return model.parameters();
  };
  auto a = run("0");
  auto b = run("3");
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(testutil::max_abs_diff(a[i].tensor, b[i].tensor) == 0.0);
  setenv("MTGNN_THREADS", "x", 1);
  CHECK_THROWS_AS(data_threads(), ConfigError);
  unsetenv("MTGNN_THREADS");
}

}  // TEST_SUITE
