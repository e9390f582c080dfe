#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mtgnn/cli.hpp"
#include "mtgnn/config.hpp"
#include "mtgnn/data.hpp"
#include "mtgnn/errors.hpp"
#include "mtgnn/synth.hpp"
#include "test_util.hpp"

using namespace mtgnn;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "mtgnn");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

fs::path write_config(const fs::path& dir) {
  std::ofstream c(dir / "tiny.cfg");
  c << "# small model for command tests\n"
       "input_len = 13\noutput_len = 1\nlayers = 2\n"
       "start_channels = 4\nconv_channels = 4\nskip_channels = 4\nend_channels = 4\n"
       "embed_dim = 4\nsubgraph_k = 3\ndropout = 0\n"
       "horizon_mode = single\nhorizon = 1\nepochs = 1\nbatch_size = 16\n";
  return dir / "tiny.cfg";
}

// synthetic series plus a one-epoch checkpoint, shared by several cases
struct Fixture {
  fs::path dir, cfg, data, ckpt;
  Fixture() {
    dir = testutil::scratch_dir("cli_fixture");
    cfg = write_config(dir);
    REQUIRE(run({"synth", "--nodes", "8", "--edges", "10", "--length", "300", "--out-dir",
                 (dir / "syn").string()})
                .code == 0);
    data = dir / "syn" / "series.csv";
    auto r = run({"train", "--config", cfg.string(), "--data", data.string(), "--out-dir",
                  (dir / "run").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    ckpt = dir / "run" / "model.ckpt";
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("synth writes series and ground truth") {
  auto dir = testutil::scratch_dir("synth");
  auto r = run({"synth", "--nodes", "10", "--edges", "15", "--lag", "3", "--noise", "0.1",
                "--length", "400", "--out-dir", (dir / "a").string()});
  REQUIRE(r.code == 0);
  RawSeries s = load_csv(dir / "a" / "series.csv");
  CHECK(s.cols == 10);
  CHECK(s.rows == 400);
  auto edges = lines(dir / "a" / "edges.csv");
  CHECK(edges.front() == "src,dst,weight");
  CHECK(edges.size() == 16);

  REQUIRE(run({"synth", "--nodes", "10", "--edges", "15", "--lag", "3", "--noise", "0.1",
               "--length", "400", "--out-dir", (dir / "b").string()})
              .code == 0);
  CHECK(slurp(dir / "a" / "series.csv") == slurp(dir / "b" / "series.csv"));
  CHECK(slurp(dir / "a" / "edges.csv") == slurp(dir / "b" / "edges.csv"));

  auto too_many = run({"synth", "--nodes", "3", "--edges", "7", "--out-dir", (dir / "c").string()});
  CHECK(too_many.code == 2);
}

TEST_CASE("noise-free single edge follows the generator equation") {
  SynthOptions o;
  o.nodes = 2;
  o.edges = 1;
  o.lag = 3;
  o.noise = 0.0;
  o.length = 200;
  SynthData d = generate_synthetic(o);
  REQUIRE(d.edges.size() == 1);
  const auto e = d.edges[0];
  const std::size_t child = e.dst, parent = e.src;
  for (std::size_t t = 0; t < o.length; ++t) {
    CHECK(d.series(t, parent) == doctest::Approx(d.base(parent, t)).epsilon(1e-14));
    const double lagged = t >= o.lag ? e.weight * d.series(t - o.lag, parent) : 0.0;
    CHECK(d.series(t, child) == doctest::Approx(d.base(child, t) + lagged).epsilon(1e-12));
  }
  CHECK(std::abs(e.weight) <= 0.9);
}

TEST_CASE("train writes checkpoint, log and metrics") {
  const auto& f = fixture();
  CHECK(fs::exists(f.ckpt));
  auto log = lines(f.dir / "run" / "train_log.csv");
  bool header = false;
  for (const auto& l : log) header |= l == "epoch,iter,r,train_mae,valid_mae,valid_rmse,valid_mape,seconds";
  CHECK(header);
  CHECK(log.front().rfind("# ", 0) == 0);
  auto metrics = lines(f.dir / "run" / "metrics.csv");
  CHECK(metrics.size() >= 2);
}

TEST_CASE("train records split size and honours overrides") {
  const auto& f = fixture();
  auto dir = testutil::scratch_dir("split");
  auto r = run({"train", "--config", f.cfg.string(), "--data", f.data.string(), "--out-dir",
                dir.string(), "--override", "split_size=3", "--override", "epochs=1"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("split_size=3") != std::string::npos);
  CHECK(slurp(dir / "train_log.csv").find("parameter updates per iteration: 3") != std::string::npos);
}

TEST_CASE("usage errors exit with 2") {
  const auto& f = fixture();
  auto dir = testutil::scratch_dir("usage");
  auto missing = run({"train", "--config", f.cfg.string(), "--data", "/nowhere/metr.csv",
                      "--out-dir", dir.string()});
  CHECK(missing.code == 2);
  CHECK(missing.err.find("/nowhere/metr.csv") != std::string::npos);

  auto bad_key = run({"train", "--config", f.cfg.string(), "--data", f.data.string(), "--out-dir",
                      dir.string(), "--override", "learning_speed=3"});
  CHECK(bad_key.code == 2);
  CHECK(bad_key.err.find("learning_speed") != std::string::npos);

  CHECK(run({"train", "--bogus-flag"}).code == 2);
  CHECK(run({"gradcheck", "--op", "no_such_op"}).code == 2);
}

TEST_CASE("divergence exits with 3") {
  const auto& f = fixture();
  auto dir = testutil::scratch_dir("diverge");
  auto r = run({"train", "--config", f.cfg.string(), "--data", f.data.string(), "--out-dir",
                dir.string(), "--override", "learning_rate=1e300", "--override", "grad_clip=1e300"});
  CHECK(r.code == 3);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("runs are deterministic for a fixed seed") {
  const auto& f = fixture();
  auto dir = testutil::scratch_dir("determinism");
  auto r = run({"train", "--config", f.cfg.string(), "--data", f.data.string(), "--out-dir",
                dir.string()});
  REQUIRE(r.code == 0);
  CHECK(slurp(dir / "model.ckpt") == slurp(f.ckpt));
}

TEST_CASE("eval and forecast") {
  const auto& f = fixture();
  auto r = run({"eval", "--checkpoint", f.ckpt.string(), "--data", f.data.string(), "--split", "valid"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("mae,rmse,mape,rse,corr") != std::string::npos);

  auto dir = testutil::scratch_dir("forecast_cmd");
  auto fc = run({"forecast", "--checkpoint", f.ckpt.string(), "--data", f.data.string(), "--start",
                 "100", "--out-dir", dir.string()});
  REQUIRE_MESSAGE(fc.code == 0, fc.err);
  auto rows = lines(dir / "forecast.csv");
  CHECK(rows.front() == "step,node,prediction,truth");
  CHECK(rows.size() == 1 + 8);
}

TEST_CASE("export-graph") {
  const auto& f = fixture();
  auto dir = testutil::scratch_dir("graph");
  auto r = run({"export-graph", "--checkpoint", f.ckpt.string(), "--out-dir", dir.string(), "--top", "3"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  auto matrix = lines(dir / "adjacency.csv");
  REQUIRE(matrix.size() == 8);
  for (const auto& row : matrix) {
    std::stringstream ss(row);
    std::size_t cells = 0, nz = 0;
    for (std::string c; std::getline(ss, c, ',');) {
      ++cells;
      nz += std::stod(c) != 0.0;
    }
    CHECK(cells == 8);
    CHECK(nz <= 3);
  }
  auto edges = lines(dir / "edges.csv");
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t i = 1; i < edges.size(); ++i) {
    int s, d;
    char comma;
    std::istringstream(edges[i]) >> s >> comma >> d;
    pairs.emplace_back(s, d);
  }
  for (auto [s, d] : pairs)
    for (auto [s2, d2] : pairs) CHECK_FALSE((s == d2 && d == s2));

  auto nb = lines(dir / "neighbors.csv");
  CHECK(nb.front() == "node,rank,neighbor,weight");
  std::vector<double> node0;
  for (std::size_t i = 1; i < nb.size(); ++i)
    if (nb[i].rfind("0,", 0) == 0) node0.push_back(std::stod(nb[i].substr(nb[i].rfind(',') + 1)));
  CHECK(node0.size() <= 3);
  for (std::size_t i = 1; i < node0.size(); ++i) CHECK(node0[i - 1] >= node0[i]);
}

TEST_CASE("corrupt checkpoint exits with 3") {
  const auto& f = fixture();
  auto dir = testutil::scratch_dir("corrupt");
  std::string bytes = slurp(f.ckpt);
  bytes.resize(bytes.size() - 5);
  {
    std::ofstream o(dir / "bad.ckpt", std::ios::binary);
    o << bytes;
  }
  CHECK(run({"export-graph", "--checkpoint", (dir / "bad.ckpt").string(), "--out-dir", dir.string()}).code == 3);
  CHECK(run({"eval", "--checkpoint", (dir / "bad.ckpt").string(), "--data", f.data.string()}).code == 3);
}

TEST_CASE("gradcheck command") {
  auto r = run({"gradcheck", "--op", "mixhop", "--instances", "3"});
  CHECK(r.code == 0);
  CHECK(r.out.find("mixhop") != std::string::npos);
  CHECK(r.out.find("matmul") == std::string::npos);

  auto strict = run({"gradcheck", "--op", "tanh", "--instances", "3", "--tol", "1e-30"});
  CHECK(strict.code == 1);
  CHECK(strict.err.find("tanh") != std::string::npos);
}

TEST_CASE("config precedence") {
  auto dir = testutil::scratch_dir("precedence");
  auto cfg = write_config(dir);
  RunConfig c = resolve_config(cfg.string(), {"layers=1", "learning_rate=0.5"}, 42);
  CHECK(c.model.layers == 1);
  CHECK(c.model.start_channels == 4);
  CHECK(c.train.learning_rate == 0.5);
  CHECK(c.train.seed == 42);
  CHECK(RunConfig::from_text(c.to_text()).to_text() == c.to_text());
  CHECK_THROWS_AS(resolve_config(cfg.string(), {"nonsense=1"}, -1), ConfigError);
}

TEST_CASE("shipped preset files match the built-in presets") {
  const fs::path configs = fs::path(MTGNN_SOURCE_DIR) / "configs";
  CHECK(RunConfig::from_file(configs / "single_step.cfg").to_text() ==
        RunConfig::single_step_preset().to_text());
  CHECK(RunConfig::from_file(configs / "multi_step.cfg").to_text() ==
        RunConfig::multi_step_preset().to_text());
  CHECK_NOTHROW(RunConfig::from_file(configs / "synthetic.cfg").validate());
}

}  // TEST_SUITE
