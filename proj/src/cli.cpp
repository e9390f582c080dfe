#include "mtgnn/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "mtgnn/checkpoint.hpp"
#include "mtgnn/data.hpp"
#include "mtgnn/errors.hpp"
#include "mtgnn/gradcheck.hpp"
#include "mtgnn/metrics.hpp"
#include "mtgnn/model.hpp"
#include "mtgnn/ops.hpp"
#include "mtgnn/synth.hpp"
#include "mtgnn/training.hpp"

namespace mtgnn {

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides,
                         long long seed) {
  RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::from_file(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    cfg.set(std::string_view(kv).substr(0, eq), std::string_view(kv).substr(eq + 1));
  }
  if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
  return cfg;
}

namespace {

struct Options {
  std::string config, data, checkpoint, out_dir = ".", op, split = "test";
  std::vector<std::string> overrides;
  long long seed = -1;
  double tol = 1e-4;
  std::size_t instances = 20;
  long long start = -1;
  std::size_t top = 0;
  SynthOptions synth;
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing --") + what);
  if (!std::filesystem::is_regular_file(path))
    throw MissingInputError(std::string(what) + " file not found: " + path);
}

Tensor load_matrix(const std::string& path) {
  require_file(path, "matrix");
  RawSeries m = load_csv(path);
  return Tensor({m.rows, m.cols}, m.values);
}

// Validates after filling num_nodes from the data when unset; receptive-field
// violations are configuration errors at this stage.
void finalize_config(RunConfig& cfg, std::size_t data_nodes) {
  if (cfg.model.num_nodes == 0) cfg.model.num_nodes = data_nodes;
  if (cfg.model.num_nodes != data_nodes)
    throw ConfigError("config num_nodes=" + std::to_string(cfg.model.num_nodes) + " but data has " +
                      std::to_string(data_nodes) + " columns");
  try {
    cfg.validate();
  } catch (const LengthError& e) {
    throw ConfigError(e.what());
  }
}

void attach_side_inputs(MtgnnModel& model, const RunConfig& cfg) {
  GraphLearner* g = model.graph_learner();
  if (!g) return;
  if (!cfg.static_features.empty()) g->set_static_features(load_matrix(cfg.static_features));
  if (cfg.model.graph_mode == GraphMode::predefined) g->set_predefined(load_matrix(cfg.predefined_graph));
}

ParameterList checkpoint_buffers(const MtgnnModel& model, const WindowedDataset& data) {
  ParameterList buffers;
  const auto* g = model.graph_learner();
  if (g && model.config().graph_mode != GraphMode::dynamic)
    buffers.push_back({"graph.adjacency", g->compute_adjacency().values.detach()});
  const std::size_t n = data.num_nodes();
  buffers.push_back({"data.mean", Tensor({n}, data.stats().mean)});
  buffers.push_back({"data.scale", Tensor({n}, data.stats().scale)});
  return buffers;
}

NormStats stats_from(const Checkpoint& ck) {
  const Tensor* mean = ck.find_buffer("data.mean");
  const Tensor* scale = ck.find_buffer("data.scale");
  if (!mean || !scale) throw CheckpointError("checkpoint lacks normalization statistics");
  NormStats st;
  st.mean.assign(mean->data().begin(), mean->data().end());
  st.scale.assign(scale->data().begin(), scale->data().end());
  return st;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw ConfigError("--split must be train, valid or test");
}

int cmd_train(const Options& o, std::ostream& out) {
  RunConfig cfg = resolve_config(o.config, o.overrides, o.seed);
  require_file(o.data, "data");
  RawSeries raw = load_csv(o.data, cfg.data.delimiter, cfg.data.nan_policy);
  finalize_config(cfg, raw.cols);

  std::filesystem::create_directories(o.out_dir);
  const std::filesystem::path dir(o.out_dir);
  const std::filesystem::path ckpt = o.checkpoint.empty() ? dir / "model.ckpt" : std::filesystem::path(o.checkpoint);

  WindowedDataset data(raw, cfg.model.input_len, cfg.model.output_len, cfg.data);
  std::mt19937_64 rng(cfg.train.seed);
  MtgnnModel model(cfg.model, rng);
  attach_side_inputs(model, cfg);

  out << "# effective config\n";
  std::istringstream cfg_text(cfg.to_text());
  for (std::string line; std::getline(cfg_text, line);) out << "#   " << line << '\n';
  out << "# series " << raw.rows << "x" << raw.cols << ", windows train/valid/test = "
      << data.samples(Split::train).size() << "/" << data.samples(Split::valid).size() << "/"
      << data.samples(Split::test).size() << ", parameters " << model.count_parameters() << '\n';

  Trainer trainer(model, data, cfg);
  std::ofstream log(dir / "train_log.csv");
  if (!log) throw MissingInputError("cannot write " + (dir / "train_log.csv").string());
  TrainResult result = trainer.train(&log);
  for (const auto& rec : result.history)
    out << "epoch " << rec.epoch << "  iter " << rec.iter << "  r " << rec.r << "  train_mae "
        << rec.train_mae << "  valid_mae " << rec.valid.mae << "  (" << std::fixed
        << std::setprecision(1) << rec.seconds << "s)" << std::defaultfloat << std::setprecision(6)
        << '\n';
  out << "best epoch " << result.best_epoch << '\n';

  save_checkpoint(ckpt, make_checkpoint(cfg, model, checkpoint_buffers(model, data)));
  out << "checkpoint " << ckpt.string() << '\n';

  std::ofstream metrics(dir / "metrics.csv");
  metrics << "split," << MetricReport::csv_header() << '\n';
  for (auto [name, split] : {std::pair{"valid", Split::valid}, std::pair{"test", Split::test}}) {
    if (data.samples(split).empty()) continue;
    const MetricReport rep = trainer.evaluate(split);
    metrics << name << ',' << rep.csv_line() << '\n';
    if (split == Split::test) out << "test metrics\n" << rep.table();
  }
  return kExitOk;
}

struct Restored {
  Checkpoint ck;
  std::unique_ptr<MtgnnModel> model;
};

Restored restore(const std::string& path) {
  require_file(path, "checkpoint");
  Restored r;
  r.ck = load_checkpoint(path);
  r.model = restore_model(r.ck);
  return r;
}

int cmd_eval(const Options& o, std::ostream& out) {
  Restored r = restore(o.checkpoint);
  require_file(o.data, "data");
  const RunConfig& cfg = r.ck.config;
  RawSeries raw = load_csv(o.data, cfg.data.delimiter, cfg.data.nan_policy);
  if (raw.cols != cfg.model.num_nodes)
    throw ConfigError("data has " + std::to_string(raw.cols) + " columns, checkpoint expects " +
                      std::to_string(cfg.model.num_nodes));
  const NormStats stats = stats_from(r.ck);
  WindowedDataset data(raw, cfg.model.input_len, cfg.model.output_len, cfg.data, &stats);
  Trainer trainer(*r.model, data, cfg);
  const MetricReport rep = trainer.evaluate(parse_split(o.split));
  out << MetricReport::csv_header() << '\n' << rep.csv_line() << '\n' << rep.table();
  return kExitOk;
}

int cmd_forecast(const Options& o, std::ostream& out) {
  Restored r = restore(o.checkpoint);
  require_file(o.data, "data");
  const RunConfig& cfg = r.ck.config;
  RawSeries raw = load_csv(o.data, cfg.data.delimiter, cfg.data.nan_policy);
  if (raw.cols != cfg.model.num_nodes)
    throw ConfigError("data has " + std::to_string(raw.cols) + " columns, checkpoint expects " +
                      std::to_string(cfg.model.num_nodes));
  const NormStats stats = stats_from(r.ck);
  const std::size_t p = cfg.model.input_len, q = cfg.model.output_len, n = raw.cols;
  if (raw.rows < p) throw LengthError("series shorter than the input window");
  const std::size_t start = o.start >= 0 ? static_cast<std::size_t>(o.start) : raw.rows - p;

  DataConfig dc = cfg.data;
  dc.train_frac = 1.0;
  dc.valid_frac = dc.test_frac = 0.0;
  WindowedDataset data(raw, p, q, dc, &stats);
  Tensor x = data.input_window(start);
  Tensor pred = r.model->forward(x);
  std::vector<double> values(pred.data().begin(), pred.data().end());
  for (std::size_t h = 0; h < q; ++h)
    for (std::size_t v = 0; v < n; ++v) values[h * n + v] = stats.denormalize(values[h * n + v], v);

  Tensor truth;
  const auto rows = data.target_rows(start);
  if (rows.back() < raw.rows) {
    std::vector<double> t(q * n);
    for (std::size_t h = 0; h < q; ++h)
      for (std::size_t v = 0; v < n; ++v) t[h * n + v] = raw(rows[h], v);
    truth = Tensor({q, n}, std::move(t));
  }
  std::filesystem::create_directories(o.out_dir);
  const auto path = std::filesystem::path(o.out_dir) / "forecast.csv";
  write_forecast_csv(path, Tensor({q, n}, std::move(values)), truth);
  out << "forecast from row " << start << " written to " << path.string() << '\n';
  return kExitOk;
}

int cmd_export_graph(const Options& o, std::ostream& out) {
  Restored r = restore(o.checkpoint);
  const GraphLearner* g = r.model->graph_learner();
  AdjacencyMatrix adj;
  if (g && r.ck.config.model.graph_mode != GraphMode::dynamic) {
    adj = g->compute_adjacency();
  } else if (const Tensor* stored = r.ck.find_buffer("graph.adjacency")) {
    adj = {*stored, r.ck.config.model.subgraph_k};
  } else {
    throw ConfigError("checkpoint has no global graph (graph convolution disabled or dynamic mode)");
  }
  const std::filesystem::path dir(o.out_dir);
  std::filesystem::create_directories(dir);
  export_adjacency(adj, dir / "adjacency.csv", dir / "edges.csv");
  const std::size_t top = o.top ? o.top : adj.k;
  std::ofstream nb(dir / "neighbors.csv");
  nb << std::setprecision(12) << "node,rank,neighbor,weight\n";
  for (std::size_t i = 0; i < adj.size(); ++i) {
    const auto list = top_neighbors(adj, i, top);
    for (std::size_t j = 0; j < list.size(); ++j)
      nb << i << ',' << j + 1 << ',' << list[j].node << ',' << list[j].weight << '\n';
  }
  out << "wrote " << (dir / "adjacency.csv").string() << ", " << (dir / "edges.csv").string()
      << ", " << (dir / "neighbors.csv").string() << '\n';
  return kExitOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out, std::ostream& err) {
  const auto reports = run_gradcheck(o.op, o.tol, o.instances, o.seed >= 0 ? o.seed : 1);
  out << std::left << std::setw(22) << "op" << std::right << std::setw(10) << "instances"
      << std::setw(16) << "max_rel_err" << "  status\n";
  std::vector<std::string> failed;
  for (const auto& r : reports) {
    out << std::left << std::setw(22) << r.op << std::right << std::setw(10) << r.instances
        << std::setw(16) << std::scientific << std::setprecision(3) << r.max_rel_error
        << std::defaultfloat << "  " << (r.passed ? "ok" : "FAIL") << '\n';
    if (!r.passed) failed.push_back(r.op);
  }
  if (failed.empty()) return kExitOk;
  err << "gradient check failed (tolerance " << o.tol << "):";
  for (const auto& f : failed) err << ' ' << f;
  err << '\n';
  return kExitVerificationFailed;
}

int cmd_synth(const Options& o, std::ostream& out) {
  SynthOptions s = o.synth;
  if (o.seed >= 0) s.seed = static_cast<std::uint64_t>(o.seed);
  const SynthData d = generate_synthetic(s);
  save_synthetic(d, o.out_dir);
  out << "wrote " << d.series.rows << "x" << d.series.cols << " series and " << d.edges.size()
      << " edges to " << o.out_dir << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"MTGNN multivariate time-series forecasting"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, "Random seed");
  };
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", o.config, "Config file (key = value)");
  train->add_option("--data", o.data, "Series CSV, rows = time steps");
  train->add_option("--checkpoint", o.checkpoint, "Checkpoint output path (default out-dir/model.ckpt)");
  train->add_option("--out-dir", o.out_dir, "Directory for log, checkpoint and metrics");
  train->add_option("--override", o.overrides, "key=value config override (repeatable)");
  common(train);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a data split");
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  eval->add_option("--data", o.data, "Series CSV");
  eval->add_option("--split", o.split, "train, valid or test");

  auto* forecast = app.add_subcommand("forecast", "Forecast Q steps from one input window");
  forecast->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  forecast->add_option("--data", o.data, "Series CSV");
  forecast->add_option("--start", o.start, "First row of the input window (default: last window)");
  forecast->add_option("--out-dir", o.out_dir, "Output directory for forecast.csv");

  auto* exportg = app.add_subcommand("export-graph", "Write the learned adjacency matrix");
  exportg->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  exportg->add_option("--out-dir", o.out_dir, "Output directory");
  exportg->add_option("--top", o.top, "Neighbors listed per node (default k)");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  grad->add_option("--op", o.op, "Restrict to one op")->check(CLI::IsMember(gradcheck_op_names()));
  grad->add_option("--tol", o.tol, "Maximum relative error");
  grad->add_option("--instances", o.instances, "Random instances per op");
  common(grad);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset over a random graph");
  synth->add_option("--nodes", o.synth.nodes, "Number of variables");
  synth->add_option("--edges", o.synth.edges, "Number of directed edges");
  synth->add_option("--lag", o.synth.lag, "Parent-to-child lag in steps");
  synth->add_option("--noise", o.synth.noise, "Gaussian noise standard deviation");
  synth->add_option("--length", o.synth.length, "Number of time steps");
  synth->add_option("--out-dir", o.out_dir, "Output directory");
  common(synth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(o, out);
    if (*eval) return cmd_eval(o, out);
    if (*forecast) return cmd_forecast(o, out);
    if (*exportg) return cmd_export_graph(o, out);
    if (*grad) return cmd_gradcheck(o, out, err);
    if (*synth) return cmd_synth(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const MissingInputError& e) {
    err << "missing input: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TrainingError& e) {
    err << "training diverged: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const ParseError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace mtgnn
