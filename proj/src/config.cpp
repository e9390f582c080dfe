#include "mtgnn/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mtgnn/errors.hpp"
#include "mtgnn/temporal_conv.hpp"

namespace mtgnn {

std::vector<std::size_t> MtgnnConfig::filter_widths() const {
  if (use_inception) return {kInceptionWidths.begin(), kInceptionWidths.end()};
  return {kInceptionWidths.back()};
}

std::size_t MtgnnConfig::receptive_field() const {
  return mtgnn::receptive_field(layers, kInceptionWidths.back(),
                                static_cast<long long>(dilation_rate),
                                DilationGrowth::exponential);
}

std::size_t MtgnnConfig::effective_input_len() const {
  const std::size_t r = receptive_field();
  return (pad_input && input_len < r) ? r : input_len;
}

void MtgnnConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(num_nodes >= 1, "num_nodes must be at least 1");
  need(in_dim >= 1 && input_len >= 1 && output_len >= 1, "in_dim, input_len, output_len must be >= 1");
  need(layers >= 1, "layers must be at least 1");
  need(start_channels >= 1 && conv_channels >= 1 && skip_channels >= 1 && end_channels >= 1,
       "channel counts must be positive");
  need(dilation_rate >= 1, "dilation_rate must be at least 1");
  need(gcn_depth >= 1, "gcn_depth must be at least 1");
  need(retain_ratio >= 0.0 && retain_ratio <= 1.0, "retain_ratio must lie in [0,1]");
  need(subgraph_k >= 1 && subgraph_k <= num_nodes,
       "subgraph_k=" + std::to_string(subgraph_k) + " must lie in [1, num_nodes=" +
           std::to_string(num_nodes) + "]");
  need(alpha > 0.0, "alpha must be positive");
  need(embed_dim >= 1, "embed_dim must be at least 1");
  need(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0,1)");
  need(layer_norm_eps > 0.0, "layer_norm_eps must be positive");
  need(!use_inception || conv_channels % kInceptionWidths.size() == 0,
       "conv_channels must be divisible by 4 with inception enabled");
  need(use_mixhop_selection || start_channels == conv_channels,
       "use_mixhop_selection=false requires start_channels == conv_channels");
  const std::size_t r = receptive_field();
  if (!pad_input && input_len < r)
    throw LengthError("input_len " + std::to_string(input_len) + " is shorter than the receptive field " +
                      std::to_string(r) + " (set pad_input=true to zero-pad)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(l2_penalty >= 0.0)) throw ConfigError("l2_penalty must be non-negative");
  if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (curriculum_step < 1) throw ConfigError("curriculum_step must be at least 1");
  if (split_size < 1) throw ConfigError("split_size must be at least 1");
}

void DataConfig::validate() const {
  if (horizon < 1) throw ConfigError("horizon must be at least 1");
  for (double f : {train_frac, valid_frac, test_frac})
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0,1]");
  if (!(train_frac > 0.0)) throw ConfigError("train_frac must be positive");
  if (std::fabs(train_frac + valid_frac + test_frac - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
  if (steps_per_day < 1) throw ConfigError("steps_per_day must be at least 1");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t parse_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("'" + std::string(key) + "' expects a non-negative integer, got '" +
                      std::string(v) + "'");
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("'" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + std::string(key) + "' expects true/false, got '" + std::string(v) + "'");
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(std::size_t v) { return std::to_string(v); }

struct Field {
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field size_field(T RunConfig::*section, std::size_t T::*member) {
  return {[=](RunConfig& c, std::string_view v) { (c.*section).*member = parse_size("", v); },
          [=](const RunConfig& c) { return fmt((c.*section).*member); }};
}
template <class T>
Field double_field(T RunConfig::*section, double T::*member) {
  return {[=](RunConfig& c, std::string_view v) { (c.*section).*member = parse_double("", v); },
          [=](const RunConfig& c) { return fmt((c.*section).*member); }};
}
template <class T>
Field bool_field(T RunConfig::*section, bool T::*member) {
  return {[=](RunConfig& c, std::string_view v) { (c.*section).*member = parse_bool("", v); },
          [=](const RunConfig& c) { return fmt((c.*section).*member); }};
}

// Ordered so that to_text() output is stable.
const std::vector<std::pair<std::string, Field>>& field_table() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    using M = MtgnnConfig;
    using T = TrainConfig;
    using D = DataConfig;
    auto m = &RunConfig::model;
    auto t = &RunConfig::train;
    auto d = &RunConfig::data;
    std::vector<std::pair<std::string, Field>> f;
    f.emplace_back("num_nodes", size_field(m, &M::num_nodes));
    f.emplace_back("in_dim", size_field(m, &M::in_dim));
    f.emplace_back("input_len", size_field(m, &M::input_len));
    f.emplace_back("output_len", size_field(m, &M::output_len));
    f.emplace_back("layers", size_field(m, &M::layers));
    f.emplace_back("start_channels", size_field(m, &M::start_channels));
    f.emplace_back("conv_channels", size_field(m, &M::conv_channels));
    f.emplace_back("skip_channels", size_field(m, &M::skip_channels));
    f.emplace_back("end_channels", size_field(m, &M::end_channels));
    f.emplace_back("dilation_rate", size_field(m, &M::dilation_rate));
    f.emplace_back("gcn_depth", size_field(m, &M::gcn_depth));
    f.emplace_back("retain_ratio", double_field(m, &M::retain_ratio));
    f.emplace_back("graph_mode",
                   Field{[](RunConfig& c, std::string_view v) { c.model.graph_mode = parse_graph_mode(v); },
                         [](const RunConfig& c) { return std::string(to_string(c.model.graph_mode)); }});
    f.emplace_back("subgraph_k", size_field(m, &M::subgraph_k));
    f.emplace_back("alpha", double_field(m, &M::alpha));
    f.emplace_back("embed_dim", size_field(m, &M::embed_dim));
    f.emplace_back("dropout", double_field(m, &M::dropout));
    f.emplace_back("use_gc", bool_field(m, &M::use_gc));
    f.emplace_back("use_mixhop_selection", bool_field(m, &M::use_mixhop_selection));
    f.emplace_back("use_inception", bool_field(m, &M::use_inception));
    f.emplace_back("use_curriculum", bool_field(m, &M::use_curriculum));
    f.emplace_back("pad_input", bool_field(m, &M::pad_input));
    f.emplace_back("layer_norm_eps", double_field(m, &M::layer_norm_eps));

    f.emplace_back("learning_rate", double_field(t, &T::learning_rate));
    f.emplace_back("l2_penalty", double_field(t, &T::l2_penalty));
    f.emplace_back("grad_clip", double_field(t, &T::grad_clip));
    f.emplace_back("batch_size", size_field(t, &T::batch_size));
    f.emplace_back("epochs", size_field(t, &T::epochs));
    f.emplace_back("curriculum_step", size_field(t, &T::curriculum_step));
    f.emplace_back("split_size", size_field(t, &T::split_size));
    f.emplace_back("seed", Field{[](RunConfig& c, std::string_view v) { c.train.seed = parse_size("seed", v); },
                                 [](const RunConfig& c) { return std::to_string(c.train.seed); }});

    f.emplace_back("horizon_mode",
                   Field{[](RunConfig& c, std::string_view v) {
                           if (v == "single")
                             c.data.horizon_mode = HorizonMode::single;
                           else if (v == "multi")
                             c.data.horizon_mode = HorizonMode::multi;
                           else
                             throw ConfigError("horizon_mode must be single or multi");
                         },
                         [](const RunConfig& c) {
                           return std::string(c.data.horizon_mode == HorizonMode::single ? "single" : "multi");
                         }});
    f.emplace_back("horizon", size_field(d, &D::horizon));
    f.emplace_back("train_frac", double_field(d, &D::train_frac));
    f.emplace_back("valid_frac", double_field(d, &D::valid_frac));
    f.emplace_back("test_frac", double_field(d, &D::test_frac));
    f.emplace_back("time_of_day", bool_field(d, &D::time_of_day));
    f.emplace_back("steps_per_day", size_field(d, &D::steps_per_day));
    f.emplace_back("normalization",
                   Field{[](RunConfig& c, std::string_view v) {
                           if (v == "zscore")
                             c.data.normalization = Normalization::zscore;
                           else if (v == "max")
                             c.data.normalization = Normalization::max;
                           else
                             throw ConfigError("normalization must be zscore or max");
                         },
                         [](const RunConfig& c) {
                           return std::string(c.data.normalization == Normalization::zscore ? "zscore" : "max");
                         }});
    f.emplace_back("nan_policy",
                   Field{[](RunConfig& c, std::string_view v) {
                           if (v == "reject")
                             c.data.nan_policy = NanPolicy::reject;
                           else if (v == "ffill")
                             c.data.nan_policy = NanPolicy::forward_fill;
                           else
                             throw ConfigError("nan_policy must be reject or ffill");
                         },
                         [](const RunConfig& c) {
                           return std::string(c.data.nan_policy == NanPolicy::reject ? "reject" : "ffill");
                         }});
    f.emplace_back("delimiter",
                   Field{[](RunConfig& c, std::string_view v) {
                           if (v == "auto" || v.empty())
                             c.data.delimiter = 0;
                           else if (v == "comma" || v == ",")
                             c.data.delimiter = ',';
                           else if (v == "whitespace" || v == "space")
                             c.data.delimiter = ' ';
                           else if (v == "tab")
                             c.data.delimiter = '\t';
                           else if (v == "semicolon" || v == ";")
                             c.data.delimiter = ';';
                           else
                             throw ConfigError("delimiter must be auto, comma, whitespace, tab or semicolon");
                         },
                         [](const RunConfig& c) -> std::string {
                           switch (c.data.delimiter) {
                             case ',': return "comma";
                             case ' ': return "whitespace";
                             case '\t': return "tab";
                             case ';': return "semicolon";
                             default: return "auto";
                           }
                         }});
    f.emplace_back("predefined_graph",
                   Field{[](RunConfig& c, std::string_view v) { c.predefined_graph = std::string(v); },
                         [](const RunConfig& c) { return c.predefined_graph; }});
    f.emplace_back("static_features",
                   Field{[](RunConfig& c, std::string_view v) { c.static_features = std::string(v); },
                         [](const RunConfig& c) { return c.static_features; }});
    return f;
  }();
  return table;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  const std::string k = trim(key);
  const std::string v = trim(value);
  for (const auto& [name, field] : field_table()) {
    if (name != k) continue;
    try {
      field.set(*this, v);
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + k + "': " + e.what());
    }
    return;
  }
  throw ConfigError("unknown config key '" + k + "'");
}

void RunConfig::apply_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    set(std::string_view(line).substr(0, eq), std::string_view(line).substr(eq + 1));
  }
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [name, field] : field_table()) out += name + "=" + field.get(*this) + "\n";
  return out;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  data.validate();
  if (data.horizon_mode == HorizonMode::single && model.output_len != 1)
    throw ConfigError("single-step horizon mode requires output_len = 1");
  if (model.in_dim != (data.time_of_day ? 2u : 1u))
    throw ConfigError("in_dim must be " + std::string(data.time_of_day ? "2" : "1") +
                      " when time_of_day=" + (data.time_of_day ? "true" : "false"));
  if (model.graph_mode == GraphMode::predefined && predefined_graph.empty())
    throw MissingInputError("graph_mode=predefined requires predefined_graph=<csv path>");
}

RunConfig RunConfig::from_text(std::string_view text) {
  RunConfig c;
  c.apply_text(text);
  return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, field] : field_table()) out.push_back(name);
    return out;
  }();
  return k;
}

RunConfig RunConfig::single_step_preset() {
  RunConfig c;
  auto& m = c.model;
  m.in_dim = 1;
  m.input_len = 168;
  m.output_len = 1;
  m.layers = 5;
  m.dilation_rate = 2;
  m.start_channels = 16;
  m.conv_channels = 16;
  m.skip_channels = 32;
  m.end_channels = 64;
  m.subgraph_k = 20;
  m.pad_input = true;  // receptive field 187 exceeds the 168-step window
  c.train.epochs = 30;
  c.train.batch_size = 4;
  c.data.horizon_mode = HorizonMode::single;
  c.data.horizon = 3;
  c.data.train_frac = 0.6;
  c.data.valid_frac = 0.2;
  c.data.test_frac = 0.2;
  return c;
}

RunConfig RunConfig::multi_step_preset() {
  RunConfig c;
  auto& m = c.model;
  m.in_dim = 2;
  m.input_len = 12;
  m.output_len = 12;
  m.layers = 3;
  m.dilation_rate = 1;
  m.pad_input = true;  // receptive field 19 exceeds the 12-step window
  m.start_channels = 32;
  m.conv_channels = 32;
  m.skip_channels = 64;
  m.end_channels = 128;
  m.subgraph_k = 20;
  c.train.epochs = 100;
  c.train.batch_size = 64;
  c.data.horizon_mode = HorizonMode::multi;
  c.data.time_of_day = true;
  c.data.train_frac = 0.7;
  c.data.valid_frac = 0.2;
  c.data.test_frac = 0.1;
  return c;
}

}  // namespace mtgnn
