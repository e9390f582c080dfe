#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mtgnn/graph_learning.hpp"

namespace mtgnn {

/// Architecture hyperparameters.
struct MtgnnConfig {
  std::size_t num_nodes = 0;
  std::size_t in_dim = 1;
  std::size_t input_len = 12;   // P
  std::size_t output_len = 12;  // Q
  std::size_t layers = 3;       // m TC/GC pairs
  std::size_t start_channels = 32;  // residual width
  std::size_t conv_channels = 32;
  std::size_t skip_channels = 64;
  std::size_t end_channels = 128;
  std::size_t dilation_rate = 1;  // q
  std::size_t gcn_depth = 2;      // K
  double retain_ratio = 0.05;     // β
  GraphMode graph_mode = GraphMode::uni_directed;
  std::size_t subgraph_k = 20;
  double alpha = 3.0;
  std::size_t embed_dim = 40;
  double dropout = 0.3;
  bool use_gc = true;
  bool use_mixhop_selection = true;
  bool use_inception = true;
  bool use_curriculum = true;
  // Left-pads inputs with zeros up to the receptive field. Off by default:
  // inputs shorter than the receptive field are rejected.
  bool pad_input = false;
  double layer_norm_eps = 1e-5;

  std::vector<std::size_t> filter_widths() const;
  std::size_t receptive_field() const;
  /// Sequence length the stack actually consumes (P, or R when padding).
  std::size_t effective_input_len() const;
  void validate() const;
};

/// Optimizer, curriculum and node-split settings.
struct TrainConfig {
  double learning_rate = 0.001;
  double l2_penalty = 0.0001;
  double grad_clip = 5.0;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  std::size_t curriculum_step = 100;  // s: iterations between horizon increments
  std::size_t split_size = 1;         // m: node groups per iteration
  std::uint64_t seed = 1;

  void validate() const;
};

enum class HorizonMode { single, multi };
enum class Normalization { zscore, max };
enum class NanPolicy { reject, forward_fill };

struct DataConfig {
  HorizonMode horizon_mode = HorizonMode::multi;
  std::size_t horizon = 1;  // single-step offset after the window end
  double train_frac = 0.7;
  double valid_frac = 0.2;
  double test_frac = 0.1;
  bool time_of_day = false;
  std::size_t steps_per_day = 288;
  Normalization normalization = Normalization::zscore;
  NanPolicy nan_policy = NanPolicy::reject;
  char delimiter = 0;  // 0 = auto-detect comma / whitespace

  void validate() const;
};

/// Everything a run needs, readable from flat `key = value` text.
struct RunConfig {
  MtgnnConfig model;
  TrainConfig train;
  DataConfig data;
  std::string predefined_graph;  // CSV path, predefined graph mode
  std::string static_features;   // CSV path, frozen node features

  /// Applies one `key=value` assignment. Unknown keys raise ConfigError.
  void set(std::string_view key, std::string_view value);
  void apply_text(std::string_view text);
  std::string to_text() const;
  void validate() const;

  static RunConfig from_file(const std::filesystem::path& path);
  static RunConfig from_text(std::string_view text);
  static const std::vector<std::string>& keys();

  /// Single-step benchmark settings (5 blocks, rate-2 dilation, P=168, Q=1).
  static RunConfig single_step_preset();
  /// Multi-step benchmark settings (3 blocks, rate 1, P=Q=12, time of day).
  static RunConfig multi_step_preset();
};

}  // namespace mtgnn
