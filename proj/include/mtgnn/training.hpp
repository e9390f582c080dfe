#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "mtgnn/config.hpp"
#include "mtgnn/data.hpp"
#include "mtgnn/metrics.hpp"
#include "mtgnn/model.hpp"
#include "mtgnn/parameters.hpp"
#include "mtgnn/tensor.hpp"

namespace mtgnn {

/// mean|pred − target| + (λ/2)·Σ‖θ‖² over `params`.
Tensor forecast_loss(const Tensor& prediction, const Tensor& target, const ParameterList& params,
                     double l2_penalty);

/// Curriculum update at the start of iteration `iter` (1-based): r grows by
/// one when iter is a multiple of `step`, never beyond `horizon`.
std::size_t curriculum_step(std::size_t iter, std::size_t r, std::size_t step, std::size_t horizon);

/// Random partition of {0..n−1} into `groups` sets whose sizes differ by at
/// most one. Each group is sorted ascending.
std::vector<std::vector<std::size_t>> split_nodes(std::size_t n, std::size_t groups,
                                                  std::mt19937_64& rng);

/// Global L2 norm of the gradients of `params` (missing buffers count as zero).
/// Throws TrainingError naming the first parameter with a non-finite gradient.
double gradient_norm(const ParameterList& params);
/// Rescales gradients so the global norm is at most `max_norm`; returns the
/// norm before clipping.
double clip_gradients(const ParameterList& params, double max_norm);

/// Adam with bias correction.
class Adam {
 public:
  Adam(ParameterList params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  /// Applies one update from the current gradient buffers.
  void step();

  std::size_t steps() const noexcept { return t_; }
  const std::vector<std::vector<double>>& first_moments() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moments() const noexcept { return v_; }
  const ParameterList& params() const noexcept { return params_; }

 private:
  ParameterList params_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct IterationStats {
  std::size_t iter = 0;  // counter value the iteration ran with
  std::size_t r = 0;
  double mae = 0.0;      // mean over groups of the data term
  double max_clipped_norm = 0.0;
  std::vector<std::uint64_t> graph_macs;  // per group, graph-learning work
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t iter = 0;
  std::size_t r = 0;
  double train_mae = 0.0;
  MetricReport valid;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_valid_mae = std::numeric_limits<double>::infinity();
};

/// Training driver. Owns the optimizer state and the curriculum counters;
/// the model is mutated in place.
class Trainer {
 public:
  Trainer(MtgnnModel& model, const WindowedDataset& data, const RunConfig& config);

  /// One iteration on a pre-assembled batch over all nodes: curriculum update,
  /// node split, and one clipped Adam step per group.
  IterationStats train_iteration(const Tensor& x, const Tensor& y);

  /// Runs every epoch, validating after each and keeping the best parameters,
  /// which are loaded back into the model at the end. `log` receives the CSV
  /// training log.
  TrainResult train(std::ostream* log = nullptr);

  /// De-normalized predictions [b,Q,N] for window starts (eval mode).
  Tensor predict(std::span<const std::size_t> starts) const;
  /// Full-horizon metrics on a split, in raw units.
  MetricReport evaluate(Split split) const;

  std::size_t iteration() const noexcept { return iter_; }
  std::size_t horizon_r() const noexcept { return r_; }
  Adam& optimizer() noexcept { return adam_; }

 private:
  Tensor predict_batch(const Tensor& x) const;
  Tensor denormalize(const Tensor& pred, std::span<const std::size_t> nodes) const;
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

  MtgnnModel& model_;
  const WindowedDataset& data_;
  RunConfig config_;
  ParameterList params_;
  Adam adam_;
  std::mt19937_64 rng_;          // batch order and node splits
  std::mt19937_64 dropout_rng_;
  std::size_t iter_ = 1;
  std::size_t r_ = 1;
};

/// Worker threads for batch assembly, from MTGNN_THREADS (default 0 = build
/// batches on the training thread).
std::size_t data_threads();

}  // namespace mtgnn
