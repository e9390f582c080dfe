#include "mtgnn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "mtgnn/errors.hpp"
#include "mtgnn/ops.hpp"

namespace mtgnn {

Tensor forecast_loss(const Tensor& prediction, const Tensor& target, const ParameterList& params,
                     double l2_penalty) {
  if (prediction.numel() == 0 || target.numel() == 0) throw ContractError("loss on an empty batch");
  if (prediction.shape() != target.shape())
    throw DimensionError("loss: prediction " + shape_str(prediction.shape()) + " vs target " +
                         shape_str(target.shape()));
  Tensor loss = mean(abs(sub(prediction, target)));
  if (l2_penalty == 0.0 || params.empty()) return loss;
  Tensor reg = sum_squares(params[0].tensor);
  for (std::size_t i = 1; i < params.size(); ++i) reg = add(reg, sum_squares(params[i].tensor));
  return add(loss, mul_scalar(reg, 0.5 * l2_penalty));
}

std::size_t curriculum_step(std::size_t iter, std::size_t r, std::size_t step,
                            std::size_t horizon) {
  if (step == 0) throw ConfigError("curriculum step size must be positive");
  if (iter % step == 0 && r <= horizon) ++r;
  return std::min(r, horizon);
}

std::vector<std::vector<std::size_t>> split_nodes(std::size_t n, std::size_t groups,
                                                  std::mt19937_64& rng) {
  if (groups == 0) throw ConfigError("split size must be at least 1");
  if (groups > n)
    throw ConfigError("split size " + std::to_string(groups) + " exceeds node count " +
                      std::to_string(n));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> out(groups);
  const std::size_t base = n / groups, extra = n % groups;
  std::size_t pos = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t size = base + (g < extra ? 1 : 0);
    out[g].assign(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                  perm.begin() + static_cast<std::ptrdiff_t>(pos + size));
    std::sort(out[g].begin(), out[g].end());
    pos += size;
  }
  return out;
}

double gradient_norm(const ParameterList& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter '" + p.name + "'");
      sq += g * g;
    }
  }
  return std::sqrt(sq);
}

double clip_gradients(const ParameterList& params, double max_norm) {
  const double norm = gradient_norm(params);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto p : params)
      if (p.tensor.has_grad())
        for (double& g : p.tensor.mutable_grad()) g *= scale;
  }
  return norm;
}

Adam::Adam(ParameterList params, double learning_rate, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor t = params_[i].tensor;
    auto w = t.mutable_data();
    auto g = t.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

std::size_t data_threads() {
  const char* env = std::getenv("MTGNN_THREADS");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 0) throw ConfigError("MTGNN_THREADS must be a non-negative integer");
  return static_cast<std::size_t>(std::min(v, 64L));
}

namespace {

using Batch = std::pair<Tensor, Tensor>;

// Assembles batches on worker threads into a bounded window; the consumer
// receives them in submission order.
class BatchPrefetcher {
 public:
  BatchPrefetcher(const WindowedDataset& data, const std::vector<std::vector<std::size_t>>& batches,
                  std::size_t workers)
      : data_(data), batches_(batches), capacity_(2 * workers + 1) {
    for (std::size_t i = 0; i < workers; ++i) threads_.emplace_back([this] { work(); });
  }

  ~BatchPrefetcher() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  Batch get(std::size_t i) {
    if (threads_.empty()) return data_.batch(batches_[i]);
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return ready_.count(i) || error_; });
    if (error_) std::rethrow_exception(error_);
    Batch b = std::move(ready_[i]);
    ready_.erase(i);
    consumed_ = i + 1;
    cv_.notify_all();
    return b;
  }

 private:
  void work() {
    while (true) {
      std::size_t i;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || (next_ < batches_.size() && next_ < consumed_ + capacity_); });
        if (stop_) return;
        i = next_++;
      }
      try {
        Batch b = data_.batch(batches_[i]);
        std::lock_guard lock(mu_);
        ready_.emplace(i, std::move(b));
      } catch (...) {
        std::lock_guard lock(mu_);
        error_ = std::current_exception();
      }
      cv_.notify_all();
    }
  }

  const WindowedDataset& data_;
  const std::vector<std::vector<std::size_t>>& batches_;
  std::size_t capacity_;
  std::size_t next_ = 0, consumed_ = 0;
  std::map<std::size_t, Batch> ready_;
  std::exception_ptr error_;
  bool stop_ = false;
  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::thread> threads_;
};

std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& items, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < items.size(); i += size)
    out.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(i),
                     items.begin() + static_cast<std::ptrdiff_t>(std::min(items.size(), i + size)));
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(8) << v;
  return os.str();
}

}  // namespace

Trainer::Trainer(MtgnnModel& model, const WindowedDataset& data, const RunConfig& config)
    : model_(model),
      data_(data),
      config_(config),
      params_(model.trainable_parameters()),
      adam_(params_, config.train.learning_rate),
      rng_(config.train.seed),
      dropout_rng_(config.train.seed ^ 0x9E3779B97F4A7C15ull) {
  config_.train.validate();
  const auto& mc = model_.config();
  if (data_.num_nodes() != mc.num_nodes || data_.in_dim() != mc.in_dim ||
      data_.input_len() != mc.input_len || data_.output_len() != mc.output_len)
    throw ConfigError("dataset windows (N=" + std::to_string(data_.num_nodes()) +
                      ", D=" + std::to_string(data_.in_dim()) + ", P=" +
                      std::to_string(data_.input_len()) + ", Q=" + std::to_string(data_.output_len()) +
                      ") do not match the model configuration");
  if (config_.train.split_size > mc.num_nodes)
    throw ConfigError("split_size exceeds the number of nodes");
  r_ = mc.use_curriculum ? 1 : mc.output_len;
}

Tensor Trainer::denormalize(const Tensor& pred, std::span<const std::size_t> nodes) const {
  const std::size_t b = pred.dim(0), q = pred.dim(1), n = pred.dim(2);
  std::vector<double> scale(b * q * n), shift(b * q * n);
  const auto& st = data_.stats();
  for (std::size_t i = 0; i < b * q; ++i)
    for (std::size_t v = 0; v < n; ++v) {
      scale[i * n + v] = st.scale[nodes[v]];
      shift[i * n + v] = st.mean[nodes[v]];
    }
  return add(hadamard(pred, Tensor(pred.shape(), std::move(scale))), Tensor(pred.shape(), std::move(shift)));
}

IterationStats Trainer::train_iteration(const Tensor& x, const Tensor& y) {
  const auto& mc = model_.config();
  const std::size_t q = mc.output_len;
  r_ = mc.use_curriculum ? curriculum_step(iter_, r_, config_.train.curriculum_step, q) : q;

  IterationStats stats;
  stats.iter = iter_;
  stats.r = r_;
  const auto groups = split_nodes(mc.num_nodes, config_.train.split_size, rng_);
  for (const auto& group : groups) {
    Tape tape;
    TapeScope scope(tape);
    for (auto& p : params_) p.tensor.zero_grad();

    Tensor xg = index_select(x, 2, group);
    Tensor yg = index_select(y, 2, group);
    Tensor adjacency;
    if (model_.graph_learner()) {
      const auto before = mac_count();
      adjacency = model_.adjacency_for(xg, group);
      stats.graph_macs.push_back(mac_count() - before);
    }
    Tensor pred = denormalize(model_.forward(xg, adjacency, group, &dropout_rng_), group);
    if (r_ < q) {
      pred = slice(pred, 1, 0, r_);
      yg = slice(yg, 1, 0, r_);
    }
    Tensor data_term = mean(abs(sub(pred, yg)));
    Tensor loss = forecast_loss(pred, yg, params_, config_.train.l2_penalty);
    if (!std::isfinite(loss.item()))
      throw TrainingError("loss became non-finite at iteration " + std::to_string(iter_));
    tape.backward(loss);
    clip_gradients(params_, config_.train.grad_clip);
    stats.max_clipped_norm = std::max(stats.max_clipped_norm, gradient_norm(params_));
    adam_.step();
    stats.mae += data_term.item() / static_cast<double>(groups.size());
  }
  ++iter_;
  return stats;
}

Tensor Trainer::predict(std::span<const std::size_t> starts) const {
  return predict_batch(data_.batch(starts).first);
}

Tensor Trainer::predict_batch(const Tensor& x) const {
  std::vector<std::size_t> all(data_.num_nodes());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return denormalize(model_.forward(x, all, nullptr), all);
}

MetricReport Trainer::evaluate(Split split) const {
  const auto& starts = data_.samples(split);
  if (starts.empty()) throw LengthError("cannot evaluate an empty split");
  std::vector<double> pred, truth;
  for (const auto& b : chunk(starts, std::max<std::size_t>(config_.train.batch_size, 32))) {
    auto [x, y] = data_.batch(b);
    Tensor p = predict_batch(x);
    pred.insert(pred.end(), p.data().begin(), p.data().end());
    truth.insert(truth.end(), y.data().begin(), y.data().end());
  }
  return compute_metrics(pred, truth, data_.num_nodes());
}

std::vector<std::vector<double>> Trainer::snapshot() const {
  std::vector<std::vector<double>> out;
  for (const auto& p : params_) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

void Trainer::restore(const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor t = params_[i].tensor;
    std::copy(values[i].begin(), values[i].end(), t.mutable_data().begin());
  }
}

TrainResult Trainer::train(std::ostream* log) {
  const auto& tc = config_.train;
  const auto& train_samples = data_.samples(Split::train);
  if (train_samples.empty()) throw LengthError("training split has no complete windows");
  const bool has_valid = !data_.samples(Split::valid).empty();

  if (log) {
    std::istringstream cfg(config_.to_text());
    for (std::string line; std::getline(cfg, line);) *log << "# " << line << '\n';
    *log << "# parameter updates per iteration: " << tc.split_size << '\n';
    *log << "epoch,iter,r,train_mae,valid_mae,valid_rmse,valid_mape,seconds\n";
  }

  TrainResult result;
  std::vector<std::vector<double>> best;
  const std::size_t workers = data_threads();
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = train_samples;
    std::shuffle(order.begin(), order.end(), rng_);
    const auto batches = chunk(order, tc.batch_size);

    double mae_sum = 0.0;
    {
      BatchPrefetcher prefetch(data_, batches, workers);
      for (std::size_t i = 0; i < batches.size(); ++i) {
        auto [x, y] = prefetch.get(i);
        mae_sum += train_iteration(x, y).mae;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.iter = iter_ - 1;
    rec.r = r_;
    rec.train_mae = mae_sum / static_cast<double>(batches.size());
    if (has_valid) {
      rec.valid = evaluate(Split::valid);
    } else {
      rec.valid.mae = rec.valid.rmse = rec.valid.rse = std::numeric_limits<double>::quiet_NaN();
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double score = has_valid ? rec.valid.mae : rec.train_mae;
    if (score < result.best_valid_mae || best.empty()) {
      result.best_valid_mae = score;
      result.best_epoch = epoch;
      best = snapshot();
    }
    result.history.push_back(rec);
    if (log) {
      *log << rec.epoch << ',' << rec.iter << ',' << rec.r << ',' << fmt(rec.train_mae) << ','
           << (has_valid ? fmt(rec.valid.mae) : "NA") << ','
           << (has_valid ? fmt(rec.valid.rmse) : "NA") << ','
           << (has_valid && rec.valid.mape ? fmt(*rec.valid.mape) : "NA") << ','
           << std::fixed << std::setprecision(3) << rec.seconds << std::defaultfloat << '\n';
      log->flush();
    }
  }
  if (!best.empty()) restore(best);
  return result;
}

}  // namespace mtgnn
