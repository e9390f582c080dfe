#include "mtgnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>

#include "mtgnn/errors.hpp"
#include "mtgnn/graph_conv.hpp"
#include "mtgnn/graph_learning.hpp"
#include "mtgnn/model.hpp"
#include "mtgnn/ops.hpp"
#include "mtgnn/temporal_conv.hpp"

namespace mtgnn {

double check_gradients(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                       std::mt19937_64& rng, double h, std::size_t max_coords) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Shape out_shape = f().shape();
  std::vector<double> r(shape_numel(out_shape));
  for (auto& v : r) v = gauss(rng);
  const Tensor weights(out_shape, r);

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    for (auto in : inputs) {
      in.mutable_grad();
      in.zero_grad();
    }
    Tensor loss = sum(hadamard(f(), weights));
    tape.backward(loss);
    for (const auto& in : inputs) analytic.emplace_back(in.grad().begin(), in.grad().end());
  }

  auto eval = [&] {
    const Tensor y = f();
    auto out = y.data();
    return std::inner_product(out.begin(), out.end(), r.begin(), 0.0);
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor in = inputs[i];
    std::vector<std::size_t> coords(in.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    for (auto c : coords) {
      auto data = in.mutable_data();
      const double saved = data[c];
      data[c] = saved + h;
      const double up = eval();
      data[c] = saved - h;
      const double down = eval();
      data[c] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i][c];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), kGradcheckFloor});
      worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
  }
  return worst;
}

namespace {

struct Instance {
  Instance(std::vector<Tensor> in, std::function<Tensor()> fn, std::size_t coords = 0,
           std::shared_ptr<void> keep = nullptr)
      : inputs(std::move(in)), f(std::move(fn)), max_coords(coords), owner(std::move(keep)) {}

  std::vector<Tensor> inputs;
  std::function<Tensor()> f;
  std::size_t max_coords;
  std::shared_ptr<void> owner;  // keeps modules alive for `f`
};

using Factory = std::function<Instance(std::mt19937_64&)>;

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor leaf(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.mutable_data()) v = d(rng);
  t.set_requires_grad(true);
  return t;
}

// Entries with |x| in [0.2, 1] so finite differences never straddle a kink at 0.
Tensor kink_free(Shape s, std::mt19937_64& rng) {
  Tensor t = leaf(std::move(s), rng, 0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.mutable_data())
    if (sign(rng)) v = -v;
  return t;
}

// Rows of well-separated values, so the top-k index set is locally constant.
Tensor separated_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Tensor t({rows, cols});
  auto d = t.mutable_data();
  std::uniform_real_distribution<double> jitter(-0.02, 0.02);
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<std::size_t> perm(cols);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t j = 0; j < cols; ++j) d[i * cols + j] = 0.1 * static_cast<double>(perm[j]) + jitter(rng);
  }
  t.set_requires_grad(true);
  return t;
}

Shape random_shape(std::mt19937_64& rng, std::size_t rank) {
  Shape s(rank);
  for (auto& e : s) e = pick(rng, 1, 4);
  return s;
}

template <class... Ts>
std::vector<Tensor> list(Ts... ts) {
  return {ts...};
}

std::vector<Tensor> tensors_of(const ParameterList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params)
    if (p.tensor.requires_grad()) out.push_back(p.tensor);
  return out;
}

const std::vector<std::pair<std::string, Factory>>& factories() {
  static const std::vector<std::pair<std::string, Factory>> table = {
      {"matmul",
       [](std::mt19937_64& rng) {
         const std::size_t b = pick(rng, 1, 3), m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
         Tensor a = leaf({b, m, k}, rng);
         Tensor c = pick(rng, 0, 1) ? leaf({k, n}, rng) : leaf({b, k, n}, rng);
         return Instance{list(a, c), [=] { return matmul(a, c); }};
       }},
      {"transpose",
       [](std::mt19937_64& rng) {
         Tensor a = leaf(random_shape(rng, pick(rng, 2, 4)), rng);
         return Instance{list(a), [=] { return transpose(a); }};
       }},
      {"conv1d_dilated",
       [](std::mt19937_64& rng) {
         const std::size_t ci = pick(rng, 1, 3), co = pick(rng, 1, 3), k = pick(rng, 1, 4),
                           d = pick(rng, 1, 2), t = d * (k - 1) + pick(rng, 1, 4);
         Tensor x = leaf({pick(rng, 1, 2), ci, pick(rng, 1, 3), t}, rng);
         Tensor w = leaf({co, ci, 1, k}, rng);
         Tensor b = leaf({co}, rng);
         return Instance{list(x, w, b), [=] { return conv1d_dilated(x, w, b, d); }};
       }},
      {"node_propagate",
       [](std::mt19937_64& rng) {
         const std::size_t b = pick(rng, 1, 2), n = pick(rng, 2, 5);
         Tensor a = pick(rng, 0, 1) ? leaf({n, n}, rng) : leaf({b, n, n}, rng);
         Tensor x = leaf({b, pick(rng, 1, 3), n, pick(rng, 1, 3)}, rng);
         return Instance{list(a, x), [=] { return node_propagate(a, x); }};
       }},
      {"tanh",
       [](std::mt19937_64& rng) {
         Tensor a = leaf(random_shape(rng, 3), rng, -2, 2);
         return Instance{list(a), [=] { return tanh(a); }};
       }},
      {"sigmoid",
       [](std::mt19937_64& rng) {
         Tensor a = leaf(random_shape(rng, 3), rng, -3, 3);
         return Instance{list(a), [=] { return sigmoid(a); }};
       }},
      {"relu",
       [](std::mt19937_64& rng) {
         Tensor a = kink_free(random_shape(rng, 3), rng);
         return Instance{list(a), [=] { return relu(a); }};
       }},
      {"abs",
       [](std::mt19937_64& rng) {
         Tensor a = kink_free(random_shape(rng, 3), rng);
         return Instance{list(a), [=] { return abs(a); }};
       }},
      {"add",
       [](std::mt19937_64& rng) {
         const Shape s = random_shape(rng, 3);
         Tensor a = leaf(s, rng), b = leaf(s, rng);
         return Instance{list(a, b), [=] { return add(a, b); }};
       }},
      {"sub",
       [](std::mt19937_64& rng) {
         const Shape s = random_shape(rng, 3);
         Tensor a = leaf(s, rng), b = leaf(s, rng);
         return Instance{list(a, b), [=] { return sub(a, b); }};
       }},
      {"hadamard",
       [](std::mt19937_64& rng) {
         const Shape s = random_shape(rng, 3);
         Tensor a = leaf(s, rng), b = leaf(s, rng);
         return Instance{list(a, b), [=] { return hadamard(a, b); }};
       }},
      {"mul_scalar",
       [](std::mt19937_64& rng) {
         Tensor a = leaf(random_shape(rng, 2), rng);
         const double c = std::uniform_real_distribution<double>(-3, 3)(rng);
         return Instance{list(a), [=] { return mul_scalar(a, c); }};
       }},
      {"concat",
       [](std::mt19937_64& rng) {
         const std::size_t axis = pick(rng, 0, 2);
         Shape s1 = random_shape(rng, 3), s2 = s1;
         s2[axis] = pick(rng, 1, 3);
         Tensor a = leaf(s1, rng), b = leaf(s2, rng);
         return Instance{list(a, b), [=] { return concat({a, b}, axis); }};
       }},
      {"slice",
       [](std::mt19937_64& rng) {
         const std::size_t axis = pick(rng, 0, 2);
         Shape s = random_shape(rng, 3);
         s[axis] = pick(rng, 2, 5);
         const std::size_t start = pick(rng, 0, s[axis] - 1), len = pick(rng, 1, s[axis] - start);
         Tensor a = leaf(s, rng);
         return Instance{list(a), [=] { return slice(a, axis, start, len); }};
       }},
      {"slice_last_steps",
       [](std::mt19937_64& rng) {
         Shape s = random_shape(rng, 4);
         s[3] = pick(rng, 2, 6);
         const std::size_t keep = pick(rng, 1, s[3]);
         Tensor a = leaf(s, rng);
         return Instance{list(a), [=] { return slice_last_steps(a, keep); }};
       }},
      {"index_select",
       [](std::mt19937_64& rng) {
         const std::size_t axis = pick(rng, 0, 2);
         Shape s = random_shape(rng, 3);
         std::vector<std::size_t> idx(pick(rng, 1, 5));
         for (auto& i : idx) i = pick(rng, 0, s[axis] - 1);  // repeats allowed
         Tensor a = leaf(s, rng);
         return Instance{list(a), [=] { return index_select(a, axis, idx); }};
       }},
      {"reshape",
       [](std::mt19937_64& rng) {
         Shape s = random_shape(rng, 3);
         Tensor a = leaf(s, rng);
         return Instance{list(a), [=] { return reshape(a, {s[0] * s[1], s[2]}); }};
       }},
      {"softmax",
       [](std::mt19937_64& rng) {
         const std::size_t axis = pick(rng, 0, 2);
         Tensor a = leaf(random_shape(rng, 3), rng, -2, 2);
         return Instance{list(a), [=] { return softmax(a, axis); }};
       }},
      {"dropout",
       [](std::mt19937_64& rng) {
         Tensor a = leaf(random_shape(rng, 3), rng);
         const double p = std::uniform_real_distribution<double>(0.0, 0.7)(rng);
         const std::uint64_t seed = rng();
         return Instance{list(a), [=] {
                           std::mt19937_64 local(seed);  // same mask every evaluation
                           return dropout(a, p, true, local);
                         }};
       }},
      {"layer_norm",
       [](std::mt19937_64& rng) {
         const std::size_t b = pick(rng, 1, 2), c = pick(rng, 2, 4), n = pick(rng, 2, 4), t = pick(rng, 1, 3);
         Tensor x = leaf({b, c, n, t}, rng, -2, 2);
         Tensor w = leaf({c, n}, rng, 0.5, 1.5);
         Tensor bias = leaf({c, n}, rng);
         return Instance{list(x, w, bias), [=] { return layer_norm(x, {1, 2}, w, bias, 1e-5); }};
       }},
      {"topk_rows",
       [](std::mt19937_64& rng) {
         const std::size_t cols = pick(rng, 2, 6);
         Tensor a = separated_rows(pick(rng, 1, 4), cols, rng);
         const std::size_t k = pick(rng, 1, cols);
         return Instance{list(a), [=] { return topk_rows(a, k); }};
       }},
      {"sum",
       [](std::mt19937_64& rng) {
         Tensor a = leaf(random_shape(rng, 3), rng);
         return Instance{list(a), [=] { return sum(a); }};
       }},
      {"mean",
       [](std::mt19937_64& rng) {
         Tensor a = leaf(random_shape(rng, 3), rng);
         return Instance{list(a), [=] { return mean(a); }};
       }},
      {"sum_squares",
       [](std::mt19937_64& rng) {
         Tensor a = leaf(random_shape(rng, 3), rng);
         return Instance{list(a), [=] { return sum_squares(a); }};
       }},
      {"normalize_adjacency",
       [](std::mt19937_64& rng) {
         const std::size_t n = pick(rng, 2, 5);
         Tensor a = pick(rng, 0, 1) ? leaf({n, n}, rng, 0, 1) : leaf({2, n, n}, rng, 0, 1);
         return Instance{list(a), [=] { return normalize_adjacency(a); }};
       }},
      {"graph_learning",
       [](std::mt19937_64& rng) {
         static const GraphMode modes[] = {GraphMode::uni_directed, GraphMode::directed,
                                           GraphMode::undirected, GraphMode::global,
                                           GraphMode::dynamic};
         GraphLearnerOptions o;
         o.num_nodes = pick(rng, 3, 6);
         o.embed_dim = pick(rng, 2, 4);
         o.hidden_dim = pick(rng, 2, 4);
         o.k = pick(rng, 1, o.num_nodes);
         o.alpha = std::uniform_real_distribution<double>(0.5, 3.0)(rng);
         o.mode = modes[pick(rng, 0, 4)];
         o.feature_dim = 2;
         auto g = std::make_shared<GraphLearner>(o, rng);
         std::vector<Tensor> in = tensors_of(g->parameters(""));
         if (o.mode == GraphMode::dynamic) {
           Tensor x = leaf({2, o.num_nodes, 2}, rng);
           in.push_back(x);
           return Instance{in, [g, x] { return g->compute_dynamic(x).values; }, 0, g};
         }
         return Instance{in, [g] { return g->compute_adjacency().values; }, 0, g};
       }},
      {"mixhop",
       [](std::mt19937_64& rng) {
         const std::size_t ci = pick(rng, 1, 3), n = pick(rng, 2, 5);
         const bool select = pick(rng, 0, 3) != 0;
         const std::size_t co = select ? pick(rng, 1, 3) : ci;
         const double beta = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
         auto layer = std::make_shared<MixHopLayer>(ci, co, pick(rng, 1, 3), beta, rng, select);
         Tensor h = leaf({pick(rng, 1, 2), ci, n, pick(rng, 1, 3)}, rng);
         Tensor a = leaf({n, n}, rng, 0, 1);
         std::vector<Tensor> in = tensors_of(layer->parameters(""));
         in.push_back(h);
         in.push_back(a);
         return Instance{in, [layer, h, a] { return layer->forward(h, normalize_adjacency(a)); }, 0, layer};
       }},
      {"gc",
       [](std::mt19937_64& rng) {
         const std::size_t ci = pick(rng, 1, 3), co = pick(rng, 1, 3), n = pick(rng, 2, 5);
         auto gc = std::make_shared<GCModule>(ci, co, pick(rng, 1, 3), 0.05, rng, true);
         Tensor h = leaf({pick(rng, 1, 2), ci, n, pick(rng, 1, 3)}, rng);
         Tensor a = leaf({n, n}, rng, 0, 1);
         std::vector<Tensor> in = tensors_of(gc->parameters(""));
         in.push_back(h);
         in.push_back(a);
         return Instance{in, [gc, h, a] { return gc->forward(h, a); }, 0, gc};
       }},
      {"inception",
       [](std::mt19937_64& rng) {
         const std::size_t ci = pick(rng, 1, 2), d = pick(rng, 1, 2);
         auto layer = std::make_shared<DilatedInception>(
             ci, 4 * pick(rng, 1, 2), d,
             std::vector<std::size_t>(kInceptionWidths.begin(), kInceptionWidths.end()), rng);
         Tensor z = leaf({1, ci, pick(rng, 1, 3), 6 * d + pick(rng, 1, 3)}, rng);
         std::vector<Tensor> in = tensors_of(layer->parameters(""));
         in.push_back(z);
         return Instance{in, [layer, z] { return layer->forward(z); }, 0, layer};
       }},
      {"tc",
       [](std::mt19937_64& rng) {
         const std::size_t ci = pick(rng, 1, 2), d = pick(rng, 1, 2);
         auto tc = std::make_shared<TCModule>(
             ci, 4, d, std::vector<std::size_t>(kInceptionWidths.begin(), kInceptionWidths.end()), rng);
         Tensor x = leaf({1, ci, pick(rng, 1, 3), 6 * d + pick(rng, 1, 3)}, rng);
         std::vector<Tensor> in = tensors_of(tc->parameters(""));
         in.push_back(x);
         return Instance{in, [tc, x] { return tc->forward(x); }, 0, tc};
       }},
      {"model",
       [](std::mt19937_64& rng) {
         MtgnnConfig c;
         c.num_nodes = pick(rng, 3, 5);
         c.in_dim = pick(rng, 1, 2);
         c.layers = 2;
         c.dilation_rate = pick(rng, 1, 2);
         c.input_len = c.receptive_field() + pick(rng, 0, 2);
         c.output_len = pick(rng, 1, 3);
         c.start_channels = c.conv_channels = 4;
         c.skip_channels = 3;
         c.end_channels = 3;
         c.embed_dim = 3;
         c.subgraph_k = pick(rng, 1, c.num_nodes);
         c.dropout = 0.0;
         auto model = std::make_shared<MtgnnModel>(c, rng);
         Tensor x = leaf({2, c.in_dim, c.num_nodes, c.input_len}, rng);
         std::vector<Tensor> in = tensors_of(model->parameters());
         in.push_back(x);
         return Instance{in, [model, x] { return model->forward(x); }, 16, model};
       }},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& gradcheck_op_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : factories()) out.push_back(name);
    return out;
  }();
  return names;
}

std::vector<GradcheckReport> run_gradcheck(const std::string& op, double tolerance,
                                           std::size_t instances, std::uint64_t seed) {
  const auto& names = gradcheck_op_names();
  if (!op.empty() && std::find(names.begin(), names.end(), op) == names.end())
    throw ConfigError("unknown gradcheck op '" + op + "'");
  std::vector<GradcheckReport> out;
  std::size_t index = 0;
  for (const auto& [name, factory] : factories()) {
    ++index;
    if (!op.empty() && name != op) continue;
    std::mt19937_64 rng(seed * 1000003ull + index);
    GradcheckReport rep;
    rep.op = name;
    for (std::size_t i = 0; i < instances; ++i) {
      Instance inst = factory(rng);
      rep.max_rel_error =
          std::max(rep.max_rel_error, check_gradients(inst.f, inst.inputs, rng, 1e-5, inst.max_coords));
      ++rep.instances;
    }
    rep.passed = rep.max_rel_error <= tolerance;
    out.push_back(rep);
  }
  return out;
}

}  // namespace mtgnn
