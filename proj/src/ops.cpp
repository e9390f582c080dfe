#include "mtgnn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mtgnn/errors.hpp"

namespace mtgnn {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void require_axis(const char* op, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank())
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(x.shape()));
}

// Splits a shape around `axis` into (outer, extent, inner) counts.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// Unary elementwise op whose derivative is expressed through input x and
// output y.
template <class F, class DF>
Tensor elementwise(const Tensor& x, F f, DF dfdx) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  auto y = std::make_shared<std::vector<double>>(out);
  return make_op(x.shape(), std::move(out), {x},
                 [x, y, dfdx](std::span<const double> g, std::span<double* const> gin) {
                   if (!gin[0]) return;
                   auto xd = x.data();
                   for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * dfdx(xd[i], (*y)[i]);
                 });
}

}  // namespace

std::vector<std::size_t> topk_indices(std::span<const double> row, std::size_t k) {
  std::vector<std::size_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, row.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return row[a] > row[b] || (row[a] == row[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  auto mismatch = [&] {
    return DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  };
  if (sa.size() < 2 || sb.size() < 2) throw mismatch();
  const std::size_t m = sa[sa.size() - 2], k = sa.back();
  const std::size_t kb = sb[sb.size() - 2], n = sb.back();
  if (k != kb) throw mismatch();
  Shape batch_a(sa.begin(), sa.end() - 2), batch_b(sb.begin(), sb.end() - 2);
  Shape batch;
  if (batch_a == batch_b || batch_b.empty())
    batch = batch_a;
  else if (batch_a.empty())
    batch = batch_b;
  else
    throw mismatch();
  const std::size_t nb = shape_numel(batch);
  const std::size_t stride_a = batch_a.empty() ? 0 : m * k;
  const std::size_t stride_b = batch_b.empty() ? 0 : k * n;

  std::vector<double> out(nb * m * n, 0.0);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t z = 0; z < nb; ++z) {
    const double* A = ad.data() + z * stride_a;
    const double* B = bd.data() + z * stride_b;
    double* C = out.data() + z * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        const double* Bp = B + p * n;
        double* Ci = C + i * n;
        for (std::size_t j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
      }
  }
  add_macs(static_cast<std::uint64_t>(nb) * m * k * n);

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  return make_op(std::move(out_shape), std::move(out), {a, b},
                 [a, b, nb, m, k, n, stride_a, stride_b](std::span<const double> g,
                                                         std::span<double* const> gin) {
                   auto ad = a.data();
                   auto bd = b.data();
                   for (std::size_t z = 0; z < nb; ++z) {
                     const double* A = ad.data() + z * stride_a;
                     const double* B = bd.data() + z * stride_b;
                     const double* G = g.data() + z * m * n;
                     if (gin[0]) {
                       double* GA = gin[0] + z * stride_a;
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t p = 0; p < k; ++p) {
                           double acc = 0.0;
                           const double* Gi = G + i * n;
                           const double* Bp = B + p * n;
                           for (std::size_t j = 0; j < n; ++j) acc += Gi[j] * Bp[j];
                           GA[i * k + p] += acc;
                         }
                     }
                     if (gin[1]) {
                       double* GB = gin[1] + z * stride_b;
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t p = 0; p < k; ++p) {
                           const double aip = A[i * k + p];
                           const double* Gi = G + i * n;
                           double* GBp = GB + p * n;
                           for (std::size_t j = 0; j < n; ++j) GBp[j] += aip * Gi[j];
                         }
                     }
                   }
                 });
}

Tensor transpose(const Tensor& x) {
  const auto& s = x.shape();
  if (s.size() < 2) throw DimensionError("transpose: need rank >= 2, got " + shape_str(s));
  const std::size_t r = s[s.size() - 2], c = s.back();
  const std::size_t nb = x.numel() / (r * c);
  Shape os = s;
  std::swap(os[os.size() - 2], os[os.size() - 1]);
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t z = 0; z < nb; ++z)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[z * r * c + j * r + i] = xd[z * r * c + i * c + j];
  return make_op(std::move(os), std::move(out), {x},
                 [nb, r, c](std::span<const double> g, std::span<double* const> gin) {
                   if (!gin[0]) return;
                   for (std::size_t z = 0; z < nb; ++z)
                     for (std::size_t i = 0; i < r; ++i)
                       for (std::size_t j = 0; j < c; ++j)
                         gin[0][z * r * c + i * c + j] += g[z * r * c + j * r + i];
                 });
}

namespace {

Tensor conv_impl(const Tensor& input, const Tensor& kernel, const Tensor* bias,
                 std::size_t dilation) {
  const auto& si = input.shape();
  const auto& sk = kernel.shape();
  if (si.size() != 4 || sk.size() != 4 || sk[2] != 1 || sk[1] != si[1])
    throw DimensionError("conv1d_dilated: input " + shape_str(si) + " incompatible with kernel " +
                         shape_str(sk));
  if (dilation == 0) throw ConfigError("conv1d_dilated: dilation must be positive");
  if (bias && (bias->rank() != 1 || bias->dim(0) != sk[0]))
    throw DimensionError("conv1d_dilated: bias " + shape_str(bias->shape()) + " for " +
                         std::to_string(sk[0]) + " output channels");
  const std::size_t B = si[0], CI = si[1], N = si[2], T = si[3];
  const std::size_t CO = sk[0], K = sk[3];
  const std::size_t span = dilation * (K - 1);
  if (T <= span)
    throw LengthError("conv1d_dilated: sequence length " + std::to_string(T) +
                      " too short, need at least " + std::to_string(span + 1));
  const std::size_t TO = T - span;

  std::vector<double> out(B * CO * N * TO, 0.0);
  auto in = input.data();
  auto w = kernel.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < CO; ++o) {
      double* dst_bo = out.data() + (b * CO + o) * N * TO;
      if (bias) {
        const double bv = bias->data()[o];
        std::fill(dst_bo, dst_bo + N * TO, bv);
      }
      for (std::size_t i = 0; i < CI; ++i) {
        const double* src_bi = in.data() + (b * CI + i) * N * T;
        for (std::size_t s = 0; s < K; ++s) {
          const double ws = w[(o * CI + i) * K + s];
          if (ws == 0.0) continue;
          const std::size_t off = span - dilation * s;
          for (std::size_t v = 0; v < N; ++v) {
            const double* src = src_bi + v * T + off;
            double* dst = dst_bo + v * TO;
            for (std::size_t t = 0; t < TO; ++t) dst[t] += ws * src[t];
          }
        }
      }
    }

  std::vector<Tensor> inputs{input, kernel};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias != nullptr;
  return make_op(
      {B, CO, N, TO}, std::move(out), std::move(inputs),
      [input, kernel, has_bias, B, CI, N, T, CO, K, TO, span, dilation](
          std::span<const double> g, std::span<double* const> gin) {
        auto in = input.data();
        auto w = kernel.data();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t o = 0; o < CO; ++o) {
            const double* g_bo = g.data() + (b * CO + o) * N * TO;
            if (has_bias && gin[2]) {
              double acc = 0.0;
              for (std::size_t e = 0; e < N * TO; ++e) acc += g_bo[e];
              gin[2][o] += acc;
            }
            for (std::size_t i = 0; i < CI; ++i) {
              const double* src_bi = in.data() + (b * CI + i) * N * T;
              for (std::size_t s = 0; s < K; ++s) {
                const std::size_t widx = (o * CI + i) * K + s;
                const std::size_t off = span - dilation * s;
                if (gin[1]) {
                  double acc = 0.0;
                  for (std::size_t v = 0; v < N; ++v) {
                    const double* src = src_bi + v * T + off;
                    const double* gg = g_bo + v * TO;
                    for (std::size_t t = 0; t < TO; ++t) acc += gg[t] * src[t];
                  }
                  gin[1][widx] += acc;
                }
                if (gin[0]) {
                  const double ws = w[widx];
                  if (ws == 0.0) continue;
                  double* gi_bi = gin[0] + (b * CI + i) * N * T;
                  for (std::size_t v = 0; v < N; ++v) {
                    double* dst = gi_bi + v * T + off;
                    const double* gg = g_bo + v * TO;
                    for (std::size_t t = 0; t < TO; ++t) dst[t] += ws * gg[t];
                  }
                }
              }
            }
          }
      });
}

}  // namespace

Tensor conv1d_dilated(const Tensor& input, const Tensor& kernel, std::size_t dilation) {
  return conv_impl(input, kernel, nullptr, dilation);
}

Tensor conv1d_dilated(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                      std::size_t dilation) {
  return conv_impl(input, kernel, &bias, dilation);
}

Tensor node_propagate(const Tensor& adj, const Tensor& x) {
  const auto& sx = x.shape();
  const auto& sa = adj.shape();
  if (sx.size() != 4)
    throw DimensionError("node_propagate: expected [b,c,n,t] features, got " + shape_str(sx));
  const std::size_t B = sx[0], C = sx[1], N = sx[2], T = sx[3];
  const bool batched = sa.size() == 3;
  if (!((sa.size() == 2 && sa[0] == N && sa[1] == N) ||
        (batched && sa[0] == B && sa[1] == N && sa[2] == N)))
    throw DimensionError("node_propagate: adjacency " + shape_str(sa) + " incompatible with " +
                         shape_str(sx));
  auto a = adj.data();
  auto xd = x.data();
  std::vector<double> out(xd.size(), 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const double* A = a.data() + (batched ? b * N * N : 0);
    for (std::size_t c = 0; c < C; ++c) {
      const double* X = xd.data() + (b * C + c) * N * T;
      double* O = out.data() + (b * C + c) * N * T;
      for (std::size_t v = 0; v < N; ++v)
        for (std::size_t w = 0; w < N; ++w) {
          const double avw = A[v * N + w];
          if (avw == 0.0) continue;
          const double* src = X + w * T;
          double* dst = O + v * T;
          for (std::size_t t = 0; t < T; ++t) dst[t] += avw * src[t];
        }
    }
  }
  return make_op(sx, std::move(out), {adj, x},
                 [adj, x, batched, B, C, N, T](std::span<const double> g,
                                               std::span<double* const> gin) {
                   auto a = adj.data();
                   auto xd = x.data();
                   for (std::size_t b = 0; b < B; ++b) {
                     const double* A = a.data() + (batched ? b * N * N : 0);
                     double* GA = gin[0] ? gin[0] + (batched ? b * N * N : 0) : nullptr;
                     for (std::size_t c = 0; c < C; ++c) {
                       const double* X = xd.data() + (b * C + c) * N * T;
                       const double* G = g.data() + (b * C + c) * N * T;
                       for (std::size_t v = 0; v < N; ++v)
                         for (std::size_t w = 0; w < N; ++w) {
                           const double* gv = G + v * T;
                           if (GA) {
                             const double* xw = X + w * T;
                             double acc = 0.0;
                             for (std::size_t t = 0; t < T; ++t) acc += gv[t] * xw[t];
                             GA[v * N + w] += acc;
                           }
                           if (gin[1]) {
                             const double avw = A[v * N + w];
                             if (avw == 0.0) continue;
                             double* gx = gin[1] + (b * C + c) * N * T + w * T;
                             for (std::size_t t = 0; t < T; ++t) gx[t] += avw * gv[t];
                           }
                         }
                     }
                   }
                 });
}

Tensor tanh(const Tensor& x) {
  return elementwise(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return elementwise(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& x) {
  return elementwise(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  return make_op(a.shape(), std::move(out), {a, b},
                 [](std::span<const double> g, std::span<double* const> gin) {
                   for (double* gi : gin)
                     if (gi)
                       for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  return make_op(a.shape(), std::move(out), {a, b},
                 [](std::span<const double> g, std::span<double* const> gin) {
                   if (gin[0])
                     for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                   if (gin[1])
                     for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] -= g[i];
                 });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape("hadamard", a, b);
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return make_op(a.shape(), std::move(out), {a, b},
                 [a, b](std::span<const double> g, std::span<double* const> gin) {
                   auto ad = a.data();
                   auto bd = b.data();
                   if (gin[0])
                     for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * bd[i];
                   if (gin[1])
                     for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] += g[i] * ad[i];
                 });
}

Tensor mul_scalar(const Tensor& x, double c) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * xd[i];
  return make_op(x.shape(), std::move(out), {x},
                 [c](std::span<const double> g, std::span<double* const> gin) {
                   if (gin[0])
                     for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += c * g[i];
                 });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  require_axis("concat", parts[0], axis);
  Shape os = parts[0].shape();
  os[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != os.size())
      throw DimensionError("concat: rank mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    for (std::size_t d = 0; d < os.size(); ++d)
      if (d != axis && p.dim(d) != parts[0].dim(d))
        throw DimensionError("concat: shape mismatch " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
    os[axis] += p.dim(axis);
  }
  const auto sp = split_at(os, axis);
  std::vector<double> out(shape_numel(os));
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis) * sp.inner);
  const std::size_t row = sp.extent * sp.inner;
  std::size_t offset = 0;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    auto pd = parts[j].data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(pd.data() + o * widths[j], widths[j], out.data() + o * row + offset);
    offset += widths[j];
  }
  return make_op(std::move(os), std::move(out), parts,
                 [widths, row, outer = sp.outer](std::span<const double> g,
                                                 std::span<double* const> gin) {
                   std::size_t offset = 0;
                   for (std::size_t j = 0; j < widths.size(); ++j) {
                     if (gin[j])
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t e = 0; e < widths[j]; ++e)
                           gin[j][o * widths[j] + e] += g[o * row + offset + e];
                     offset += widths[j];
                   }
                 });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require_axis("slice", x, axis);
  if (length == 0 || start + length > x.dim(axis))
    throw DimensionError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + length) + ") out of bounds for axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
  const auto sp = split_at(x.shape(), axis);
  Shape os = x.shape();
  os[axis] = length;
  auto xd = x.data();
  std::vector<double> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(xd.data() + (o * sp.extent + start) * sp.inner, length * sp.inner,
                out.data() + o * length * sp.inner);
  return make_op(std::move(os), std::move(out), {x},
                 [sp, start, length](std::span<const double> g, std::span<double* const> gin) {
                   if (!gin[0]) return;
                   for (std::size_t o = 0; o < sp.outer; ++o) {
                     double* dst = gin[0] + (o * sp.extent + start) * sp.inner;
                     const double* src = g.data() + o * length * sp.inner;
                     for (std::size_t e = 0; e < length * sp.inner; ++e) dst[e] += src[e];
                   }
                 });
}

Tensor slice_last_steps(const Tensor& x, std::size_t steps) {
  if (x.rank() == 0) throw DimensionError("slice_last_steps on rank-0 tensor");
  const std::size_t t = x.shape().back();
  if (steps > t)
    throw LengthError("slice_last_steps: want " + std::to_string(steps) + " steps from length " +
                      std::to_string(t));
  if (steps == t) return x;
  return slice(x, x.rank() - 1, t - steps, steps);
}

Tensor index_select(const Tensor& x, std::size_t axis, std::span<const std::size_t> index) {
  require_axis("index_select", x, axis);
  if (index.empty()) throw DimensionError("index_select: empty index");
  const auto sp = split_at(x.shape(), axis);
  for (auto i : index)
    if (i >= sp.extent)
      throw DimensionError("index_select: index " + std::to_string(i) + " out of range for axis " +
                           std::to_string(axis) + " of " + shape_str(x.shape()));
  Shape os = x.shape();
  os[axis] = index.size();
  std::vector<std::size_t> idx(index.begin(), index.end());
  auto xd = x.data();
  const std::size_t m = idx.size();
  std::vector<double> out(sp.outer * m * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < m; ++j)
      std::copy_n(xd.data() + (o * sp.extent + idx[j]) * sp.inner, sp.inner,
                  out.data() + (o * m + j) * sp.inner);
  return make_op(std::move(os), std::move(out), {x},
                 [sp, idx](std::span<const double> g, std::span<double* const> gin) {
                   if (!gin[0]) return;
                   const std::size_t m = idx.size();
                   for (std::size_t o = 0; o < sp.outer; ++o)
                     for (std::size_t j = 0; j < m; ++j) {
                       double* dst = gin[0] + (o * sp.extent + idx[j]) * sp.inner;
                       const double* src = g.data() + (o * m + j) * sp.inner;
                       for (std::size_t e = 0; e < sp.inner; ++e) dst[e] += src[e];
                     }
                 });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op(std::move(shape), std::move(out), {x},
                 [](std::span<const double> g, std::span<double* const> gin) {
                   if (gin[0])
                     for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                 });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_axis("softmax", x, axis);
  const auto sp = split_at(x.shape(), axis);
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.extent * sp.inner + in;
      double mx = xd[base];
      for (std::size_t e = 1; e < sp.extent; ++e) mx = std::max(mx, xd[base + e * sp.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < sp.extent; ++e) {
        const double v = std::exp(xd[base + e * sp.inner] - mx);
        out[base + e * sp.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < sp.extent; ++e) out[base + e * sp.inner] /= z;
    }
  auto y = std::make_shared<std::vector<double>>(out);
  return make_op(x.shape(), std::move(out), {x},
                 [sp, y](std::span<const double> g, std::span<double* const> gin) {
                   if (!gin[0]) return;
                   for (std::size_t o = 0; o < sp.outer; ++o)
                     for (std::size_t in = 0; in < sp.inner; ++in) {
                       const std::size_t base = o * sp.extent * sp.inner + in;
                       double dot = 0.0;
                       for (std::size_t e = 0; e < sp.extent; ++e)
                         dot += g[base + e * sp.inner] * (*y)[base + e * sp.inner];
                       for (std::size_t e = 0; e < sp.extent; ++e) {
                         const std::size_t i = base + e * sp.inner;
                         gin[0][i] += (*y)[i] * (g[i] - dot);
                       }
                     }
                 });
}

Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout: rate must be in [0,1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const double scale = 1.0 / (1.0 - p);
  std::bernoulli_distribution keep(1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  for (auto& m : *mask) m = keep(rng) ? scale : 0.0;
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * (*mask)[i];
  return make_op(x.shape(), std::move(out), {x},
                 [mask](std::span<const double> g, std::span<double* const> gin) {
                   if (gin[0])
                     for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * (*mask)[i];
                 });
}

Tensor layer_norm(const Tensor& x, const std::vector<std::size_t>& axes, const Tensor& weight,
                  const Tensor& bias, double eps) {
  const auto& s = x.shape();
  if (axes.empty()) throw DimensionError("layer_norm: no normalized axes");
  std::vector<bool> normed(s.size(), false);
  Shape affine_shape;
  for (auto a : axes) {
    require_axis("layer_norm", x, a);
    if (normed[a]) throw DimensionError("layer_norm: repeated axis " + std::to_string(a));
    normed[a] = true;
  }
  for (std::size_t d = 0; d < s.size(); ++d)
    if (normed[d]) affine_shape.push_back(s[d]);
  for (const Tensor* t : {&weight, &bias})
    if (t->defined() && t->shape() != affine_shape)
      throw DimensionError("layer_norm: affine shape " + shape_str(t->shape()) + ", expected " +
                           shape_str(affine_shape));

  // Map every element to its normalization group and to its affine slot.
  const std::size_t total = x.numel();
  const std::size_t group_size = shape_numel(affine_shape);
  const std::size_t groups = total / group_size;
  auto group_of = std::make_shared<std::vector<std::size_t>>(total);
  auto slot_of = std::make_shared<std::vector<std::size_t>>(total);
  {
    std::vector<std::size_t> coord(s.size(), 0);
    for (std::size_t e = 0; e < total; ++e) {
      std::size_t gidx = 0, sidx = 0;
      for (std::size_t d = 0; d < s.size(); ++d) {
        if (normed[d])
          sidx = sidx * s[d] + coord[d];
        else
          gidx = gidx * s[d] + coord[d];
      }
      (*group_of)[e] = gidx;
      (*slot_of)[e] = sidx;
      for (std::size_t d = s.size(); d-- > 0;) {
        if (++coord[d] < s[d]) break;
        coord[d] = 0;
      }
    }
  }

  auto xd = x.data();
  std::vector<double> mu(groups, 0.0), var(groups, 0.0);
  for (std::size_t e = 0; e < total; ++e) mu[(*group_of)[e]] += xd[e];
  for (auto& m : mu) m /= static_cast<double>(group_size);
  for (std::size_t e = 0; e < total; ++e) {
    const double d = xd[e] - mu[(*group_of)[e]];
    var[(*group_of)[e]] += d * d;
  }
  auto inv_std = std::make_shared<std::vector<double>>(groups);
  for (std::size_t gi = 0; gi < groups; ++gi)
    (*inv_std)[gi] = 1.0 / std::sqrt(var[gi] / static_cast<double>(group_size) + eps);

  auto xhat = std::make_shared<std::vector<double>>(total);
  std::vector<double> out(total);
  const bool has_w = weight.defined(), has_b = bias.defined();
  for (std::size_t e = 0; e < total; ++e) {
    const std::size_t gi = (*group_of)[e];
    const double h = (xd[e] - mu[gi]) * (*inv_std)[gi];
    (*xhat)[e] = h;
    double y = has_w ? h * weight.data()[(*slot_of)[e]] : h;
    if (has_b) y += bias.data()[(*slot_of)[e]];
    out[e] = y;
  }

  std::vector<Tensor> inputs{x};
  if (has_w) inputs.push_back(weight);
  if (has_b) inputs.push_back(bias);
  return make_op(
      s, std::move(out), std::move(inputs),
      [weight, has_w, has_b, group_of, slot_of, inv_std, xhat, groups, group_size](
          std::span<const double> g, std::span<double* const> gin) {
        const std::size_t total = g.size();
        double* gw = has_w ? gin[1] : nullptr;
        double* gb = has_b ? gin[has_w ? 2 : 1] : nullptr;
        std::vector<double> gxhat(total);
        for (std::size_t e = 0; e < total; ++e) {
          const std::size_t slot = (*slot_of)[e];
          gxhat[e] = has_w ? g[e] * weight.data()[slot] : g[e];
          if (gw) gw[slot] += g[e] * (*xhat)[e];
          if (gb) gb[slot] += g[e];
        }
        if (!gin[0]) return;
        std::vector<double> mean_g(groups, 0.0), mean_gh(groups, 0.0);
        for (std::size_t e = 0; e < total; ++e) {
          mean_g[(*group_of)[e]] += gxhat[e];
          mean_gh[(*group_of)[e]] += gxhat[e] * (*xhat)[e];
        }
        const double inv_n = 1.0 / static_cast<double>(group_size);
        for (std::size_t e = 0; e < total; ++e) {
          const std::size_t gi = (*group_of)[e];
          gin[0][e] += (*inv_std)[gi] *
                       (gxhat[e] - mean_g[gi] * inv_n - (*xhat)[e] * mean_gh[gi] * inv_n);
        }
      });
}

Tensor topk_rows(const Tensor& x, std::size_t k) {
  if (k == 0) throw ConfigError("topk_rows: k must be at least 1");
  if (x.rank() == 0) throw DimensionError("topk_rows on rank-0 tensor");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  auto xd = x.data();
  auto mask = std::make_shared<std::vector<unsigned char>>(x.numel(), 0);
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = xd.subspan(r * width, width);
    for (auto j : topk_indices(row, k)) {
      (*mask)[r * width + j] = 1;
      out[r * width + j] = row[j];
    }
  }
  return make_op(x.shape(), std::move(out), {x},
                 [mask](std::span<const double> g, std::span<double* const> gin) {
                   if (!gin[0]) return;
                   for (std::size_t i = 0; i < g.size(); ++i)
                     if ((*mask)[i]) gin[0][i] += g[i];
                 });
}

Tensor sum(const Tensor& x) {
  auto xd = x.data();
  const double acc = std::accumulate(xd.begin(), xd.end(), 0.0);
  const std::size_t n = xd.size();
  return make_op({1}, {acc}, {x}, [n](std::span<const double> g, std::span<double* const> gin) {
    if (gin[0])
      for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[0];
  });
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_squares(const Tensor& x) {
  auto xd = x.data();
  double acc = 0.0;
  for (double v : xd) acc += v * v;
  return make_op({1}, {acc}, {x}, [x](std::span<const double> g, std::span<double* const> gin) {
    if (!gin[0]) return;
    auto xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) gin[0][i] += 2.0 * xd[i] * g[0];
  });
}

}  // namespace mtgnn
