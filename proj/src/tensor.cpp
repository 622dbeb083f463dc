#include "fedmobi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "fedmobi/rng.hpp"

namespace fedmobi {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

thread_local bool g_trace_on = false;
thread_local double g_trace_flops = 0.0;

bool want_grad(const Tensor& t) { return t.requires_grad(); }

// Output tensor wired into the graph when any input is trainable.
Tensor make_out(std::vector<std::size_t> shape, std::vector<Tensor> parents,
                std::function<void(const Tensor&)> bw) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || want_grad(p);
  Tensor out = Tensor::zeros(std::move(shape), rg);
  if (rg) {
    out.node = std::make_shared<GraphNode>();
    out.node->parents = std::move(parents);
    out.node->backward = std::move(bw);
  }
  return out;
}

}  // namespace

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  Tensor t;
  t.shape_ = std::move(shape);
  std::size_t n = shape_numel(t.shape_);
  t.data_ = std::make_shared<std::vector<double>>(n, 0.0);
  t.requires_grad_ = requires_grad;
  if (requires_grad) t.grad_ = std::make_shared<std::vector<double>>(n, 0.0);
  return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<std::vector<double>>(std::move(values));
  t.requires_grad_ = requires_grad;
  if (requires_grad) t.grad_ = std::make_shared<std::vector<double>>(t.data_->size(), 0.0);
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= shape_.size()) throw ShapeError("Tensor::dim: axis out of range");
  return shape_[i];
}

std::size_t Tensor::numel() const { return shape_numel(shape_); }

std::vector<double>& Tensor::data() {
  if (!data_) throw StateError("Tensor: undefined");
  return *data_;
}

const std::vector<double>& Tensor::data() const {
  if (!data_) throw StateError("Tensor: undefined");
  return *data_;
}

std::vector<double>& Tensor::grad() {
  if (!requires_grad_ || !grad_) throw StateError("Tensor: no gradient buffer");
  return *grad_;
}

const std::vector<double>& Tensor::grad() const {
  if (!requires_grad_ || !grad_) throw StateError("Tensor: no gradient buffer");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

std::uint64_t Tensor::checksum() const {
  std::uint64_t h = fnv1a64(shape_.data(), shape_.size() * sizeof(std::size_t));
  if (data_) h = fnv1a64(data_->data(), data_->size() * sizeof(double), h);
  return h;
}

// ---- ops ----

void flop_trace_reset() { g_trace_flops = 0.0; }
void flop_trace_enable(bool on) { g_trace_on = on; }
double flop_trace_total() { return g_trace_flops; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (g_trace_on) g_trace_flops += 2.0 * double(m) * double(k) * double(n);
  Tensor out = make_out(
      {m, n}, {a, b}, [m, k, n, a, b](const Tensor& o) {
        const auto& go = o.grad();
        if (a.requires_grad()) {
          auto& ga = const_cast<Tensor&>(a).grad();
          const auto& bd = b.data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
              double acc = 0.0;
              const double* gr = &go[i * n];
              const double* br = &bd[kk * n];
              for (std::size_t j = 0; j < n; ++j) acc += gr[j] * br[j];
              ga[i * k + kk] += acc;
            }
        }
        if (b.requires_grad()) {
          auto& gb = const_cast<Tensor&>(b).grad();
          const auto& ad = a.data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
              double av = ad[i * k + kk];
              if (av == 0.0) continue;
              const double* gr = &go[i * n];
              double* gbr = &gb[kk * n];
              for (std::size_t j = 0; j < n; ++j) gbr[j] += av * gr[j];
            }
        }
      });
  auto& od = out.data();
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = &od[i * n];
    for (std::size_t kk = 0; kk < k; ++kk) {
      double av = ad[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = &bd[kk * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: rank-2 only, got " + shape_str(a.shape()));
  std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out = make_out({n, m}, {a}, [m, n, a](const Tensor& o) {
    if (!a.requires_grad()) return;
    auto& ga = const_cast<Tensor&>(a).grad();
    const auto& go = o.grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
  });
  const auto& ad = a.data();
  auto& od = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) od[j * m + i] = ad[i * n + j];
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = make_out(a.shape(), {a, b}, [a, b](const Tensor& o) {
    const auto& go = o.grad();
    if (a.requires_grad()) {
      auto& ga = const_cast<Tensor&>(a).grad();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (b.requires_grad()) {
      auto& gb = const_cast<Tensor&>(b).grad();
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
    }
  });
  const auto& ad = a.data();
  const auto& bd = b.data();
  auto& od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(1))
    throw ShapeError("add_bias: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out = make_out({m, n}, {x, b}, [m, n, x, b](const Tensor& o) {
    const auto& go = o.grad();
    if (x.requires_grad()) {
      auto& gx = const_cast<Tensor&>(x).grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    }
    if (b.requires_grad()) {
      auto& gb = const_cast<Tensor&>(b).grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
    }
  });
  const auto& xd = x.data();
  const auto& bd = b.data();
  auto& od = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) od[i * n + j] = xd[i * n + j] + bd[j];
  return out;
}

Tensor affine(const Tensor& a, double mul, double shift) {
  Tensor out = make_out(a.shape(), {a}, [a, mul](const Tensor& o) {
    if (!a.requires_grad()) return;
    auto& ga = const_cast<Tensor&>(a).grad();
    const auto& go = o.grad();
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += mul * go[i];
  });
  const auto& ad = a.data();
  auto& od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = mul * ad[i] + shift;
  return out;
}

Tensor scale(const Tensor& a, double s) { return affine(a, s, 0.0); }

Tensor broadcast_scale(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("broadcast_scale: scale must have one element");
  Tensor out = make_out(x.shape(), {x, s}, [x, s](const Tensor& o) {
    const auto& go = o.grad();
    double sv = s.data()[0];
    if (x.requires_grad()) {
      auto& gx = const_cast<Tensor&>(x).grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += sv * go[i];
    }
    if (s.requires_grad()) {
      auto& gs = const_cast<Tensor&>(s).grad();
      const auto& xd = x.data();
      double acc = 0.0;
      for (std::size_t i = 0; i < go.size(); ++i) acc += xd[i] * go[i];
      gs[0] += acc;
    }
  });
  const auto& xd = x.data();
  double sv = s.data()[0];
  auto& od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = sv * xd[i];
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = make_out(x.shape(), {x}, [x](const Tensor& o) {
    if (!x.requires_grad()) return;
    auto& gx = const_cast<Tensor&>(x).grad();
    const auto& go = o.grad();
    const auto& od = o.data();
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += od[i] * (1.0 - od[i]) * go[i];
  });
  const auto& xd = x.data();
  auto& od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = 1.0 / (1.0 + std::exp(-xd[i]));
  return out;
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  Tensor out = make_out(x.shape(), {x}, [x](const Tensor& o) {
    if (!x.requires_grad()) return;
    auto& gx = const_cast<Tensor&>(x).grad();
    const auto& go = o.grad();
    const auto& xd = x.data();
    for (std::size_t i = 0; i < go.size(); ++i) {
      double v = xd[i];
      double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      gx[i] += (cdf + v * pdf) * go[i];
    }
  });
  const auto& xd = x.data();
  auto& od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) {
    double v = xd[i];
    od[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw ShapeError("layernorm: needs at least rank 1");
  std::size_t n = x.shape().back();
  if (gamma.shape() != std::vector<std::size_t>{n} || beta.shape() != std::vector<std::size_t>{n})
    throw ShapeError("layernorm: gamma/beta must be [" + std::to_string(n) + "]");
  std::size_t rows = x.numel() / n;
  Tensor out = make_out(x.shape(), {x, gamma, beta}, [rows, n, x, gamma, beta,
                                                      eps](const Tensor& o) {
    const auto& go = o.grad();
    const auto& xd = x.data();
    const auto& gd = gamma.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = &xd[r * n];
      const double* gr = &go[r * n];
      double mean = 0.0;
      for (std::size_t j = 0; j < n; ++j) mean += xr[j];
      mean /= double(n);
      double var = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double d = xr[j] - mean;
        var += d * d;
      }
      var /= double(n);
      double inv = 1.0 / std::sqrt(var + eps);
      if (beta.requires_grad()) {
        auto& gb = const_cast<Tensor&>(beta).grad();
        for (std::size_t j = 0; j < n; ++j) gb[j] += gr[j];
      }
      if (gamma.requires_grad()) {
        auto& gg = const_cast<Tensor&>(gamma).grad();
        for (std::size_t j = 0; j < n; ++j) gg[j] += gr[j] * (xr[j] - mean) * inv;
      }
      if (x.requires_grad()) {
        auto& gx = const_cast<Tensor&>(x).grad();
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          double xhat = (xr[j] - mean) * inv;
          double dxhat = gr[j] * gd[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        for (std::size_t j = 0; j < n; ++j) {
          double xhat = (xr[j] - mean) * inv;
          double dxhat = gr[j] * gd[j];
          gx[r * n + j] +=
              inv * (dxhat - sum_dxhat / double(n) - xhat * sum_dxhat_xhat / double(n));
        }
      }
    }
  });
  const auto& xd = x.data();
  const auto& gd = gamma.data();
  const auto& bd = beta.data();
  auto& od = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xd[r * n];
    double* orow = &od[r * n];
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= double(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double d = xr[j] - mean;
      var += d * d;
    }
    var /= double(n);
    double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) orow[j] = (xr[j] - mean) * inv * gd[j] + bd[j];
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("softmax: needs at least rank 1");
  std::size_t n = x.shape().back();
  std::size_t rows = x.numel() / n;
  Tensor out = make_out(x.shape(), {x}, [rows, n, x](const Tensor& o) {
    if (!x.requires_grad()) return;
    auto& gx = const_cast<Tensor&>(x).grad();
    const auto& go = o.grad();
    const auto& od = o.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = &od[r * n];
      const double* gr = &go[r * n];
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += yr[j] * (gr[j] - dot);
    }
  });
  const auto& xd = x.data();
  auto& od = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xd[r * n];
    double* orow = &od[r * n];
    double mx = xr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(xr[j] - mx);
      sum += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= sum;
  }
  return out;
}

Tensor embedding(const Tensor& table, const std::vector<std::uint32_t>& ids) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2");
  std::size_t v = table.dim(0), h = table.dim(1);
  for (auto id : ids)
    if (id >= v) throw ShapeError("embedding: id " + std::to_string(id) + " >= " +
                                         std::to_string(v));
  std::size_t n = ids.size();
  Tensor out = make_out({n, h}, {table}, [n, h, table, ids](const Tensor& o) {
    if (!table.requires_grad()) return;
    auto& gt = const_cast<Tensor&>(table).grad();
    const auto& go = o.grad();
    for (std::size_t i = 0; i < n; ++i) {
      double* dst = &gt[std::size_t(ids[i]) * h];
      const double* src = &go[i * h];
      for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
    }
  });
  const auto& td = table.data();
  auto& od = out.data();
  for (std::size_t i = 0; i < n; ++i)
    std::memcpy(&od[i * h], &td[std::size_t(ids[i]) * h], h * sizeof(double));
  return out;
}

Tensor mean_seq(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("mean_seq: expects [batch, seq, dim], got " +
                                      shape_str(x.shape()));
  std::size_t b = x.dim(0), s = x.dim(1), d = x.dim(2);
  Tensor out = make_out({b, d}, {x}, [b, s, d, x](const Tensor& o) {
    if (!x.requires_grad()) return;
    auto& gx = const_cast<Tensor&>(x).grad();
    const auto& go = o.grad();
    double inv = 1.0 / double(s);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t t = 0; t < s; ++t)
        for (std::size_t j = 0; j < d; ++j) gx[(i * s + t) * d + j] += go[i * d + j] * inv;
  });
  const auto& xd = x.data();
  auto& od = out.data();
  double inv = 1.0 / double(s);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < s; ++t)
      for (std::size_t j = 0; j < d; ++j) od[i * d + j] += xd[(i * s + t) * d + j] * inv;
  return out;
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor out = make_out(std::move(shape), {x}, [x](const Tensor& o) {
    if (!x.requires_grad()) return;
    auto& gx = const_cast<Tensor&>(x).grad();
    const auto& go = o.grad();
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
  });
  // Row-major relayout is the identity; copy keeps buffers independent.
  out.data() = x.data();
  return out;
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("mse: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  std::size_t n = pred.numel();
  Tensor out = make_out({1}, {pred, target}, [n, pred, target](const Tensor& o) {
    double g = o.grad()[0] * 2.0 / double(n);
    const auto& pd = pred.data();
    const auto& td = target.data();
    if (pred.requires_grad()) {
      auto& gp = const_cast<Tensor&>(pred).grad();
      for (std::size_t i = 0; i < pd.size(); ++i) gp[i] += g * (pd[i] - td[i]);
    }
    if (target.requires_grad()) {
      auto& gt = const_cast<Tensor&>(target).grad();
      for (std::size_t i = 0; i < pd.size(); ++i) gt[i] -= g * (pd[i] - td[i]);
    }
  });
  const auto& pd = pred.data();
  const auto& td = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < pd.size(); ++i) {
    double d = pd[i] - td[i];
    acc += d * d;
  }
  out.data()[0] = acc / double(n);
  return out;
}

Tensor sum_squares(const Tensor& x) {
  Tensor out = make_out({1}, {x}, [x](const Tensor& o) {
    if (!x.requires_grad()) return;
    double g = o.grad()[0];
    auto& gx = const_cast<Tensor&>(x).grad();
    const auto& xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) gx[i] += 2.0 * xd[i] * g;
  });
  const auto& xd = x.data();
  double acc = 0.0;
  for (double v : xd) acc += v * v;
  out.data()[0] = acc;
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::uint32_t>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [batch, classes]");
  std::size_t m = logits.dim(0), c = logits.dim(1);
  if (labels.size() != m)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(m));
  for (auto l : labels)
    if (l >= c) throw DataError("cross_entropy: label " + std::to_string(l) + " >= " +
                                std::to_string(c));
  Tensor out = make_out({1}, {logits}, [m, c, logits, labels](const Tensor& o) {
    if (!logits.requires_grad()) return;
    double g = o.grad()[0] / double(m);
    auto& gl = const_cast<Tensor&>(logits).grad();
    const auto& xd = logits.data();
    for (std::size_t i = 0; i < m; ++i) {
      const double* xr = &xd[i * c];
      double mx = xr[0];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
      double sum = 0.0;
      for (std::size_t j = 0; j < c; ++j) sum += std::exp(xr[j] - mx);
      for (std::size_t j = 0; j < c; ++j) {
        double p = std::exp(xr[j] - mx) / sum;
        gl[i * c + j] += g * (p - (labels[i] == j ? 1.0 : 0.0));
      }
    }
  });
  const auto& xd = logits.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = &xd[i * c];
    double mx = xr[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(xr[j] - mx);
    acc += std::log(sum) - (xr[labels[i]] - mx);
  }
  out.data()[0] = acc / double(m);
  return out;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar");
  if (!loss.requires_grad())
    throw StateError("backward: loss does not depend on any trainable tensor");
  // Postorder over the node DAG, then reverse sweep. Node pointers identify
  // shared subgraphs.
  std::vector<Tensor> order;
  std::unordered_set<const GraphNode*> seen;
  std::vector<std::pair<Tensor, std::size_t>> stack;
  stack.emplace_back(loss, 0);
  if (loss.node) seen.insert(loss.node.get());
  while (!stack.empty()) {
    auto& [t, idx] = stack.back();
    if (!t.node || idx >= t.node->parents.size()) {
      if (t.node) order.push_back(t);
      stack.pop_back();
      continue;
    }
    Tensor p = t.node->parents[idx++];
    if (p.node && !seen.count(p.node.get())) {
      seen.insert(p.node.get());
      stack.emplace_back(p, 0);
    }
  }
  const_cast<Tensor&>(loss).grad()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) it->node->backward(*it);
}

// ---- parameters and optimizer ----

Tensor& ParamGroup::add(const std::string& name, Tensor t) {
  if (!t.requires_grad()) throw StateError("ParamGroup: '" + name + "' is not trainable");
  auto [it, inserted] = params_.emplace(name, std::move(t));
  if (!inserted) throw StateError("ParamGroup: duplicate parameter '" + name + "'");
  return it->second;
}

Tensor& ParamGroup::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw StateError("ParamGroup: unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamGroup::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw StateError("ParamGroup: unknown parameter '" + name + "'");
  return it->second;
}

bool ParamGroup::contains(const std::string& name) const { return params_.count(name) > 0; }

void ParamGroup::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

std::uint64_t ParamGroup::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : params_) {
    h = fnv1a64(name.data(), name.size(), h);
    std::uint64_t c = t.checksum();
    h = fnv1a64(&c, sizeof(c), h);
  }
  return h;
}

AdamW::AdamW(ParamGroup& params, AdamWConfig cfg) : params_(params), cfg_(cfg) {
  for (const auto& [name, t] : params_.all()) {
    m_[name].assign(t.numel(), 0.0);
    v_[name].assign(t.numel(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (auto& [name, p] : params_.all()) {
    const auto& g = p.grad();
    if (g.size() != p.numel()) throw StateError("AdamW: missing gradient for '" + name + "'");
    auto& m = m_.at(name);
    auto& v = v_.at(name);
    auto& w = p.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
  }
}

void AdamW::zero_grad() { params_.zero_grads(); }

double grad_check(const std::function<Tensor()>& f, ParamGroup& params, double eps) {
  params.zero_grads();
  Tensor loss = f();
  if (!std::isfinite(loss.data()[0])) throw NumericError("grad_check: non-finite loss");
  backward(loss);
  std::map<std::string, std::vector<double>> analytic;
  for (const auto& [name, t] : params.all()) analytic[name] = t.grad();

  double worst = 0.0;
  for (auto& [name, t] : params.all()) {
    auto& w = t.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      double saved = w[i];
      w[i] = saved + eps;
      double fp = f().data()[0];
      w[i] = saved - eps;
      double fm = f().data()[0];
      w[i] = saved;
      double numeric = (fp - fm) / (2.0 * eps);
      double a = analytic.at(name)[i];
      double rel = std::fabs(a - numeric) /
                   std::max({std::fabs(a), std::fabs(numeric), 1e-3});
      worst = std::max(worst, rel);
    }
  }
  params.zero_grads();
  return worst;
}

}  // namespace fedmobi
