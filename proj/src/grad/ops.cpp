#include "deepap/grad/ops.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "deepap/errors.h"

namespace deepap::grad {

namespace {

// C (+)= op(A) op(B) with op(A) m x k and op(B) k x n, all row-major. Every
// output entry sums over k in index order, so results do not depend on buffer
// alignment or vector width.
void gemm(const double* a, bool trans_a, const double* b, bool trans_b, double* c, std::size_t m, std::size_t n,
          std::size_t k, bool accumulate) {
  std::vector<double> bt;
  if (trans_b) {
    bt.resize(k * n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    }
    b = bt.data();
  }
  std::vector<double> at;
  if (trans_a) {
    at.resize(m * k);
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t i = 0; i < m; ++i) at[i * k + p] = a[p * m + i];
    }
    a = at.data();
  }
  std::vector<double> buffer(accumulate ? n : 0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = accumulate ? buffer.data() : c + i * n;
    const double* arow = a + i * k;
    // First term assigns, so the row needs no zeroing.
    const double a0 = k > 0 ? arow[0] : 0.0;
    for (std::size_t j = 0; j < n; ++j) row[j] = k > 0 ? a0 * b[j] : 0.0;
    for (std::size_t p = 1; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
    if (accumulate) {
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += row[j];
    }
  }
}

thread_local KinkMonitor* g_monitor = nullptr;

const std::vector<double>& value_of(const Node& self, std::size_t parent) {
  return self.parents[parent]->value;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Output shape of a broadcast binary op. Operand flat index = output flat
// index modulo operand size, which holds for every supported broadcast form.
Shape broadcast_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.size() == 1 || is_suffix(b.shape(), a.shape())) return a.shape();
  if (a.size() == 1 || is_suffix(a.shape(), b.shape())) return b.shape();
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                   shape_string(b.shape()));
}

// Calls f(i, ia, ib) for every output index i, where ia = i % na and
// ib = i % nb; one of na, nb equals n and the other divides it.
template <typename F>
void broadcast_loop(std::size_t n, std::size_t na, std::size_t nb, F&& f) {
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
  } else if (na == n) {
    for (std::size_t base = 0; base < n; base += nb) {
      for (std::size_t j = 0; j < nb; ++j) f(base + j, base + j, j);
    }
  } else {
    for (std::size_t base = 0; base < n; base += na) {
      for (std::size_t j = 0; j < na; ++j) f(base + j, j, base + j);
    }
  }
}

template <typename Fwd, typename Da, typename Db>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
  Shape out_shape = broadcast_shape(op, a, b);
  const std::size_t n = shape_size(out_shape);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(n);
  broadcast_loop(n, a.size(), b.size(), [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(av[ia], bv[ib]); });
  return make_result(op, std::move(out_shape), std::move(out), {a, b},
                     [da, db](const Node& self, std::span<const double> g, std::span<std::vector<double>*> pg) {
                       const auto& x = value_of(self, 0);
                       const auto& y = value_of(self, 1);
                       if (pg[0]) {
                         double* gx = pg[0]->data();
                         broadcast_loop(g.size(), x.size(), y.size(), [&](std::size_t i, std::size_t ix, std::size_t iy) {
                           gx[ix] += g[i] * da(x[ix], y[iy]);
                         });
                       }
                       if (pg[1]) {
                         double* gy = pg[1]->data();
                         broadcast_loop(g.size(), x.size(), y.size(), [&](std::size_t i, std::size_t ix, std::size_t iy) {
                           gy[iy] += g[i] * db(x[ix], y[iy]);
                         });
                       }
                     });
}

// Elementwise map whose derivative is expressed through the output value.
template <typename Fwd, typename DerivFromOut>
Tensor unary_out(const char* op, const Tensor& a, Fwd fwd, DerivFromOut deriv) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return make_result(op, a.shape(), std::move(out), {a},
                     [deriv](const Node& self, std::span<const double> g, std::span<std::vector<double>*> pg) {
                       auto& gx = *pg[0];
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(self.value[i]);
                     });
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

}  // namespace

KinkMonitor::KinkMonitor() : min_distance_(std::numeric_limits<double>::infinity()), previous_(g_monitor) {
  g_monitor = this;
}

KinkMonitor::~KinkMonitor() { g_monitor = previous_; }

KinkMonitor* KinkMonitor::active() { return g_monitor; }

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  gemm(a.values().data(), false, b.values().data(), false, out.data(), m, n, k, false);
  return make_result("matmul", {m, n}, std::move(out), {a, b},
                     [m, k, n](const Node& self, std::span<const double> g, std::span<std::vector<double>*> pg) {
                       if (pg[0]) gemm(g.data(), false, value_of(self, 1).data(), true, pg[0]->data(), m, k, n, true);
                       if (pg[1]) gemm(value_of(self, 0).data(), true, g.data(), false, pg[1]->data(), k, n, m, true);
                     });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require_rank("bmm", a, 3);
  require_rank("bmm", b, 3);
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(0) != batch || b.dim(1) != k) {
    throw ShapeError("bmm: incompatible " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    gemm(a.values().data() + i * m * k, false, b.values().data() + i * k * n, false, out.data() + i * m * n, m, n, k,
         false);
  }
  return make_result("bmm", {batch, m, n}, std::move(out), {a, b},
                     [batch, m, k, n](const Node& self, std::span<const double> g, std::span<std::vector<double>*> pg) {
                       const auto& av = value_of(self, 0);
                       const auto& bv = value_of(self, 1);
                       for (std::size_t i = 0; i < batch; ++i) {
                         const double* G = g.data() + i * m * n;
                         if (pg[0]) gemm(G, false, bv.data() + i * k * n, true, pg[0]->data() + i * m * k, m, k, n, true);
                         if (pg[1]) gemm(av.data() + i * m * k, true, G, false, pg[1]->data() + i * k * n, k, n, m, true);
                       }
                     });
}

Tensor transpose_last2(const Tensor& a) {
  if (a.rank() != 2 && a.rank() != 3) throw ShapeError("transpose_last2: rank must be 2 or 3");
  const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t r = a.dim(a.rank() - 2), c = a.dim(a.rank() - 1);
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  std::vector<double> out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t x = 0; x < r; ++x) {
      for (std::size_t y = 0; y < c; ++y) out[i * r * c + y * r + x] = av[i * r * c + x * c + y];
    }
  }
  return make_result("transpose", std::move(shape), std::move(out), {a},
                     [batch, r, c](const Node&, std::span<const double> g, std::span<std::vector<double>*> pg) {
                       auto& gx = *pg[0];
                       for (std::size_t i = 0; i < batch; ++i) {
                         for (std::size_t x = 0; x < r; ++x) {
                           for (std::size_t y = 0; y < c; ++y) gx[i * r * c + x * c + y] += g[i * r * c + y * r + x];
                         }
                       }
                     });
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
  return make_result("scale", a.shape(), std::move(out), {a},
                     [factor](const Node&, std::span<const double> g, std::span<std::vector<double>*> pg) {
                       auto& gx = *pg[0];
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
                     });
}

Tensor add_scalar(const Tensor& a, double offset) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + offset;
  return make_result("add_scalar", a.shape(), std::move(out), {a},
                     [](const Node&, std::span<const double> g, std::span<std::vector<double>*> pg) {
                       auto& gx = *pg[0];
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     });
}

Tensor one_minus(const Tensor& a) {
  return unary_out("one_minus", a, [](double x) { return 1.0 - x; }, [](double) { return -1.0; });
}

Tensor square(const Tensor& a) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * av[i];
  return make_result("square", a.shape(), std::move(out), {a},
                     [](const Node& self, std::span<const double> g, std::span<std::vector<double>*> pg) {
                       const auto& x = value_of(self, 0);
                       auto& gx = *pg[0];
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2.0 * x[i] * g[i];
                     });
}

Tensor relu(const Tensor& a) {
  if (auto* monitor = KinkMonitor::active()) {
    for (double v : a.values()) monitor->observe(std::abs(v));
  }
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return make_result("relu", a.shape(), std::move(out), {a},
                     [](const Node& self, std::span<const double> g, std::span<std::vector<double>*> pg) {
                       const auto& x = value_of(self, 0);
                       auto& gx = *pg[0];
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (x[i] > 0.0) gx[i] += g[i];
                       }
                     });
}

Tensor tanh(const Tensor& a) {
  return unary_out("tanh", a, [](double x) { return std::tanh(x); }, [](double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_out(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double y) { return y * (1.0 - y); });
}

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result("sum", {1}, {s}, {a},
                     [](const Node&, std::span<const double> g, std::span<std::vector<double>*> pg) {
                       for (auto& v : *pg[0]) v += g[0];
                     });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor softmax_last(const Tensor& a) {
  if (a.rank() == 0 || a.shape().back() == 0) throw ShapeError("softmax_last: empty axis");
  const std::size_t width = a.shape().back();
  const std::size_t rows = a.size() / width;
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * width;
    double* y = out.data() + r * width;
    const double mx = *std::max_element(x, x + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) total += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < width; ++j) y[j] /= total;
  }
  return make_result("softmax", a.shape(), std::move(out), {a},
                     [rows, width](const Node& self, std::span<const double> g, std::span<std::vector<double>*> pg) {
                       auto& gx = *pg[0];
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = self.value.data() + r * width;
                         const double* gr = g.data() + r * width;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < width; ++j) dot += gr[j] * y[j];
                         for (std::size_t j = 0; j < width; ++j) gx[r * width + j] += y[j] * (gr[j] - dot);
                       }
                     });
}

// ---- structure ------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result("reshape", std::move(shape), std::move(out), {a},
                     [](const Node&, std::span<const double> g, std::span<std::vector<double>*> pg) {
                       auto& gx = *pg[0];
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     });
}

Tensor concat_last(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  const Shape& first = parts[0].shape();
  const std::size_t rows = parts[0].size() / first.back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size() || !std::equal(first.begin(), first.end() - 1, p.shape().begin())) {
      throw ShapeError("concat_last: leading extents differ, " + shape_string(first) + " vs " +
                       shape_string(p.shape()));
    }
    widths.push_back(p.shape().back());
    total += p.shape().back();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    }
    offset += widths[k];
  }
  Shape shape = first;
  shape.back() = total;
  return make_result("concat", std::move(shape), std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                     [rows, total, widths](const Node&, std::span<const double> g, std::span<std::vector<double>*> pg) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         if (pg[k]) {
                           auto& gx = *pg[k];
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t j = 0; j < widths[k]; ++j) gx[r * widths[k] + j] += g[r * total + off + j];
                           }
                         }
                         off += widths[k];
                       }
                     });
}

Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end) {
  const std::size_t width = a.shape().back();
  if (begin >= end || end > width) {
    throw ShapeError("slice_last: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") outside width " + std::to_string(width));
  }
  const std::size_t rows = a.size() / width, w = end - begin;
  const auto av = a.values();
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(av.data() + r * width + begin, w, out.data() + r * w);
  Shape shape = a.shape();
  shape.back() = w;
  return make_result("slice", std::move(shape), std::move(out), {a},
                     [rows, width, begin, w](const Node&, std::span<const double> g, std::span<std::vector<double>*> pg) {
                       auto& gx = *pg[0];
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < w; ++j) gx[r * width + begin + j] += g[r * w + j];
                       }
                     });
}

Tensor stack_steps(std::span<const Tensor> steps) {
  if (steps.empty()) throw ShapeError("stack_steps: no inputs");
  const Shape& first = steps[0].shape();
  if (first.size() != 2) throw ShapeError("stack_steps: steps must be [batch, width]");
  for (const auto& s : steps) {
    if (s.shape() != first) throw ShapeError("stack_steps: step shapes differ");
  }
  const std::size_t batch = first[0], width = first[1], len = steps.size();
  std::vector<double> out(batch * len * width);
  for (std::size_t t = 0; t < len; ++t) {
    const auto sv = steps[t].values();
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(sv.data() + b * width, width, out.data() + (b * len + t) * width);
    }
  }
  return make_result("stack", {batch, len, width}, std::move(out), std::vector<Tensor>(steps.begin(), steps.end()),
                     [batch, len, width](const Node&, std::span<const double> g, std::span<std::vector<double>*> pg) {
                       for (std::size_t t = 0; t < len; ++t) {
                         if (!pg[t]) continue;
                         auto& gx = *pg[t];
                         for (std::size_t b = 0; b < batch; ++b) {
                           for (std::size_t j = 0; j < width; ++j) gx[b * width + j] += g[(b * len + t) * width + j];
                         }
                       }
                     });
}

Tensor select_step(const Tensor& a, std::size_t step) {
  require_rank("select_step", a, 3);
  const std::size_t batch = a.dim(0), len = a.dim(1), width = a.dim(2);
  if (step >= len) throw ShapeError("select_step: step out of range");
  const auto av = a.values();
  std::vector<double> out(batch * width);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(av.data() + (b * len + step) * width, width, out.data() + b * width);
  }
  return make_result("select_step", {batch, width}, std::move(out), {a},
                     [batch, len, width, step](const Node&, std::span<const double> g, std::span<std::vector<double>*> pg) {
                       auto& gx = *pg[0];
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t j = 0; j < width; ++j) gx[(b * len + step) * width + j] += g[b * width + j];
                       }
                     });
}

// ---- convolution / pooling ------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t batch, in_ch, height, width, out_ch, kh, kw, pad, out_h, out_w;
  std::size_t patch() const { return in_ch * kh * kw; }
  std::size_t positions() const { return out_h * out_w; }
};

// Column matrix [in_ch*kh*kw, out_h*out_w] for one image.
void im2col(const double* image, const ConvGeometry& g, double* col) {
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = col + ((c * g.kh + ki) * g.kw + kj) * g.positions();
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const long ii = static_cast<long>(oi + ki) - static_cast<long>(g.pad);
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const long jj = static_cast<long>(oj + kj) - static_cast<long>(g.pad);
            const bool inside = ii >= 0 && jj >= 0 && ii < static_cast<long>(g.height) && jj < static_cast<long>(g.width);
            row[oi * g.out_w + oj] = inside ? image[(c * g.height + ii) * g.width + jj] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, double* image_grad) {
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = col + ((c * g.kh + ki) * g.kw + kj) * g.positions();
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const long ii = static_cast<long>(oi + ki) - static_cast<long>(g.pad);
          if (ii < 0 || ii >= static_cast<long>(g.height)) continue;
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const long jj = static_cast<long>(oj + kj) - static_cast<long>(g.pad);
            if (jj < 0 || jj >= static_cast<long>(g.width)) continue;
            image_grad[(c * g.height + ii) * g.width + jj] += row[oi * g.out_w + oj];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t pad) {
  require_rank("conv2d", input, 4);
  require_rank("conv2d", kernel, 4);
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.in_ch = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.out_ch = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  g.pad = pad;
  if (kernel.dim(1) != g.in_ch) throw ShapeError("conv2d: kernel input channels differ from input");
  if (bias.size() != g.out_ch) throw ShapeError("conv2d: bias size differs from output channels");
  if (g.kh > g.height + 2 * pad || g.kw > g.width + 2 * pad) {
    throw ShapeError("conv2d: kernel " + shape_string(kernel.shape()) + " larger than input " +
                     shape_string(input.shape()));
  }
  g.out_h = g.height + 2 * pad - g.kh + 1;
  g.out_w = g.width + 2 * pad - g.kw + 1;

  const std::size_t image_size = g.in_ch * g.height * g.width;
  const std::size_t out_image = g.out_ch * g.positions();
  std::vector<double> out(g.batch * out_image);
  std::vector<double> col(g.patch() * g.positions());
  const auto bv = bias.values();
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(input.values().data() + b * image_size, g, col.data());
    double* o_img = out.data() + b * out_image;
    gemm(kernel.values().data(), false, col.data(), false, o_img, g.out_ch, g.positions(), g.patch(), false);
    for (std::size_t o = 0; o < g.out_ch; ++o) {
      for (std::size_t q = 0; q < g.positions(); ++q) o_img[o * g.positions() + q] += bv[o];
    }
  }
  return make_result(
      "conv2d", {g.batch, g.out_ch, g.out_h, g.out_w}, std::move(out), {input, kernel, bias},
      [g, image_size, out_image](const Node& self, std::span<const double> grad, std::span<std::vector<double>*> pg) {
        const auto& in = value_of(self, 0);
        const auto& kv = value_of(self, 1);
        std::vector<double> col(g.patch() * g.positions());
        std::vector<double> dcol(pg[0] ? col.size() : 0);
        for (std::size_t b = 0; b < g.batch; ++b) {
          const double* G = grad.data() + b * out_image;
          if (pg[1]) {
            im2col(in.data() + b * image_size, g, col.data());
            gemm(G, false, col.data(), true, pg[1]->data(), g.out_ch, g.patch(), g.positions(), true);
          }
          if (pg[2]) {
            for (std::size_t o = 0; o < g.out_ch; ++o) {
              double total = 0.0;
              for (std::size_t q = 0; q < g.positions(); ++q) total += G[o * g.positions() + q];
              (*pg[2])[o] += total;
            }
          }
          if (pg[0]) {
            gemm(kv.data(), true, G, false, dcol.data(), g.patch(), g.positions(), g.out_ch, false);
            col2im(dcol.data(), g, pg[0]->data() + b * image_size);
          }
        }
      });
}

namespace {

template <bool Max>
Tensor pool2d(const char* op, const Tensor& input, std::size_t window, std::size_t stride) {
  require_rank(op, input, 4);
  if (window == 0 || stride == 0) throw ShapeError(std::string(op) + ": window and stride must be positive");
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  if (window > h || window > w) {
    throw ShapeError(std::string(op) + ": window larger than input " + shape_string(input.shape()));
  }
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  const auto iv = input.values();
  std::vector<double> out(planes * oh * ow);
  std::vector<std::size_t> argmax(Max ? out.size() : 0);
  auto* monitor = KinkMonitor::active();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t o = (p * oh + i) * ow + j;
        if constexpr (Max) {
          std::size_t best = (p * h + i * stride) * w + j * stride;
          double runner = -std::numeric_limits<double>::infinity();
          for (std::size_t di = 0; di < window; ++di) {
            for (std::size_t dj = 0; dj < window; ++dj) {
              const std::size_t idx = (p * h + i * stride + di) * w + j * stride + dj;
              if (idx == best) continue;
              if (iv[idx] > iv[best]) {
                runner = iv[best];
                best = idx;
              } else if (iv[idx] > runner) {
                runner = iv[idx];
              }
            }
          }
          // Ties among exact zeros (e.g. relu-clipped units) carry no gradient
          // either way and are not kinks.
          if (monitor && window > 1 && iv[best] != 0.0) monitor->observe(iv[best] - runner);
          out[o] = iv[best];
          argmax[o] = best;
        } else {
          double s = 0.0;
          for (std::size_t di = 0; di < window; ++di) {
            for (std::size_t dj = 0; dj < window; ++dj) s += iv[(p * h + i * stride + di) * w + j * stride + dj];
          }
          out[o] = s / static_cast<double>(window * window);
        }
      }
    }
  }
  Shape shape{input.dim(0), input.dim(1), oh, ow};
  return make_result(op, std::move(shape), std::move(out), {input},
                     [argmax = std::move(argmax), planes, h, w, oh, ow, window, stride](
                         const Node&, std::span<const double> g, std::span<std::vector<double>*> pg) {
                       auto& gx = *pg[0];
                       if constexpr (Max) {
                         for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
                       } else {
                         const double inv = 1.0 / static_cast<double>(window * window);
                         for (std::size_t p = 0; p < planes; ++p) {
                           for (std::size_t i = 0; i < oh; ++i) {
                             for (std::size_t j = 0; j < ow; ++j) {
                               const double share = g[(p * oh + i) * ow + j] * inv;
                               for (std::size_t di = 0; di < window; ++di) {
                                 for (std::size_t dj = 0; dj < window; ++dj) {
                                   gx[(p * h + i * stride + di) * w + j * stride + dj] += share;
                                 }
                               }
                             }
                           }
                         }
                       }
                     });
}

}  // namespace

Tensor max_pool2d(const Tensor& input, std::size_t window, std::size_t stride) {
  return pool2d<true>("max_pool2d", input, window, stride);
}

Tensor avg_pool2d(const Tensor& input, std::size_t window, std::size_t stride) {
  return pool2d<false>("avg_pool2d", input, window, stride);
}

// ---- normalization --------------------------------------------------------

namespace {

// Shared backward for standardization over groups of `count` elements spaced
// by `stride`: dx = (g - mean(g) - y * mean(g * y)) / sigma.
void standardize_backward(std::span<const double> y, std::span<const double> g, std::span<const double> inv_sigma,
                          std::size_t groups, std::size_t count, std::size_t group_step, std::size_t elem_step,
                          std::vector<double>& gx) {
  for (std::size_t k = 0; k < groups; ++k) {
    double mg = 0.0, mgy = 0.0;
    for (std::size_t j = 0; j < count; ++j) {
      const std::size_t idx = k * group_step + j * elem_step;
      mg += g[idx];
      mgy += g[idx] * y[idx];
    }
    mg /= static_cast<double>(count);
    mgy /= static_cast<double>(count);
    for (std::size_t j = 0; j < count; ++j) {
      const std::size_t idx = k * group_step + j * elem_step;
      gx[idx] += (g[idx] - mg - y[idx] * mgy) * inv_sigma[k];
    }
  }
}

}  // namespace

Tensor layer_norm(const Tensor& a, double eps) {
  const std::size_t width = a.shape().back();
  if (width < 2) throw ShapeError("layer_norm: feature axis must have at least 2 entries");
  const std::size_t rows = a.size() / width;
  const auto av = a.values();
  std::vector<double> out(av.size());
  std::vector<double> inv_sigma(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += x[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(width);
    inv_sigma[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = (x[j] - mu) * inv_sigma[r];
  }
  return make_result("layer_norm", a.shape(), std::move(out), {a},
                     [inv_sigma = std::move(inv_sigma), rows, width](const Node& self, std::span<const double> g,
                                                                     std::span<std::vector<double>*> pg) {
                       standardize_backward(self.value, g, inv_sigma, rows, width, width, 1, *pg[0]);
                     });
}

Tensor batch_norm(const Tensor& a, double eps, std::vector<double>* batch_mean, std::vector<double>* batch_var) {
  require_rank("batch_norm", a, 2);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (rows < 2) throw ShapeError("batch_norm: batch must hold at least 2 rows");
  const auto av = a.values();
  std::vector<double> mu(cols, 0.0), var(cols, 0.0), inv_sigma(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) mu[c] += av[r * cols + c];
  }
  for (auto& m : mu) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = av[r * cols + c] - mu[c];
      var[c] += d * d;
    }
  }
  for (std::size_t c = 0; c < cols; ++c) {
    var[c] /= static_cast<double>(rows);
    inv_sigma[c] = 1.0 / std::sqrt(var[c] + eps);
  }
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = (av[r * cols + c] - mu[c]) * inv_sigma[c];
  }
  if (batch_mean) *batch_mean = mu;
  if (batch_var) *batch_var = var;
  return make_result("batch_norm", a.shape(), std::move(out), {a},
                     [inv_sigma = std::move(inv_sigma), rows, cols](const Node& self, std::span<const double> g,
                                                                    std::span<std::vector<double>*> pg) {
                       standardize_backward(self.value, g, inv_sigma, cols, rows, 1, cols, *pg[0]);
                     });
}

}  // namespace deepap::grad
