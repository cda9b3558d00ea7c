#include "fixformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>

#include "fixformer/util.hpp"

namespace fixformer {

namespace {

bool tracing(std::initializer_list<const Tensor*> inputs) {
  if (!GradTape::active()) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

std::vector<double>& acc(const std::shared_ptr<TensorImpl>& impl) {
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
  return impl->grad;
}

bool wants(const std::shared_ptr<TensorImpl>& impl) { return impl->requires_grad; }

void require_matrix(const Tensor& t, const char* op) {
  if (!t.defined() || !t.is_matrix()) {
    throw DimensionError(std::string(op) + ": expected a 2-d tensor, got " +
                         (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
  }
}

void mm_row(const double* a, const double* b, double* c, std::size_t i, std::size_t k,
            std::size_t n) {
  const double* ai = a + i * k;
  double* ci = c + i * n;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = ai[p];
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
  }
}

// c[m x n] += a[m x k] * b[k x n]. Rows are independent slots, so splitting
// them across workers cannot change any result bit.
void mm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n) {
  if (m >= 2 && m * k * n >= 32768) {
    parallel_for(m, [&](std::size_t i) { mm_row(a, b, c, i, k, n); });
  } else {
    for (std::size_t i = 0; i < m; ++i) mm_row(a, b, c, i, k, n);
  }
}

// c[m x k] += a[m x n] * b[k x n]^T
void mm_abt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += ai[j] * bp[j];
      ci[p] += s;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
void mm_atb_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.defined() || !b.defined() || a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         (a.defined() ? shape_str(a.shape()) : "<undefined>") + " vs " +
                         (b.defined() ? shape_str(b.shape()) : "<undefined>"));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out(Shape{m, n}, 0.0);
  mm_acc(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  guard_finite(out, "matmul");
  if (tracing({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    GradTape::active()->record("matmul", oi, [ai, bi, oi, m, k, n] {
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      if (wants(ai)) mm_abt_acc(g, bi->data.data(), acc(ai).data(), m, n, k);
      if (wants(bi)) mm_atb_acc(ai->data.data(), g, acc(bi).data(), m, k, n);
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out(Shape{n, m}, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
  if (tracing({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    GradTape::active()->record("transpose", oi, [ai, oi, m, n] {
      if (oi->grad.empty() || !wants(ai)) return;
      auto& ga = acc(ai);
      const double* g = oi->grad.data();
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < m; ++i) ga[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  if (x.cols() != w.cols()) {
    throw DimensionError("linear: input width " + shape_str(x.shape()) +
                         " does not match weight " + shape_str(w.shape()));
  }
  const std::size_t n = x.rows(), in = x.cols(), out_w = w.rows();
  if (b.defined() && b.size() != out_w) {
    throw DimensionError("linear: bias " + shape_str(b.shape()) + " does not match weight " +
                         shape_str(w.shape()));
  }
  Tensor out(Shape{n, out_w}, 0.0);
  mm_abt_acc(x.data().data(), w.data().data(), out.data().data(), n, in, out_w);
  if (b.defined()) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out_w; ++j) out.data()[i * out_w + j] += b.data()[j];
  }
  guard_finite(out, "linear");
  Tensor bias = b;
  if (tracing({&x, &w, &bias})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), wi = w.impl(), oi = out.impl();
    auto bi = b.defined() ? b.impl() : nullptr;
    GradTape::active()->record("linear", oi, [xi, wi, bi, oi, n, in, out_w] {
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      if (wants(xi)) mm_acc(g, wi->data.data(), acc(xi).data(), n, out_w, in);
      if (wants(wi)) mm_atb_acc(g, xi->data.data(), acc(wi).data(), n, out_w, in);
      if (bi && wants(bi)) {
        auto& gb = acc(bi);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < out_w; ++j) gb[j] += g[i * out_w + j];
      }
    });
  }
  return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
  check_same_shape(a, b, name);
  Tensor out(a.shape(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = fwd(a.data()[i], b.data()[i]);
  guard_finite(out, name);
  if (tracing({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    GradTape::active()->record(name, oi, [ai, bi, oi, bwd] {
      if (oi->grad.empty()) return;
      bwd(ai, bi, oi);
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](const std::shared_ptr<TensorImpl>& ai, const std::shared_ptr<TensorImpl>& bi,
         const std::shared_ptr<TensorImpl>& oi) {
        const auto& g = oi->grad;
        if (wants(ai)) {
          auto& ga = acc(ai);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (wants(bi)) {
          auto& gb = acc(bi);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](const std::shared_ptr<TensorImpl>& ai, const std::shared_ptr<TensorImpl>& bi,
         const std::shared_ptr<TensorImpl>& oi) {
        const auto& g = oi->grad;
        if (wants(ai)) {
          auto& ga = acc(ai);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (wants(bi)) {
          auto& gb = acc(bi);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](const std::shared_ptr<TensorImpl>& ai, const std::shared_ptr<TensorImpl>& bi,
         const std::shared_ptr<TensorImpl>& oi) {
        const auto& g = oi->grad;
        if (wants(ai)) {
          auto& ga = acc(ai);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
        }
        if (wants(bi)) {
          auto& gb = acc(bi);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
        }
      });
}

Tensor scale(const Tensor& a, double c) {
  if (!a.defined()) throw ContractError("scale: undefined tensor");
  Tensor out(a.shape(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
  guard_finite(out, "scale");
  if (tracing({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    GradTape::active()->record("scale", oi, [ai, oi, c] {
      if (oi->grad.empty() || !wants(ai)) return;
      auto& ga = acc(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i] * c;
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require_matrix(x, "add_bias");
  if (!b.defined() || b.size() != x.cols()) {
    throw DimensionError("add_bias: bias " + (b.defined() ? shape_str(b.shape()) : "<undefined>") +
                         " does not match " + shape_str(x.shape()));
  }
  const std::size_t n = x.rows(), d = x.cols();
  Tensor out(Shape{n, d}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.data()[i * d + j] = x.data()[i * d + j] + b.data()[j];
  guard_finite(out, "add_bias");
  if (tracing({&x, &b})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), bi = b.impl(), oi = out.impl();
    GradTape::active()->record("add_bias", oi, [xi, bi, oi, n, d] {
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      if (wants(xi)) {
        auto& gx = acc(xi);
        for (std::size_t i = 0; i < n * d; ++i) gx[i] += g[i];
      }
      if (wants(bi)) {
        auto& gb = acc(bi);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
      }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax");
  const std::size_t n = x.rows(), d = x.cols();
  Tensor out(Shape{n, d}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data().data() + i * d;
    double* oi = out.data().data() + i * d;
    double mx = xi[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, xi[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      sum += oi[j];
    }
    for (std::size_t j = 0; j < d; ++j) oi[j] /= sum;
  }
  guard_finite(out, "softmax");
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    GradTape::active()->record("softmax", oi, [xi, oi, n, d] {
      if (oi->grad.empty() || !wants(xi)) return;
      auto& gx = acc(xi);
      for (std::size_t i = 0; i < n; ++i) {
        const double* s = oi->data.data() + i * d;
        const double* g = oi->grad.data() + i * d;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += g[j] * s[j];
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += s[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

Tensor layernorm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_matrix(x, "layernorm");
  if (eps <= 0.0) throw ContractError("layernorm: eps must be positive");
  const std::size_t n = x.rows(), d = x.cols();
  if (!gain.defined() || gain.size() != d || !bias.defined() || bias.size() != d) {
    throw DimensionError("layernorm: gain/bias width does not match " + shape_str(x.shape()));
  }
  Tensor out(Shape{n, d}, 0.0);
  // Saved for backward: per-row inverse stddev and normalized values.
  auto inv = std::make_shared<std::vector<double>>(n);
  auto xhat = std::make_shared<std::vector<double>>(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data().data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xi[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xi[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double iv = 1.0 / std::sqrt(var + eps);
    (*inv)[i] = iv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xi[j] - mean) * iv;
      (*xhat)[i * d + j] = h;
      out.data()[i * d + j] = h * gain.data()[j] + bias.data()[j];
    }
  }
  guard_finite(out, "layernorm");
  if (tracing({&x, &gain, &bias})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
    GradTape::active()->record("layernorm", oi, [xi, gi, bi, oi, inv, xhat, n, d] {
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      if (wants(gi)) {
        auto& gg = acc(gi);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * (*xhat)[i * d + j];
      }
      if (wants(bi)) {
        auto& gb = acc(bi);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
      }
      if (wants(xi)) {
        auto& gx = acc(xi);
        for (std::size_t i = 0; i < n; ++i) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[i * d + j] * gi->data[j];
            m1 += dh;
            m2 += dh * (*xhat)[i * d + j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[i * d + j] * gi->data[j];
            gx[i * d + j] += (*inv)[i] * (dh - m1 - (*xhat)[i * d + j] * m2);
          }
        }
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  if (!x.defined()) throw ContractError("gelu: undefined tensor");
  static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  Tensor out(x.shape(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = v * 0.5 * (1.0 + std::erf(v * inv_sqrt2));
  }
  guard_finite(out, "gelu");
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    GradTape::active()->record("gelu", oi, [xi, oi] {
      if (oi->grad.empty() || !wants(xi)) return;
      static const double inv_sqrt2pi = 1.0 / std::sqrt(8.0 * std::atan(1.0));
      auto& gx = acc(xi);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const double v = xi->data[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = std::exp(-0.5 * v * v) * inv_sqrt2pi;
        gx[i] += oi->grad[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  if (!x.defined()) throw ContractError("sum: undefined tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  guard_finite(out, "sum");
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    GradTape::active()->record("sum", oi, [xi, oi] {
      if (oi->grad.empty() || !wants(xi)) return;
      auto& gx = acc(xi);
      const double g = oi->grad[0];
      for (double& v : gx) v += g;
    });
  }
  return out;
}

Tensor row_slice(const Tensor& x, std::size_t r0, std::size_t r1) {
  require_matrix(x, "row_slice");
  if (r0 >= r1 || r1 > x.rows()) {
    throw ContractError("row_slice: bad range [" + std::to_string(r0) + ", " +
                        std::to_string(r1) + ") for " + shape_str(x.shape()));
  }
  const std::size_t d = x.cols(), n = r1 - r0;
  Tensor out(Shape{n, d}, 0.0);
  std::copy_n(x.data().data() + r0 * d, n * d, out.data().data());
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    GradTape::active()->record("row_slice", oi, [xi, oi, r0, n, d] {
      if (oi->grad.empty() || !wants(xi)) return;
      auto& gx = acc(xi);
      for (std::size_t i = 0; i < n * d; ++i) gx[r0 * d + i] += oi->grad[i];
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts");
  std::size_t d = 0, total = 0;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_rows");
    if (d == 0) d = p.cols();
    if (p.cols() != d) {
      throw DimensionError("concat_rows: width mismatch " + shape_str(p.shape()) +
                           " vs expected cols " + std::to_string(d));
    }
    total += p.rows();
  }
  Tensor out(Shape{total, d}, 0.0);
  std::size_t r = 0;
  bool grad = false;
  for (const Tensor& p : parts) {
    std::copy_n(p.data().data(), p.size(), out.data().data() + r * d);
    r += p.rows();
    grad = grad || p.requires_grad();
  }
  if (GradTape::active() && grad) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorImpl>> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) impls.push_back(p.impl());
    auto oi = out.impl();
    GradTape::active()->record("concat_rows", oi, [impls, oi, d] {
      if (oi->grad.empty()) return;
      std::size_t r = 0;
      for (const auto& pi : impls) {
        const std::size_t sz = pi->data.size();
        if (wants(pi)) {
          auto& gp = acc(pi);
          for (std::size_t i = 0; i < sz; ++i) gp[i] += oi->grad[r * d + i];
        }
        r += sz / d;
      }
    });
  }
  return out;
}

Tensor col_slice(const Tensor& x, std::size_t c0, std::size_t c1) {
  require_matrix(x, "col_slice");
  if (c0 >= c1 || c1 > x.cols()) {
    throw ContractError("col_slice: bad range [" + std::to_string(c0) + ", " +
                        std::to_string(c1) + ") for " + shape_str(x.shape()));
  }
  const std::size_t n = x.rows(), d = x.cols(), w = c1 - c0;
  Tensor out(Shape{n, w}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(x.data().data() + i * d + c0, w, out.data().data() + i * w);
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    GradTape::active()->record("col_slice", oi, [xi, oi, c0, n, d, w] {
      if (oi->grad.empty() || !wants(xi)) return;
      auto& gx = acc(xi);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) gx[i * d + c0 + j] += oi->grad[i * w + j];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  std::size_t n = 0, total = 0;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_cols");
    if (n == 0) n = p.rows();
    if (p.rows() != n) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape()) +
                           " vs expected rows " + std::to_string(n));
    }
    total += p.cols();
  }
  Tensor out(Shape{n, total}, 0.0);
  std::size_t c = 0;
  bool grad = false;
  for (const Tensor& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(p.data().data() + i * w, w, out.data().data() + i * total + c);
    c += w;
    grad = grad || p.requires_grad();
  }
  if (GradTape::active() && grad) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorImpl>> impls;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
      impls.push_back(p.impl());
      widths.push_back(p.cols());
    }
    auto oi = out.impl();
    GradTape::active()->record("concat_cols", oi, [impls, widths, oi, n, total] {
      if (oi->grad.empty()) return;
      std::size_t c = 0;
      for (std::size_t p = 0; p < impls.size(); ++p) {
        const std::size_t w = widths[p];
        if (wants(impls[p])) {
          auto& gp = acc(impls[p]);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += oi->grad[i * total + c + j];
        }
        c += w;
      }
    });
  }
  return out;
}

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels) {
  require_matrix(logits, "cross_entropy");
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         shape_str(logits.shape()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw ContractError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(c) + ")");
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.data().data() + i * c;
    double mx = z[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(z[j] - mx);
    total += mx + std::log(sum) - z[labels[i]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  guard_finite(out, "cross_entropy");
  if (tracing({&logits})) {
    out.set_requires_grad(true);
    auto zi = logits.impl(), oi = out.impl();
    auto lbl = std::make_shared<std::vector<int>>(labels);
    GradTape::active()->record("cross_entropy", oi, [zi, oi, lbl, n, c] {
      if (oi->grad.empty() || !wants(zi)) return;
      const double g = oi->grad[0] / static_cast<double>(n);
      auto& gz = acc(zi);
      for (std::size_t i = 0; i < n; ++i) {
        const double* z = zi->data.data() + i * c;
        double mx = z[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(z[j] - mx);
        for (std::size_t j = 0; j < c; ++j) {
          double p = std::exp(z[j] - mx) / sum;
          if (static_cast<std::size_t>((*lbl)[i]) == j) p -= 1.0;
          gz[i * c + j] += g * p;
        }
      }
    });
  }
  return out;
}

}  // namespace fixformer
