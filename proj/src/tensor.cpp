#include "mmfn/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "kernels.hpp"
#include "mmfn/errors.hpp"

namespace mmfn {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool t_grad_enabled = true;

using detail::Node;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

Node& in(Node& self, std::size_t i) { return *self.inputs[i]; }

bool wants(Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }

std::vector<double>& grad_of(Node& self, std::size_t i) {
  Node& n = *self.inputs[i];
  n.ensure_grad();
  return n.grad;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw ContractError(std::string("mutable_data on non-leaf tensor produced by ") + op_name());
  return node_->data;
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor::from(shape(), node_->data, false); }

Tensor Tensor::clone_leaf(bool requires_grad) const { return Tensor::from(shape(), node_->data, requires_grad); }

Tensor make_result(Shape shape, std::vector<double> data, const char* op, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  bool any = false;
  if (t_grad_enabled) {
    for (const auto& t : inputs) any = any || t.requires_grad();
  }
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.shared());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

// ---------------------------------------------------------------- linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  kernels::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n, false);
  return make_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    Node& A = in(self, 0);
    Node& B = in(self, 1);
    if (A.requires_grad) {
      std::vector<double> bt(k * n);
      kernels::transpose_into(B.data.data(), bt.data(), k, n);
      A.ensure_grad();
      kernels::gemm_nn(g, bt.data(), A.grad.data(), m, n, k, true);
    }
    if (B.requires_grad) {
      B.ensure_grad();
      kernels::gemm_tn_acc(A.data.data(), g, B.grad.data(), m, k, n);
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  kernels::transpose_into(a.data().data(), out.data(), m, n);
  return make_result({n, m}, std::move(out), "transpose", {a}, [m, n](Node& self) {
    auto& ga = grad_of(self, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.cols();
  if (bias.numel() != n)
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  const std::size_t rows = x.rows();
  std::vector<double> out(x.data().begin(), x.data().end());
  const double* b = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += b[j];
  return make_result(x.shape(), std::move(out), "add_bias", {x, bias}, [rows, n](Node& self) {
    if (wants(self, 0)) {
      auto& gx = grad_of(self, 0);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& gb = grad_of(self, 1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[r * n + j];
    }
  });
}

// ---------------------------------------------------------------- elementwise

namespace {

template <class Fwd, class Bwd>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Bwd dfdx) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  return make_result(a.shape(), std::move(out), op, {a}, [dfdx](Node& self) {
    auto& ga = grad_of(self, 0);
    const auto& x = in(self, 0).data;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * dfdx(x[i], self.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), "add", {a, b}, [](Node& self) {
    for (std::size_t s = 0; s < 2; ++s) {
      if (!wants(self, s)) continue;
      auto& g = grad_of(self, s);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(a.shape(), std::move(out), "sub", {a, b}, [](Node& self) {
    if (wants(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), "mul", {a, b}, [](Node& self) {
    const auto& x = in(self, 0).data;
    const auto& y = in(self, 1).data;
    if (wants(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
    }
    if (wants(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  return make_result(a.shape(), std::move(out), "div", {a, b}, [](Node& self) {
    const auto& y = in(self, 1).data;
    if (wants(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / y[i];
    }
    if (wants(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.data[i] / y[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      a, "add_scalar", [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor log1p(const Tensor& a) {
  return unary(
      a, "log1p", [](double x) { return std::log1p(x); }, [](double x, double) { return 1.0 / (1.0 + x); });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a, "softplus", [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) {
        // logistic sigmoid, evaluated on the stable side
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Tensor gelu(const Tensor& a) {
  return unary(
      a, "gelu", [](double x) { return 0.5 * x * std::erfc(-x * kInvSqrt2); },
      [](double x, double) {
        const double cdf = 0.5 * std::erfc(-x * kInvSqrt2);
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      });
}

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({1}, {s}, "sum", {a}, [](Node& self) {
    auto& g = grad_of(self, 0);
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean_rows(const Tensor& a) {
  const std::size_t rows = a.rows(), n = a.cols();
  if (rows == 0) throw DimensionError("mean_rows: empty input");
  std::vector<double> out(n, 0.0);
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[j] += x[r * n + j];
  const double inv = 1.0 / static_cast<double>(rows);
  for (double& v : out) v *= inv;
  return make_result({1, n}, std::move(out), "mean_rows", {a}, [rows, n, inv](Node& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += self.grad[j] * inv;
  });
}

Tensor segment_mean_rows(const Tensor& a, std::span<const std::size_t> lengths) {
  const std::size_t n = a.cols();
  std::size_t total = 0;
  for (std::size_t l : lengths) {
    if (l == 0) throw DimensionError("segment_mean_rows: empty segment");
    total += l;
  }
  if (lengths.empty() || total != a.rows())
    throw DimensionError("segment_mean_rows: segments cover " + std::to_string(total) + " of " +
                         std::to_string(a.rows()) + " rows");
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  std::vector<double> out(lens.size() * n, 0.0);
  const auto x = a.data();
  std::size_t r0 = 0;
  for (std::size_t s = 0; s < lens.size(); ++s) {
    double* o = out.data() + s * n;
    for (std::size_t r = r0; r < r0 + lens[s]; ++r)
      for (std::size_t j = 0; j < n; ++j) o[j] += x[r * n + j];
    const double inv = 1.0 / static_cast<double>(lens[s]);
    for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
    r0 += lens[s];
  }
  return make_result({lens.size(), n}, std::move(out), "segment_mean_rows", {a}, [lens, n](Node& self) {
    auto& g = grad_of(self, 0);
    std::size_t r0 = 0;
    for (std::size_t s = 0; s < lens.size(); ++s) {
      const double inv = 1.0 / static_cast<double>(lens[s]);
      const double* gs = self.grad.data() + s * n;
      for (std::size_t r = r0; r < r0 + lens[s]; ++r)
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += gs[j] * inv;
      r0 += lens[s];
    }
  });
}

Tensor softmax(const Tensor& x) {
  const std::size_t rows = x.rows(), n = x.cols();
  std::vector<double> out(x.numel());
  const auto v = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = v.data() + r * n;
    double* yr = out.data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= s;
  }
  return make_result(x.shape(), std::move(out), "softmax", {x}, [rows, n](Node& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (gy[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (d < 2) throw DimensionError("layer_norm: last extent must be >= 2, got " + shape_str(x.shape()));
  if (gain.numel() != d || bias.numel() != d)
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match " + shape_str(x.shape()));
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  const auto v = x.data();
  const auto g = gain.data();
  const auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = v.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * g[j] + b[j];
    }
  }
  return make_result(x.shape(), std::move(out), "layer_norm", {x, gain, bias},
                     [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const auto& gv = in(self, 1).data;
                       const double* gy = self.grad.data();
                       if (wants(self, 0)) {
                         auto& gx = grad_of(self, 0);
                         const double invd = 1.0 / static_cast<double>(d);
                         for (std::size_t r = 0; r < rows; ++r) {
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t j = 0; j < d; ++j) {
                             const double dh = gy[r * d + j] * gv[j];
                             m1 += dh;
                             m2 += dh * xhat[r * d + j];
                           }
                           m1 *= invd;
                           m2 *= invd;
                           for (std::size_t j = 0; j < d; ++j) {
                             const double dh = gy[r * d + j] * gv[j];
                             gx[r * d + j] += inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
                           }
                         }
                       }
                       if (wants(self, 1)) {
                         auto& gg = grad_of(self, 1);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) gg[j] += gy[r * d + j] * xhat[r * d + j];
                       }
                       if (wants(self, 2)) {
                         auto& gb = grad_of(self, 2);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) gb[j] += gy[r * d + j];
                       }
                     });
}

Tensor l2_normalize_rows(const Tensor& x) {
  const std::size_t rows = x.rows(), n = x.cols();
  std::vector<double> out(x.numel());
  std::vector<double> norms(rows);
  const auto v = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += v[r * n + j] * v[r * n + j];
    const double nr = std::max(std::sqrt(s), 1e-12);
    norms[r] = nr;
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = v[r * n + j] / nr;
  }
  return make_result(x.shape(), std::move(out), "l2_normalize_rows", {x},
                     [rows, n, norms = std::move(norms)](Node& self) {
                       auto& g = grad_of(self, 0);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = self.data.data() + r * n;
                         const double* gy = self.grad.data() + r * n;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
                         for (std::size_t j = 0; j < n; ++j) g[r * n + j] += (gy[j] - y[j] * dot) / norms[r];
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  const std::size_t b = logits.rows(), c = logits.cols();
  if (labels.size() != b)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(logits.shape()));
  if (b == 0) throw DimensionError("cross_entropy: empty batch");
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  for (std::size_t y : lab)
    if (y >= c) throw IndexError("cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(c) + ")");
  std::vector<double> probs(b * c);
  const auto v = logits.data();
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const double* xr = v.data() + r * c;
    const double mx = *std::max_element(xr, xr + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(xr[j] - mx);
    const double lse = mx + std::log(s);
    total += lse - xr[lab[r]];
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(xr[j] - lse);
  }
  const double loss = total / static_cast<double>(b);
  return make_result({1}, {loss}, "cross_entropy", {logits},
                     [b, c, lab = std::move(lab), probs = std::move(probs)](Node& self) {
                       auto& g = grad_of(self, 0);
                       const double s = self.grad[0] / static_cast<double>(b);
                       for (std::size_t r = 0; r < b; ++r)
                         for (std::size_t j = 0; j < c; ++j)
                           g[r * c + j] += s * (probs[r * c + j] - (j == lab[r] ? 1.0 : 0.0));
                     });
}

// ---------------------------------------------------------------- structural

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), "reshape", {a}, [](Node& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  const std::size_t rows = a.rows(), n = a.cols();
  if (begin > end || end > rows)
    throw IndexError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                     shape_str(a.shape()));
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                          a.data().begin() + static_cast<std::ptrdiff_t>(end * n));
  return make_result({end - begin, n}, std::move(out), "slice_rows", {a}, [begin, n](Node& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != n)
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(rows * n);
  std::vector<std::size_t> offsets;
  offsets.reserve(parts.size());
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return make_result({rows, n}, std::move(out), "concat_rows", parts, [offsets = std::move(offsets)](Node& self) {
    for (std::size_t s = 0; s < self.inputs.size(); ++s) {
      if (!wants(self, s)) continue;
      auto& g = grad_of(self, s);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[s] + i];
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be rank 2, got " + shape_str(table.shape()));
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * d);
  const auto t = table.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= vocab)
      throw IndexError("embedding: id " + std::to_string(idx[r]) + " outside vocabulary of " + std::to_string(vocab));
    std::copy_n(t.begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  const std::size_t n = idx.size();
  return make_result({n, d}, std::move(out), "embedding", {table}, [d, idx = std::move(idx)](Node& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) g[idx[r] * d + j] += self.grad[r * d + j];
  });
}

// ---------------------------------------------------------------- attention

namespace {

std::vector<std::size_t> segment_lengths(std::span<const std::size_t> lens, std::size_t total, const char* what) {
  if (lens.empty()) return {total};
  std::size_t s = 0;
  for (std::size_t l : lens) s += l;
  if (s != total)
    throw DimensionError(std::string("attention: ") + what + " segments cover " + std::to_string(s) + " of " +
                         std::to_string(total) + " rows");
  return {lens.begin(), lens.end()};
}

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, bool causal,
                 std::span<const std::size_t> q_segments, std::span<const std::size_t> k_segments) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || k.shape() != v.shape() || q.dim(1) != k.dim(1))
    throw DimensionError("attention: incompatible shapes q" + shape_str(q.shape()) + " k" + shape_str(k.shape()) +
                         " v" + shape_str(v.shape()));
  const std::size_t d = q.dim(1);
  if (heads == 0 || d % heads != 0)
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                         " heads");
  const auto qs = segment_lengths(q_segments, q.dim(0), "query");
  const auto ks = segment_lengths(k_segments.empty() && !q_segments.empty() ? q_segments : k_segments, k.dim(0), "key");
  if (qs.size() != ks.size()) throw DimensionError("attention: query and key segment counts differ");
  for (std::size_t s = 0; s < qs.size(); ++s) {
    if (ks[s] == 0) throw DimensionError("attention: no keys");
    if (causal && qs[s] != ks[s]) throw DimensionError("attention: causal mask needs square scores");
  }
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  // Probabilities saved per (segment, head) block, laid out consecutively.
  std::vector<double> out(q.dim(0) * d, 0.0);
  std::size_t prob_size = 0;
  for (std::size_t s = 0; s < qs.size(); ++s) prob_size += heads * qs[s] * ks[s];
  std::vector<double> probs(prob_size, 0.0);
  std::vector<double> qh, kt, vh, scores;
  const auto Q = q.data(), K = k.data(), V = v.data();
  std::size_t q0 = 0, k0 = 0, p0 = 0;
  for (std::size_t s = 0; s < qs.size(); ++s) {
    const std::size_t tq = qs[s], tk = ks[s];
    qh.resize(tq * dh);
    kt.resize(dh * tk);
    vh.resize(tk * dh);
    scores.resize(tq * tk);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < tq; ++i)
        for (std::size_t c = 0; c < dh; ++c) qh[i * dh + c] = Q[(q0 + i) * d + h * dh + c];
      for (std::size_t j = 0; j < tk; ++j)
        for (std::size_t c = 0; c < dh; ++c) {
          kt[c * tk + j] = K[(k0 + j) * d + h * dh + c];
          vh[j * dh + c] = V[(k0 + j) * d + h * dh + c];
        }
      kernels::gemm_nn(qh.data(), kt.data(), scores.data(), tq, dh, tk, false);
      double* P = probs.data() + p0 + h * tq * tk;
      for (std::size_t i = 0; i < tq; ++i) {
        const std::size_t lim = causal ? i + 1 : tk;
        const double* sr = scores.data() + i * tk;
        double mx = sr[0] * sc;
        for (std::size_t j = 1; j < lim; ++j) mx = std::max(mx, sr[j] * sc);
        double sum = 0.0;
        for (std::size_t j = 0; j < lim; ++j) {
          P[i * tk + j] = std::exp(sr[j] * sc - mx);
          sum += P[i * tk + j];
        }
        for (std::size_t j = 0; j < lim; ++j) P[i * tk + j] /= sum;
        double* orow = out.data() + (q0 + i) * d + h * dh;
        for (std::size_t j = 0; j < lim; ++j) {
          const double p = P[i * tk + j];
          const double* vr = vh.data() + j * dh;
          for (std::size_t c = 0; c < dh; ++c) orow[c] += p * vr[c];
        }
      }
    }
    q0 += tq;
    k0 += tk;
    p0 += heads * tq * tk;
  }

  return make_result(
      {q.dim(0), d}, std::move(out), "attention", {q, k, v},
      [qs, ks, d, heads, dh, sc, causal, probs = std::move(probs)](Node& self) {
        Node& Qn = in(self, 0);
        Node& Kn = in(self, 1);
        Node& Vn = in(self, 2);
        if (Qn.requires_grad) Qn.ensure_grad();
        if (Kn.requires_grad) Kn.ensure_grad();
        if (Vn.requires_grad) Vn.ensure_grad();
        std::vector<double> qh, kh, vt, go, dp, dq, dk, dv;
        std::size_t q0 = 0, k0 = 0, p0 = 0;
        for (std::size_t s = 0; s < qs.size(); ++s) {
          const std::size_t tq = qs[s], tk = ks[s];
          qh.resize(tq * dh);
          go.resize(tq * dh);
          dq.resize(tq * dh);
          kh.resize(tk * dh);
          vt.resize(dh * tk);
          dk.resize(tk * dh);
          dv.resize(tk * dh);
          dp.resize(tq * tk);
          for (std::size_t h = 0; h < heads; ++h) {
            const double* P = probs.data() + p0 + h * tq * tk;
            for (std::size_t i = 0; i < tq; ++i)
              for (std::size_t c = 0; c < dh; ++c) {
                qh[i * dh + c] = Qn.data[(q0 + i) * d + h * dh + c];
                go[i * dh + c] = self.grad[(q0 + i) * d + h * dh + c];
              }
            for (std::size_t j = 0; j < tk; ++j)
              for (std::size_t c = 0; c < dh; ++c) {
                kh[j * dh + c] = Kn.data[(k0 + j) * d + h * dh + c];
                vt[c * tk + j] = Vn.data[(k0 + j) * d + h * dh + c];
              }
            // dP = dO · Vᵀ, then the softmax Jacobian, folded with the score scale.
            kernels::gemm_nn(go.data(), vt.data(), dp.data(), tq, dh, tk, false);
            for (std::size_t i = 0; i < tq; ++i) {
              const std::size_t lim = causal ? i + 1 : tk;
              double dot = 0.0;
              for (std::size_t j = 0; j < lim; ++j) dot += P[i * tk + j] * dp[i * tk + j];
              for (std::size_t j = 0; j < lim; ++j) dp[i * tk + j] = P[i * tk + j] * (dp[i * tk + j] - dot) * sc;
              for (std::size_t j = lim; j < tk; ++j) dp[i * tk + j] = 0.0;
            }
            if (Qn.requires_grad) {
              kernels::gemm_nn(dp.data(), kh.data(), dq.data(), tq, tk, dh, false);
              for (std::size_t i = 0; i < tq; ++i)
                for (std::size_t c = 0; c < dh; ++c) Qn.grad[(q0 + i) * d + h * dh + c] += dq[i * dh + c];
            }
            if (Kn.requires_grad) {
              std::fill(dk.begin(), dk.end(), 0.0);
              kernels::gemm_tn_acc(dp.data(), qh.data(), dk.data(), tq, tk, dh);
              for (std::size_t j = 0; j < tk; ++j)
                for (std::size_t c = 0; c < dh; ++c) Kn.grad[(k0 + j) * d + h * dh + c] += dk[j * dh + c];
            }
            if (Vn.requires_grad) {
              std::fill(dv.begin(), dv.end(), 0.0);
              kernels::gemm_tn_acc(P, go.data(), dv.data(), tq, tk, dh);
              for (std::size_t j = 0; j < tk; ++j)
                for (std::size_t c = 0; c < dh; ++c) Vn.grad[(k0 + j) * d + h * dh + c] += dv[j * dh + c];
            }
          }
          q0 += tq;
          k0 += tk;
          p0 += heads * tq * tk;
        }
      });
}

// ---------------------------------------------------------------- reverse pass

void backward(const Tensor& loss) {
  if (!loss) throw ContractError("backward: null tensor");
  if (loss.numel() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  Node* root = loss.node();
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->inputs) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

  for (Node* n : order) {
    if (!n->inputs.empty()) n->grad.assign(n->data.size(), 0.0);
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (Node* n : order) {
    if (n->backward_fn) n->backward_fn(*n);
  }
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double eps) {
  Tensor x = point.clone_leaf(true);
  Tensor y = f(x);
  if (y.numel() != 1) throw ContractError("grad_check: function must be scalar-valued");
  backward(y);
  std::vector<double> analytic(x.numel(), 0.0);
  if (x.has_grad()) analytic.assign(x.grad().begin(), x.grad().end());

  NoGradGuard guard;
  std::vector<double> base(point.data().begin(), point.data().end());
  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base;
    auto minus = base;
    plus[i] += eps;
    minus[i] -= eps;
    const double fp = f(Tensor::from(point.shape(), std::move(plus))).item();
    const double fm = f(Tensor::from(point.shape(), std::move(minus))).item();
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace mmfn
