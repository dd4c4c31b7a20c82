#pragma once

// Dense row-major tensors of doubles with a dynamic reverse-mode tape.
//
// A Tensor is a cheap handle onto a shared node. Ops produce new nodes and,
// when any input requires a gradient, record their inputs and a backward
// closure. backward() walks the reachable nodes in exact reverse construction
// order. Leaves keep their gradients across backward calls (accumulation);
// zero them explicitly between optimizer steps.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mmfn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  explicit operator bool() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  // Extent of the last axis, and number of rows over the leading axes.
  std::size_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
  std::size_t rows() const { return numel() / cols(); }

  std::span<const double> data() const { return node_->data; }
  // Only leaves may be written in place (parameters, optimizer updates).
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->inputs.empty(); }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad() { node_->grad.clear(); }

  // New leaf holding a copy of the values, outside the tape.
  Tensor detach() const;
  Tensor clone_leaf(bool requires_grad) const;

  const char* op_name() const { return node_->op; }
  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& shared() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_result(Shape, std::vector<double>, const char*, std::vector<Tensor>,
                            std::function<void(detail::Node&)>);
};

// Builds an op output. The backward closure is kept only when some input
// requires a gradient and the tape is enabled.
Tensor make_result(Shape shape, std::vector<double> data, const char* op, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward_fn);

// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x[m×n] + bias[n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor square(const Tensor& a);
Tensor log(const Tensor& a);
Tensor log1p(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor gelu(const Tensor& a);

// ---- reductions and row ops (last axis) ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// [rows×n] -> [1×n]
Tensor mean_rows(const Tensor& a);
// Consecutive row blocks of the given lengths, each averaged to one row.
Tensor segment_mean_rows(const Tensor& a, std::span<const std::size_t> lengths);
Tensor softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor l2_normalize_rows(const Tensor& x);
// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

// ---- structural ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
// Row gather; gradient scatters back into the looked-up rows.
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);

// Multi-head scaled dot-product attention over already projected q[Tq×d],
// k[Tk×d], v[Tk×d]. With causal, Tq == Tk and row i sees keys 0..i only.
// Optional segment lengths pack independent sequences along the rows: query
// segment s attends only to key segment s. Key segments default to the
// query segments.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, bool causal,
                 std::span<const std::size_t> q_segments = {}, std::span<const std::size_t> k_segments = {});

// Reverse pass from a scalar. Leaf gradients accumulate.
void backward(const Tensor& loss);

// Max over coordinates of |analytic - central difference| / max(1e-8, |central difference|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double eps = 1e-5);

}  // namespace mmfn
