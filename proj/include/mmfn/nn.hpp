#pragma once

// Small parameterized building blocks shared by the encoder, the query block
// and the language model.

#include <string>
#include <vector>

#include "mmfn/rng.hpp"
#include "mmfn/tensor.hpp"

namespace mmfn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

// Modules expose `visit(prefix, f)` calling f(name, Tensor&) for every
// parameter slot in a fixed order; collection, cloning and checkpoint loading
// are all built on it.
template <class Module>
ParamList collect_params(Module& m, const std::string& prefix) {
  ParamList out;
  m.visit(prefix, [&](const std::string& name, Tensor& t) { out.push_back({name, t}); });
  return out;
}

// Deep copy with fresh leaves.
template <class Module>
Module clone_module(const Module& m, bool requires_grad) {
  Module copy = m;
  copy.visit("", [&](const std::string&, Tensor& t) { t = t.clone_leaf(requires_grad); });
  return copy;
}

Tensor normal_param(Shape shape, double stddev, Rng& rng);

struct Linear {
  Tensor weight;  // [in × out]
  Tensor bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  static LayerNorm init(std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
  }
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;

  static MultiHeadAttention init(std::size_t dim, std::size_t heads, Rng& rng);
  Tensor operator()(const Tensor& x_query, const Tensor& x_context, bool causal,
                    std::span<const std::size_t> q_segments = {}, std::span<const std::size_t> k_segments = {}) const;
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    q.visit(prefix + ".q", f);
    k.visit(prefix + ".k", f);
    v.visit(prefix + ".v", f);
    o.visit(prefix + ".o", f);
  }
};

struct FeedForward {
  Linear up, down;

  static FeedForward init(std::size_t dim, std::size_t hidden, Rng& rng);
  Tensor operator()(const Tensor& x) const { return down(gelu(up(x))); }
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    up.visit(prefix + ".up", f);
    down.visit(prefix + ".down", f);
  }
};

// Pre-norm transformer block: x + attn(ln(x)), then x + ffn(ln(x)).
struct TransformerBlock {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  FeedForward ffn;

  static TransformerBlock init(std::size_t dim, std::size_t heads, Rng& rng);
  Tensor operator()(const Tensor& x, bool causal, std::span<const std::size_t> segments = {}) const;
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    ln1.visit(prefix + ".ln1", f);
    attn.visit(prefix + ".attn", f);
    ln2.visit(prefix + ".ln2", f);
    ffn.visit(prefix + ".ffn", f);
  }
};

}  // namespace mmfn
