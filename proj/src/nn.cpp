#include "mmfn/nn.hpp"

#include <cmath>

namespace mmfn {

Tensor normal_param(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  return {normal_param({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng), Tensor::zeros({out}, true)};
}

LayerNorm LayerNorm::init(std::size_t dim) { return {Tensor::full({dim}, 1.0, true), Tensor::zeros({dim}, true)}; }

MultiHeadAttention MultiHeadAttention::init(std::size_t dim, std::size_t heads, Rng& rng) {
  MultiHeadAttention m;
  m.q = Linear::init(dim, dim, rng);
  m.k = Linear::init(dim, dim, rng);
  m.v = Linear::init(dim, dim, rng);
  m.o = Linear::init(dim, dim, rng);
  m.heads = heads;
  return m;
}

Tensor MultiHeadAttention::operator()(const Tensor& x_query, const Tensor& x_context, bool causal,
                                      std::span<const std::size_t> q_segments,
                                      std::span<const std::size_t> k_segments) const {
  return o(attention(q(x_query), k(x_context), v(x_context), heads, causal, q_segments, k_segments));
}

FeedForward FeedForward::init(std::size_t dim, std::size_t hidden, Rng& rng) {
  return {Linear::init(dim, hidden, rng), Linear::init(hidden, dim, rng)};
}

TransformerBlock TransformerBlock::init(std::size_t dim, std::size_t heads, Rng& rng) {
  TransformerBlock b;
  b.ln1 = LayerNorm::init(dim);
  b.attn = MultiHeadAttention::init(dim, heads, rng);
  b.ln2 = LayerNorm::init(dim);
  b.ffn = FeedForward::init(dim, 4 * dim, rng);
  return b;
}

Tensor TransformerBlock::operator()(const Tensor& x, bool causal, std::span<const std::size_t> segments) const {
  const Tensor h = ln1(x);
  const Tensor a = add(x, attn(h, h, causal, segments, segments));
  return add(a, ffn(ln2(a)));
}

}  // namespace mmfn
