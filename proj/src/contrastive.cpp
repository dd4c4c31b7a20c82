#include "mmfn/contrastive.hpp"

#include <cmath>
#include <numeric>

#include "mmfn/errors.hpp"

namespace mmfn {

MomentumPair MomentumPair::init(const EncoderConfig& cfg, double m, Rng& rng) {
  if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("momentum coefficient must lie in [0,1], got " + std::to_string(m));
  MomentumPair pair;
  pair.online = ImageEncoder::init(cfg, rng);
  pair.momentum = clone_module(pair.online, false);
  pair.m = m;
  return pair;
}

void momentum_update(const ParamList& online, const ParamList& momentum, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw ContractError("momentum coefficient outside [0,1]: " + std::to_string(m));
  if (online.size() != momentum.size()) throw ContractError("momentum_update: parameter sets differ in size");
  for (std::size_t i = 0; i < online.size(); ++i) {
    const Tensor& x = online[i].tensor;
    Tensor y = momentum[i].tensor;
    if (x.shape() != y.shape())
      throw ContractError("momentum_update: " + online[i].name + " " + shape_str(x.shape()) + " vs " +
                          shape_str(y.shape()));
    auto yd = y.mutable_data();
    const auto xd = x.data();
    for (std::size_t j = 0; j < yd.size(); ++j) yd[j] = m * yd[j] + (1.0 - m) * xd[j];
  }
}

void momentum_update(MomentumPair& pair) {
  momentum_update(collect_params(pair.online, "enc"), collect_params(pair.momentum, "enc"), pair.m);
}

SimilarityMode parse_similarity_mode(std::string_view name) {
  if (name == "sum_transpose") return SimilarityMode::sum_transpose;
  if (name == "sum_plain") return SimilarityMode::sum_plain;
  throw ConfigError("unknown similarity mode '" + std::string(name) + "'");
}

std::string_view similarity_mode_name(SimilarityMode mode) {
  return mode == SimilarityMode::sum_transpose ? "sum_transpose" : "sum_plain";
}

namespace {

void require_unit_rows(const Tensor& t, const char* name) {
  const std::size_t n = t.cols();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += t.at(r, j) * t.at(r, j);
    if (std::abs(std::sqrt(s) - 1.0) > 1e-6)
      throw ContractError(std::string("similarity_logits: row ") + std::to_string(r) + " of " + name +
                          " has norm " + std::to_string(std::sqrt(s)));
  }
}

}  // namespace

Tensor similarity_logits(const Tensor& qa, const Tensor& kb, const Tensor& qb, const Tensor& ka,
                         SimilarityMode mode) {
  if (qa.rank() != 2 || qa.shape() != kb.shape() || qa.shape() != qb.shape() || qa.shape() != ka.shape())
    throw DimensionError("similarity_logits: shapes " + shape_str(qa.shape()) + " " + shape_str(kb.shape()) + " " +
                         shape_str(qb.shape()) + " " + shape_str(ka.shape()));
  require_unit_rows(qa, "qa");
  require_unit_rows(kb, "kb");
  require_unit_rows(qb, "qb");
  require_unit_rows(ka, "ka");
  const Tensor s1 = matmul(qa, transpose(kb));
  // S2ᵀ = (qb·kaᵀ)ᵀ = ka·qbᵀ
  const Tensor s2 = mode == SimilarityMode::sum_transpose ? matmul(ka, transpose(qb)) : matmul(qb, transpose(ka));
  return add(s1, s2);
}

Tensor info_nce(const Tensor& logits, double tau) {
  if (!(tau > 0.0)) throw ConfigError("info_nce: temperature must be positive, got " + std::to_string(tau));
  if (logits.rank() != 2 || logits.dim(0) != logits.dim(1))
    throw DimensionError("info_nce: logits must be square, got " + shape_str(logits.shape()));
  if (logits.dim(0) < 2) throw ContractError("info_nce: batch of at least 2 required");
  std::vector<std::size_t> targets(logits.dim(0));
  std::iota(targets.begin(), targets.end(), std::size_t{0});
  return cross_entropy(scale(logits, 1.0 / tau), targets);
}

ContrastiveBatch contrastive_forward(const MomentumPair& pair, const EncoderConfig& cfg,
                                     const std::vector<Image>& view_a, const std::vector<Image>& view_b, double tau,
                                     SimilarityMode mode) {
  if (view_a.size() != view_b.size())
    throw DimensionError("contrastive_forward: " + std::to_string(view_a.size()) + " vs " +
                         std::to_string(view_b.size()) + " views");
  ContrastiveBatch out;
  out.batch_size = view_a.size();
  out.tau = tau;
  EncodedImage ea = encode_images(view_a, pair.online, cfg);
  EncodedImage eb = encode_images(view_b, pair.online, cfg);
  out.q = ea.pooled;
  out.patches_a = ea.patches;
  Tensor kat;
  {
    NoGradGuard no_grad;
    kat = encode_images(view_a, pair.momentum, cfg).pooled;
    out.k = encode_images(view_b, pair.momentum, cfg).pooled;
  }
  const Tensor& qbt = eb.pooled;
  out.logits = similarity_logits(out.q, out.k, qbt, kat, mode);
  out.loss = info_nce(out.logits, tau);
  return out;
}

double diagonal_accuracy(const Tensor& logits) {
  const std::size_t b = logits.rows(), n = logits.cols();
  if (b == 0) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    hit += best == i;
  }
  return static_cast<double>(hit) / static_cast<double>(b);
}

}  // namespace mmfn
