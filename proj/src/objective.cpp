#include "mmfn/objective.hpp"

#include <cmath>

#include "mmfn/errors.hpp"

namespace mmfn {

ClassifierParams ClassifierParams::init(std::size_t dim, std::size_t hidden, Rng& rng) {
  return {Linear::init(dim, hidden, rng), Linear::init(hidden, 2, rng)};
}

Tensor classify(const Tensor& hidden, const ClassifierParams& params, std::span<const std::size_t> lengths) {
  if (hidden.rows() == 0) throw DimensionError("classify: empty hidden sequence");
  const Tensor pooled = lengths.empty() ? mean_rows(hidden) : segment_mean_rows(hidden, lengths);
  return params.fc2(gelu(params.fc1(pooled)));
}

double rho_for_sigma(double sigma) {
  const double s = sigma - kSigmaFloor;
  if (!(s > 0.0)) throw ConfigError("sigma must exceed " + std::to_string(kSigmaFloor));
  // inverse softplus
  return s > 30.0 ? s : std::log(std::expm1(s));
}

AwlState AwlState::init(double sigma1, double sigma2) {
  return {Tensor::scalar(rho_for_sigma(sigma1), true), Tensor::scalar(rho_for_sigma(sigma2), true)};
}

Tensor AwlState::sigma1() const { return add_scalar(softplus(rho1), kSigmaFloor); }
Tensor AwlState::sigma2() const { return add_scalar(softplus(rho2), kSigmaFloor); }

Tensor awl_combine(const Tensor& l1, const Tensor& l2, const Tensor& sigma1, const Tensor& sigma2, bool symmetric) {
  if (l1.numel() != 1 || l2.numel() != 1 || sigma1.numel() != 1 || sigma2.numel() != 1)
    throw DimensionError("awl_combine: all inputs must be scalars");
  if (!(sigma1.item() > 0.0) || !(sigma2.item() > 0.0))
    throw ContractError("awl_combine: sigma must be positive, got " + std::to_string(sigma1.item()) + ", " +
                        std::to_string(sigma2.item()));
  const Tensor t1 = div(l1, scale(square(sigma1), 2.0));
  const Tensor t2 = div(l2, symmetric ? scale(square(sigma2), 2.0) : square(sigma2));
  return add(add(t1, t2), add(log1p(sigma1), log1p(sigma2)));
}

Tensor awl_combine(const Tensor& l1, const Tensor& l2, const AwlState& state, bool symmetric) {
  return awl_combine(l1, l2, state.sigma1(), state.sigma2(), symmetric);
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

std::string_view optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

Optimizer::Optimizer(OptimizerKind kind, double lr, double momentum, double beta2, double eps)
    : kind_(kind), lr_(lr), beta1_(momentum), beta2_(beta2), eps_(eps) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optimizer momentum must lie in [0,1)");
}

void Optimizer::step(const ParamList& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    if (kind_ == OptimizerKind::adam) v_.resize(params.size());
  }
  if (m_.size() != params.size()) throw ContractError("optimizer: parameter list changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    const auto g = p.grad();
    auto& m = m_[i];
    if (m.empty()) m.assign(w.size(), 0.0);
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = beta1_ * m[j] + g[j];
        w[j] -= lr_ * m[j];
      }
    } else {
      auto& v = v_[i];
      if (v.empty()) v.assign(w.size(), 0.0);
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
        w[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
      }
    }
  }
}

void Optimizer::zero_grad(const ParamList& params) const {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

}  // namespace mmfn
