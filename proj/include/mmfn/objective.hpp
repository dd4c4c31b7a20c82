#pragma once

#include <string_view>
#include <vector>

#include "mmfn/nn.hpp"

namespace mmfn {

// Mean-pool over positions, then linear -> GELU -> linear onto {real, fake}.
struct ClassifierParams {
  Linear fc1;  // d -> hidden
  Linear fc2;  // hidden -> 2

  static ClassifierParams init(std::size_t dim, std::size_t hidden, Rng& rng);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    fc1.visit(prefix + ".fc1", f);
    fc2.visit(prefix + ".fc2", f);
  }
};

// Logits [1 × 2]; with `lengths`, one row per packed sequence.
Tensor classify(const Tensor& hidden, const ClassifierParams& params, std::span<const std::size_t> lengths = {});

// sigma_i = softplus(rho_i) + 1e-4 keeps both uncertainties strictly positive.
struct AwlState {
  Tensor rho1;
  Tensor rho2;

  static AwlState init(double sigma1 = 1.0, double sigma2 = 1.0);
  Tensor sigma1() const;
  Tensor sigma2() const;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".rho1", rho1);
    f(prefix + ".rho2", rho2);
  }
};

inline constexpr double kSigmaFloor = 1e-4;
double rho_for_sigma(double sigma);

// L = L1/(2σ1²) + L2/σ2² + log(1+σ1) + log(1+σ2); `symmetric` puts the ½ on
// both task terms.
Tensor awl_combine(const Tensor& l1, const Tensor& l2, const Tensor& sigma1, const Tensor& sigma2,
                   bool symmetric = false);
Tensor awl_combine(const Tensor& l1, const Tensor& l2, const AwlState& state, bool symmetric = false);

enum class OptimizerKind { sgd, adam };
OptimizerKind parse_optimizer(std::string_view name);
std::string_view optimizer_name(OptimizerKind kind);

// Steps a fixed parameter list. SGD keeps a heavy-ball velocity; Adam the
// usual bias-corrected moments. Parameters without gradients are skipped.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double momentum = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(const ParamList& params);
  void zero_grad(const ParamList& params) const;
  std::size_t steps() const { return t_; }

 private:
  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace mmfn
