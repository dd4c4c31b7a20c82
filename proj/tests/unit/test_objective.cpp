#include <doctest.h>

#include <cmath>

#include "mmfn/errors.hpp"
#include "mmfn/objective.hpp"
#include "support.hpp"

using namespace mmfn;
using mmfn::testing::random_tensor;

namespace {

double awl_value(double l1, double l2, double s1, double s2) {
  return awl_combine(Tensor::scalar(l1), Tensor::scalar(l2), Tensor::scalar(s1), Tensor::scalar(s2)).item();
}

}  // namespace

TEST_CASE("zero classifier gives zero logits") {
  Rng rng(1);
  ClassifierParams p = ClassifierParams::init(6, 4, rng);
  p.visit("c", [](const std::string&, Tensor& t) {
    auto v = t.mutable_data();
    std::fill(v.begin(), v.end(), 0.0);
  });
  const Tensor logits = classify(random_tensor({5, 6}, rng, 1.0, false), p);
  CHECK(logits.shape() == Shape{1, 2});
  CHECK(logits[0] == 0.0);
  CHECK(logits[1] == 0.0);
}

TEST_CASE("constant positions pool to that row") {
  Rng rng(2);
  const ClassifierParams p = ClassifierParams::init(6, 4, rng);
  const Tensor row = random_tensor({1, 6}, rng, 1.0, false);
  const Tensor rep = concat_rows({row, row, row, row});
  CHECK(mmfn::testing::max_abs_diff(classify(rep, p).data(), classify(row, p).data()) < 1e-15);
}

TEST_CASE("packed classification matches per-sequence calls") {
  Rng rng(3);
  const ClassifierParams p = ClassifierParams::init(6, 4, rng);
  const Tensor a = random_tensor({3, 6}, rng, 1.0, false), b = random_tensor({5, 6}, rng, 1.0, false);
  const std::vector<std::size_t> lens{3, 5};
  const Tensor both = classify(concat_rows({a, b}), p, lens);
  CHECK(both.shape() == Shape{2, 2});
  CHECK(mmfn::testing::max_abs_diff(slice_rows(both, 1, 2).data(), classify(b, p).data()) < 1e-14);
}

TEST_CASE("classifier gradients for every parameter tensor") {
  Rng rng(4);
  const ClassifierParams p = ClassifierParams::init(6, 4, rng);
  const Tensor e = random_tensor({5, 6}, rng, 1.0, false);
  const std::vector<std::size_t> label{1};
  auto check = [&](auto set) {
    auto f = [&](const Tensor& t) {
      ClassifierParams q = p;
      set(q, t);
      return cross_entropy(classify(e, q), label);
    };
    return f;
  };
  CHECK(grad_check(check([](ClassifierParams& q, const Tensor& t) { q.fc1.weight = t; }), p.fc1.weight.clone_leaf(true)) < 1e-4);
  CHECK(grad_check(check([](ClassifierParams& q, const Tensor& t) { q.fc1.bias = t; }), p.fc1.bias.clone_leaf(true)) < 1e-4);
  CHECK(grad_check(check([](ClassifierParams& q, const Tensor& t) { q.fc2.weight = t; }), p.fc2.weight.clone_leaf(true)) < 1e-4);
  CHECK(grad_check(check([](ClassifierParams& q, const Tensor& t) { q.fc2.bias = t; }), p.fc2.bias.clone_leaf(true)) < 1e-4);
}

TEST_CASE("awl scalar cases") {
  CHECK(std::abs(awl_value(0, 0, 1, 1) - 2.0 * std::log(2.0)) < 1e-12);
  CHECK(std::abs(awl_value(0, 0, 1, 1) - 1.3862943611198906) < 1e-12);
  CHECK(std::abs(awl_value(2, 4, 1, 2) - 3.791759469228055) < 1e-12);
  const double sym = awl_combine(Tensor::scalar(2), Tensor::scalar(4), Tensor::scalar(1), Tensor::scalar(2), true).item();
  CHECK(std::abs(sym - (1.0 + 0.5 + std::log(2.0) + std::log(3.0))) < 1e-12);
}

TEST_CASE("awl is linear in L1 with slope 1/(2 sigma1^2)") {
  const Tensor l1 = Tensor::scalar(0.7, true);
  backward(awl_combine(l1, Tensor::scalar(0.3), Tensor::scalar(1.5), Tensor::scalar(0.8)));
  CHECK(std::abs(l1.grad()[0] - 1.0 / (2.0 * 1.5 * 1.5)) < 1e-15);
  auto f = [](const Tensor& x) {
    return awl_combine(x, Tensor::scalar(0.3), Tensor::scalar(1.5), Tensor::scalar(0.8));
  };
  CHECK(grad_check(f, Tensor::scalar(0.7, true)) < 1e-8);
}

TEST_CASE("awl grows with each task loss") {
  for (double s1 : {0.3, 1.0, 2.5})
    for (double s2 : {0.5, 1.7}) {
      CHECK(awl_value(1.1, 0.4, s1, s2) > awl_value(1.0, 0.4, s1, s2));
      CHECK(awl_value(1.0, 0.5, s1, s2) > awl_value(1.0, 0.4, s1, s2));
    }
}

TEST_CASE("awl gradients with respect to sigma and rho") {
  auto wrt_sigma = [](const Tensor& s) {
    return awl_combine(Tensor::scalar(1.3), Tensor::scalar(0.6), reshape(slice_rows(reshape(s, {2, 1}), 0, 1), {1}),
                       reshape(slice_rows(reshape(s, {2, 1}), 1, 2), {1}));
  };
  CHECK(grad_check(wrt_sigma, Tensor::from({2}, {0.9, 1.4}, true)) < 1e-4);
  auto wrt_rho = [](const Tensor& r) {
    AwlState s = AwlState::init();
    s.rho1 = r;
    return awl_combine(Tensor::scalar(1.3), Tensor::scalar(0.6), s);
  };
  CHECK(grad_check(wrt_rho, Tensor::scalar(0.2, true)) < 1e-4);
}

TEST_CASE("sigma1 has one minimizer and descent approaches it") {
  const double l1 = 1.8;
  auto dldsigma = [&](double s) { return -l1 / (s * s * s) + 1.0 / (1.0 + s); };
  CHECK(dldsigma(0.5) < 0.0);
  CHECK(dldsigma(5.0) > 0.0);
  double lo = 0.5, hi = 5.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (dldsigma(mid) < 0 ? lo : hi) = mid;
  }
  const double root = 0.5 * (lo + hi);
  for (double s = 0.55; s < 5.0; s += 0.05) CHECK((dldsigma(s) < 0) == (s < root));

  Tensor sigma = Tensor::scalar(1.0, true);
  const double start_gap = std::abs(1.0 - root);
  for (int step = 0; step < 500; ++step) {
    sigma.zero_grad();
    backward(awl_combine(Tensor::scalar(l1), Tensor::scalar(0.0), sigma, Tensor::scalar(1.0)));
    sigma.mutable_data()[0] -= 0.2 * sigma.grad()[0];
  }
  CHECK(std::abs(sigma[0] - root) < 1e-3 * start_gap);
}

TEST_CASE("sigma parameterization stays positive") {
  const AwlState s = AwlState::init(1.0, 2.0);
  CHECK(std::abs(s.sigma1().item() - 1.0) < 1e-12);
  CHECK(std::abs(s.sigma2().item() - 2.0) < 1e-12);
  AwlState low = s;
  low.rho1 = Tensor::scalar(-800.0, true);
  CHECK(low.sigma1().item() >= kSigmaFloor);
  CHECK_THROWS_AS(AwlState::init(0.0, 1.0), ConfigError);
}

TEST_CASE("sgd and adam steps") {
  Tensor x = Tensor::from({2}, {1.0, -2.0}, true);
  const ParamList params{{"x", x}};
  Optimizer sgd(OptimizerKind::sgd, 0.1, 0.9);
  backward(sum(square(x)));
  sgd.step(params);
  CHECK(std::abs(x[0] - 0.8) < 1e-15);
  CHECK(std::abs(x[1] + 1.6) < 1e-15);
  sgd.zero_grad(params);
  CHECK(x.grad()[0] == 0.0);

  Tensor y = Tensor::from({2}, {1.0, -2.0}, true);
  Optimizer adam(OptimizerKind::adam, 0.01);
  backward(sum(square(y)));
  adam.step({{"y", y}});
  CHECK(std::abs(y[0] - 0.99) < 1e-6);
  CHECK(std::abs(y[1] + 1.99) < 1e-6);
  CHECK(adam.steps() == 1);
  CHECK(parse_optimizer(optimizer_name(OptimizerKind::adam)) == OptimizerKind::adam);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), ConfigError);
}
