#include <doctest.h>

#include <cmath>

#include "mmfn/errors.hpp"
#include "mmfn/gradcheck.hpp"
#include "mmfn/nn.hpp"
#include "support.hpp"

using namespace mmfn;
using mmfn::testing::random_tensor;
using mmfn::testing::readout;

TEST_CASE("matmul small cases") {
  const Tensor id = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor r = matmul(id, a);
  CHECK(std::vector<double>(r.data().begin(), r.data().end()) == std::vector<double>{1, 2, 3, 4});

  const Tensor p = Tensor::from({2, 2}, {1, 0, 0, 0});
  const Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  const Tensor s = matmul(p, b);
  CHECK(std::vector<double>(s.data().begin(), s.data().end()) == std::vector<double>{5, 6, 0, 0});

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST_CASE("matmul gradient on a 3x4 by 4x2 product") {
  Rng rng(3);
  const Tensor b = random_tensor({4, 2}, rng, 1.0, false);
  const Tensor a = random_tensor({3, 4}, rng);
  CHECK(grad_check(readout([&](const Tensor& x) { return matmul(x, b); }), a) < 1e-6);
}

TEST_CASE("softmax values and stability") {
  const Tensor z = softmax(Tensor::from({1, 2}, {0, 0}));
  CHECK(z[0] == doctest::Approx(0.5).epsilon(1e-15));
  const Tensor big = softmax(Tensor::from({1, 2}, {1000, 1000}));
  CHECK(big[0] == 0.5);
  CHECK(big[1] == 0.5);
  const Tensor t = softmax(Tensor::from({1, 3}, {1, 2, 3}));
  CHECK(std::abs(t[0] - 0.090030573170380462) < 1e-12);
  CHECK(std::abs(t[1] - 0.24472847105479764) < 1e-12);
  CHECK(std::abs(t[2] - 0.66524095577482178) < 1e-12);
}

TEST_CASE("softmax rows sum to one and ignore shifts") {
  Rng rng(5);
  const Tensor x = random_tensor({6, 7}, rng, 3.0, false);
  const Tensor y = softmax(x);
  const Tensor ys = softmax(add_scalar(x, 41.5));
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      s += y.at(r, c);
      CHECK(std::abs(y.at(r, c) - ys.at(r, c)) < 1e-12);
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("gelu uses the exact erf form") {
  const Tensor g = gelu(Tensor::from({3}, {0.0, 1.0, -10.0}));
  CHECK(g[0] == 0.0);
  CHECK(std::abs(g[1] - 0.84134474606854293) < 1e-12);
  CHECK(std::abs(g[2]) < 1e-8);
}

TEST_CASE("layer_norm") {
  const Tensor gain = Tensor::full({2}, 1.0), bias = Tensor::zeros({2});
  const Tensor c = layer_norm(Tensor::from({1, 2}, {3.0, 3.0}), gain, bias);
  CHECK(c[0] == 0.0);
  CHECK(c[1] == 0.0);
  const Tensor u = layer_norm(Tensor::from({1, 2}, {1.0, -1.0}), gain, bias);
  CHECK(std::abs(u[0] - 1.0) < 1e-4);
  CHECK(std::abs(u[1] + 1.0) < 1e-4);
  CHECK(std::abs(u[0] - 0.99999500003749975) < 1e-12);
}

TEST_CASE("cross_entropy") {
  const std::vector<std::size_t> zero{0};
  CHECK(std::abs(cross_entropy(Tensor::from({1, 2}, {0, 0}), zero).item() - std::log(2.0)) < 1e-15);
  CHECK(std::abs(cross_entropy(Tensor::from({1, 2}, {10, -10}), zero).item() - 2.061153026033935e-09) < 1e-18);

  const Tensor two = Tensor::from({2, 2}, {2, -1, -1, 2});
  const std::vector<std::size_t> labels{0, 0};
  const double row0 = cross_entropy(slice_rows(two, 0, 1), std::vector<std::size_t>{0}).item();
  const double row1 = cross_entropy(slice_rows(two, 1, 2), std::vector<std::size_t>{0}).item();
  CHECK(std::abs(cross_entropy(two, labels).item() - 0.5 * (row0 + row1)) < 1e-15);
  CHECK_THROWS_AS(cross_entropy(two, std::vector<std::size_t>{0, 2}), IndexError);
}

TEST_CASE("backward basics") {
  const Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  const Tensor y = Tensor::scalar(3.0, true);
  backward(mul(y, y));
  CHECK(y.grad()[0] == 6.0);
}

TEST_CASE("leaf gradients accumulate across backward calls") {
  Tensor x = Tensor::scalar(2.0, true);
  backward(scale(x, 3.0));
  backward(scale(x, 3.0));
  CHECK(x.grad()[0] == 6.0);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("a node with two consumers receives both contributions") {
  Rng rng(9);
  const Tensor w = random_tensor({3, 3}, rng, 1.0, false);
  auto f = [&](const Tensor& x) {
    const Tensor h = gelu(matmul(x, w));
    return sum(add(mul(h, h), scale(h, 2.0)));
  };
  CHECK(grad_check(f, random_tensor({2, 3}, rng)) < 1e-6);
}

TEST_CASE("composite MLP gradients match finite differences") {
  Rng rng(21);
  Linear l1 = Linear::init(5, 7, rng), l2 = Linear::init(7, 2, rng);
  const std::vector<std::size_t> labels{1, 0, 1};
  auto loss = [&](const Tensor& x) { return cross_entropy(l2(gelu(l1(x))), labels); };
  CHECK(grad_check(loss, random_tensor({3, 5}, rng)) < 1e-4);
  auto wrt_weight = [&](const Tensor& w) {
    return cross_entropy(l2(gelu(add_bias(matmul(Tensor::full({3, 5}, 0.3), w), l1.bias))), labels);
  };
  CHECK(grad_check(wrt_weight, l1.weight.clone_leaf(true)) < 1e-4);
}

TEST_CASE("grad_check on a linear function is exact") {
  Rng rng(2);
  CHECK(grad_check([](const Tensor& x) { return sum(x); }, random_tensor({4, 3}, rng)) < 1e-10);
}

TEST_CASE("seeded forward and backward are bit-identical") {
  auto run = [] {
    Rng rng(77);
    TransformerBlock block = TransformerBlock::init(8, 2, rng);
    const Tensor x = random_tensor({5, 8}, rng);
    const Tensor y = block(x, true);
    backward(sum(mul(y, y)));
    return std::pair{std::vector<double>(y.data().begin(), y.data().end()),
                     std::vector<double>(x.grad().begin(), x.grad().end())};
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("no-grad guard keeps results off the tape") {
  const Tensor x = Tensor::scalar(1.0, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = mul(x, x);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(grad_enabled());
}

TEST_CASE("segmented attention equals separate attention calls") {
  Rng rng(13);
  const Tensor q = random_tensor({7, 4}, rng, 1.0, false);
  const Tensor k = random_tensor({7, 4}, rng, 1.0, false);
  const Tensor v = random_tensor({7, 4}, rng, 1.0, false);
  const std::vector<std::size_t> seg{3, 4};
  for (bool causal : {false, true}) {
    const Tensor joint = attention(q, k, v, 2, causal, seg);
    const Tensor a = attention(slice_rows(q, 0, 3), slice_rows(k, 0, 3), slice_rows(v, 0, 3), 2, causal);
    const Tensor b = attention(slice_rows(q, 3, 7), slice_rows(k, 3, 7), slice_rows(v, 3, 7), 2, causal);
    const Tensor sep = concat_rows({a, b});
    CHECK(mmfn::testing::max_abs_diff(joint.data(), sep.data()) < 1e-14);
  }
}

TEST_CASE("causal attention ignores later rows") {
  Rng rng(4);
  const Tensor q = random_tensor({5, 4}, rng, 1.0, false);
  const Tensor k = random_tensor({5, 4}, rng, 1.0, false);
  Tensor v = random_tensor({5, 4}, rng, 1.0, false);
  const Tensor before = attention(q, k, v, 2, true);
  v.mutable_data()[4 * 4 + 1] += 10.0;
  const Tensor after = attention(q, k, v, 2, true);
  for (std::size_t i = 0; i < 4 * 4; ++i) CHECK(before[i] == after[i]);
  CHECK(before[16 + 1] != after[16 + 1]);
}

TEST_CASE("embedding gradient sums duplicate rows") {
  Rng rng(8);
  const std::vector<std::size_t> ids{1, 3, 1, 1};
  auto f = [&](const Tensor& table) { return sum(square(embedding(table, ids))); };
  const Tensor table = random_tensor({5, 3}, rng);
  CHECK(grad_check(f, table) < 1e-6);
  backward(sum(embedding(table, ids)));
  CHECK(table.grad()[3 * 1] == 3.0);
  CHECK(table.grad()[3 * 3] == 1.0);
  CHECK(table.grad()[0] == 0.0);
}

TEST_CASE("segment_mean_rows averages consecutive blocks") {
  const Tensor x = Tensor::from({3, 2}, {1, 2, 3, 4, 8, 9});
  const std::vector<std::size_t> lengths{2, 1};
  const Tensor m = segment_mean_rows(x, lengths);
  CHECK(m.shape() == Shape{2, 2});
  CHECK(m[0] == 2.0);
  CHECK(m[1] == 3.0);
  CHECK(m[2] == 8.0);
}

TEST_CASE("shape errors are reported") {
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
  CHECK_THROWS_AS(slice_rows(Tensor::zeros({2, 2}), 1, 3), IndexError);
  CHECK_THROWS_AS(reshape(Tensor::zeros({2, 2}), {3}), DimensionError);
}

TEST_CASE("gradient suite passes for every op") {
  for (const auto& c : run_gradcheck_suite()) {
    CAPTURE(c.name);
    CHECK(c.points == 10);
    CHECK(c.passed());
  }
}
