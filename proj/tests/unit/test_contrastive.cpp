#include <doctest.h>

#include <cmath>

#include "mmfn/contrastive.hpp"
#include "mmfn/errors.hpp"
#include "support.hpp"

using namespace mmfn;
using mmfn::testing::random_tensor;

namespace {

Tensor unit_rows(Shape shape, Rng& rng) { return l2_normalize_rows(random_tensor(std::move(shape), rng, 1.0, false)); }

}  // namespace

TEST_CASE("momentum update endpoints and arithmetic") {
  Tensor x = Tensor::full({3}, 1.0), y = Tensor::full({3}, 2.0);
  const ParamList online{{"p", x}}, mom{{"p", y}};
  momentum_update(online, mom, 1.0);
  CHECK(y[0] == 2.0);
  momentum_update(online, mom, 0.9);
  CHECK(std::abs(y[0] - 1.9000000000000001) < 1e-15);
  momentum_update(online, mom, 0.0);
  CHECK(y[1] == 1.0);
}

TEST_CASE("momentum recurrence contracts geometrically") {
  Rng rng(1);
  Tensor x = random_tensor({4, 5}, rng, 1.0, false), y = random_tensor({4, 5}, rng, 1.0, false);
  auto dist = [&] {
    double s = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += (y[i] - x[i]) * (y[i] - x[i]);
    return std::sqrt(s);
  };
  const double d0 = dist();
  for (int t = 0; t < 20; ++t) momentum_update({{"p", x}}, {{"p", y}}, 0.9);
  CHECK(std::abs(dist() - 0.12157665459056935 * d0) < 1e-12);
}

TEST_CASE("momentum pair starts as a copy and never records gradients") {
  Rng rng(2);
  const EncoderConfig cfg{16, 8, 16, 1, 2};
  MomentumPair pair = MomentumPair::init(cfg, 0.99, rng);
  const ParamList on = collect_params(pair.online, "e"), mo = collect_params(pair.momentum, "e");
  REQUIRE(on.size() == mo.size());
  for (std::size_t i = 0; i < on.size(); ++i) {
    CHECK(on[i].tensor.data().data() != mo[i].tensor.data().data());
    CHECK(mmfn::testing::max_abs_diff(on[i].tensor.data(), mo[i].tensor.data()) == 0.0);
    CHECK_FALSE(mo[i].tensor.requires_grad());
  }
}

TEST_CASE("similarity of identical and orthonormal rows") {
  const Tensor same = l2_normalize_rows(Tensor::full({3, 4}, 1.0));
  const Tensor s = similarity_logits(same, same, same, same);
  for (double v : s.data()) CHECK(std::abs(v - 2.0) < 1e-12);

  const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor e = similarity_logits(eye, eye, eye, eye);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(e.at(i, j) == (i == j ? 2.0 : 0.0));
}

TEST_CASE("similarity matches a double-loop oracle") {
  Rng rng(3);
  const Tensor qa = unit_rows({3, 5}, rng), kb = unit_rows({3, 5}, rng), qb = unit_rows({3, 5}, rng),
               ka = unit_rows({3, 5}, rng);
  auto dot = [](const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    double s = 0;
    for (std::size_t c = 0; c < a.cols(); ++c) s += a.at(i, c) * b.at(j, c);
    return s;
  };
  const Tensor t = similarity_logits(qa, kb, qb, ka, SimilarityMode::sum_transpose);
  const Tensor p = similarity_logits(qa, kb, qb, ka, SimilarityMode::sum_plain);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(std::abs(t.at(i, j) - (dot(qa, i, kb, j) + dot(ka, i, qb, j))) < 1e-12);
      CHECK(std::abs(p.at(i, j) - (dot(qa, i, kb, j) + dot(qb, i, ka, j))) < 1e-12);
    }
}

TEST_CASE("similarity rejects rows that are not unit norm") {
  const Tensor raw = Tensor::full({2, 3}, 1.0);
  CHECK_THROWS_AS(similarity_logits(raw, raw, raw, raw), ContractError);
}

TEST_CASE("info_nce uniform case is log B") {
  for (std::size_t b : {2u, 4u, 8u})
    for (double tau : {0.07, 0.5, 3.0}) {
      const Tensor z = Tensor::full({b, b}, 0.37);
      CHECK(std::abs(info_nce(z, tau).item() - std::log(static_cast<double>(b))) < 1e-10);
    }
}

TEST_CASE("info_nce scalar cases") {
  const Tensor two = Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(std::abs(info_nce(two, 0.5).item() - 0.12692801104297269) < 1e-12);
  Tensor d = Tensor::zeros({4, 4});
  for (std::size_t i = 0; i < 4; ++i) d.mutable_data()[i * 5] = 20.0;
  CHECK(info_nce(d, 1.0).item() < 1e-8);
}

TEST_CASE("info_nce ignores row shifts and improves with the diagonal") {
  Rng rng(4);
  const Tensor z = random_tensor({4, 4}, rng, 1.0, false);
  std::vector<double> shifted(z.data().begin(), z.data().end());
  for (std::size_t j = 0; j < 4; ++j) shifted[2 * 4 + j] += 5.5;
  const double base = info_nce(z, 0.2).item();
  CHECK(std::abs(base - info_nce(Tensor::from({4, 4}, shifted), 0.2).item()) < 1e-12);
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> up(z.data().begin(), z.data().end());
    up[i * 5] += 1e-3;
    CHECK(info_nce(Tensor::from({4, 4}, up), 0.2).item() < base);
  }
}

TEST_CASE("info_nce gradient on a random batch of four") {
  Rng rng(5);
  CHECK(grad_check([](const Tensor& x) { return info_nce(x, 0.3); }, random_tensor({4, 4}, rng)) < 1e-4);
}

TEST_CASE("gradients reach the online encoder only") {
  Rng rng(6);
  const EncoderConfig cfg{16, 8, 16, 1, 2};
  MomentumPair pair = MomentumPair::init(cfg, 0.99, rng);
  std::vector<Image> a, b;
  for (int i = 0; i < 3; ++i) {
    Image img = Image::blank(16, 16);
    for (auto& p : img.pixels) p = rng.uniform();
    a.push_back(img);
    b.push_back(augment(img, Augmentation::hflip, 0));
  }
  const ContrastiveBatch cb = contrastive_forward(pair, cfg, a, b, 0.1);
  CHECK(cb.logits.shape() == Shape{3, 3});
  CHECK(cb.patches_a.shape() == Shape{12, 16});
  CHECK_FALSE(cb.k.requires_grad());
  backward(cb.loss);
  bool any_online = false;
  for (const auto& [name, t] : collect_params(pair.online, "online"))
    if (t.has_grad())
      for (double g : t.grad()) any_online = any_online || g != 0.0;
  CHECK(any_online);
  for (const auto& [name, t] : collect_params(pair.momentum, "momentum")) CHECK_FALSE(t.has_grad());
}

TEST_CASE("diagonal accuracy") {
  const Tensor z = Tensor::from({3, 3}, {5, 1, 0, 0, 1, 2, 0, 0, 3});
  CHECK(std::abs(diagonal_accuracy(z) - 2.0 / 3.0) < 1e-15);
}
