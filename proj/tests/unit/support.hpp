#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "mmfn/harness.hpp"
#include "mmfn/rng.hpp"
#include "mmfn/tensor.hpp"

namespace mmfn::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Fixed random projection makes any tensor-valued function a scalar loss.
inline std::function<Tensor(const Tensor&)> readout(std::function<Tensor(const Tensor&)> f, std::uint64_t seed = 1) {
  auto weights = std::make_shared<Tensor>();
  return [f = std::move(f), weights, seed](const Tensor& x) {
    Tensor y = f(x);
    if (!*weights) {
      Rng rng(seed);
      *weights = random_tensor(y.shape(), rng, 1.0, false);
    }
    return sum(mul(y, *weights));
  };
}

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(MMFN_FIXTURE_DIR) / name;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mmfn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Small enough to train in seconds.
inline RunConfig tiny_config(Mode mode = Mode::full) {
  RunConfig c;
  c.mode = mode;
  c.epochs = 1;
  c.micro_batch = 4;
  c.accumulate = 3;
  c.num_queries = 4;
  c.encoder = EncoderConfig{16, 8, 16, 1, 2};
  c.lm_layers = 1;
  c.lm_heads = 2;
  c.context = 64;
  c.vocab_size = 400;
  c.max_text_tokens = 16;
  c.classifier_hidden = 8;
  c.eval_batch = 16;
  return c;
}

inline Dataset tiny_dataset(std::size_t n = 60, std::uint64_t seed = 11) {
  SyntheticSpec s;
  s.num_records = n;
  s.image_side = 16;
  s.seed = seed;
  return generate_synthetic(s);
}

}  // namespace mmfn::testing
