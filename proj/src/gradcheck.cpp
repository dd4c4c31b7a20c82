#include "mmfn/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <functional>

#include "mmfn/contrastive.hpp"
#include "mmfn/fusion.hpp"
#include "mmfn/objective.hpp"
#include "mmfn/rng.hpp"
#include "mmfn/vision.hpp"

namespace mmfn {

namespace {

Tensor randn(Shape shape, Rng& rng, double sd = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, sd);
  return Tensor::from(std::move(shape), std::move(v));
}

// Scalar read-out with generic weights, so no coordinate has a structurally zero gradient.
Tensor project(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

using Fn = std::function<Tensor(const Tensor&)>;
// Builds the function under test and its evaluation point from one seeded stream.
using CaseBuilder = std::function<std::pair<Fn, Tensor>(Rng&)>;

struct Suite {
  std::vector<std::pair<std::string, CaseBuilder>> cases;
  void add(std::string name, CaseBuilder b) { cases.emplace_back(std::move(name), std::move(b)); }
};

EncoderConfig tiny_encoder() { return {8, 4, 8, 1, 2}; }

Suite build_suite() {
  Suite s;
  s.add("matmul.a", [](Rng& r) {
    Tensor b = randn({4, 2}, r), w = randn({3, 2}, r);
    return std::pair{Fn([=](const Tensor& a) { return project(matmul(a, b), w); }), randn({3, 4}, r)};
  });
  s.add("matmul.b", [](Rng& r) {
    Tensor a = randn({3, 4}, r), w = randn({3, 2}, r);
    return std::pair{Fn([=](const Tensor& b) { return project(matmul(a, b), w); }), randn({4, 2}, r)};
  });
  s.add("softmax", [](Rng& r) {
    Tensor w = randn({3, 5}, r);
    return std::pair{Fn([=](const Tensor& x) { return project(softmax(x), w); }), randn({3, 5}, r)};
  });
  s.add("gelu", [](Rng& r) {
    Tensor w = randn({3, 4}, r);
    return std::pair{Fn([=](const Tensor& x) { return project(gelu(x), w); }), randn({3, 4}, r, 2.0)};
  });
  s.add("layer_norm.x", [](Rng& r) {
    Tensor g = randn({5}, r), b = randn({5}, r), w = randn({3, 5}, r);
    return std::pair{Fn([=](const Tensor& x) { return project(layer_norm(x, g, b), w); }), randn({3, 5}, r)};
  });
  s.add("layer_norm.gain", [](Rng& r) {
    Tensor x = randn({3, 5}, r), b = randn({5}, r), w = randn({3, 5}, r);
    return std::pair{Fn([=](const Tensor& g) { return project(layer_norm(x, g, b), w); }), randn({5}, r)};
  });
  s.add("layer_norm.bias", [](Rng& r) {
    Tensor x = randn({3, 5}, r), g = randn({5}, r), w = randn({3, 5}, r);
    return std::pair{Fn([=](const Tensor& b) { return project(layer_norm(x, g, b), w); }), randn({5}, r)};
  });
  s.add("cross_entropy", [](Rng& r) {
    std::vector<std::size_t> labels(4);
    for (auto& l : labels) l = r.below(3);
    return std::pair{Fn([=](const Tensor& x) { return cross_entropy(x, labels); }), randn({4, 3}, r)};
  });
  for (bool causal : {false, true}) {
    const std::string tag = causal ? "attention.causal." : "attention.";
    for (int which = 0; which < 3; ++which) {
      s.add(tag + "qkv"[which], [causal, which](Rng& r) {
        Tensor q = randn({4, 8}, r), k = randn({4, 8}, r), v = randn({4, 8}, r), w = randn({4, 8}, r);
        Fn f = [=](const Tensor& x) {
          return project(attention(which == 0 ? x : q, which == 1 ? x : k, which == 2 ? x : v, 2, causal), w);
        };
        return std::pair{f, randn({4, 8}, r)};
      });
    }
  }
  s.add("attention.segments", [](Rng& r) {
    Tensor k = randn({5, 8}, r), v = randn({5, 8}, r), w = randn({4, 8}, r);
    const std::vector<std::size_t> qs{1, 3}, ks{2, 3};
    return std::pair{Fn([=](const Tensor& q) { return project(attention(q, k, v, 2, false, qs, ks), w); }),
                     randn({4, 8}, r)};
  });
  s.add("transformer_block", [](Rng& r) {
    TransformerBlock blk = TransformerBlock::init(8, 2, r);
    Tensor w = randn({4, 8}, r);
    return std::pair{Fn([=](const Tensor& x) { return project(blk(x, true), w); }), randn({4, 8}, r)};
  });
  s.add("image_encoder", [](Rng& r) {
    const EncoderConfig cfg = tiny_encoder();
    ImageEncoder enc = ImageEncoder::init(cfg, r);
    Tensor w = randn({1, 8}, r), wp = randn({cfg.num_patches(), 8}, r);
    Fn f = [=](const Tensor& p) {
      const EncodedImage e = encode_patches(p, enc, cfg);
      return add(project(e.pooled, w), project(e.patches, wp));
    };
    return std::pair{f, randn({cfg.num_patches(), cfg.patch_dim()}, r, 0.5)};
  });
  s.add("query_fuse.queries", [](Rng& r) {
    QueryBlock blk = QueryBlock::init(3, 8, 2, r);
    Tensor patches = randn({5, 8}, r), w = randn({3, 8}, r);
    Fn f = [=](const Tensor& q) {
      QueryBlock b = blk;
      b.queries = q;
      return project(query_fuse(patches, b), w);
    };
    return std::pair{f, randn({3, 8}, r)};
  });
  s.add("query_fuse.patches", [](Rng& r) {
    QueryBlock blk = QueryBlock::init(3, 8, 2, r);
    Tensor w = randn({3, 8}, r);
    return std::pair{Fn([=](const Tensor& p) { return project(query_fuse(p, blk), w); }), randn({5, 8}, r)};
  });
  s.add("lm_forward", [](Rng& r) {
    TinyLm lm = TinyLm::init(270, 8, 2, 2, 16, r);
    Tensor w = randn({6, 8}, r);
    return std::pair{Fn([=](const Tensor& e) { return project(lm_forward(e, lm), w); }), randn({6, 8}, r)};
  });
  const char* cls_names[] = {"classify.E", "classify.fc1.weight", "classify.fc1.bias", "classify.fc2.weight",
                             "classify.fc2.bias"};
  for (int which = 0; which < 5; ++which) {
    s.add(cls_names[which], [which](Rng& r) {
      ClassifierParams p = ClassifierParams::init(8, 6, r);
      // Non-zero biases keep every coordinate generic.
      p.fc1.bias = randn({6}, r);
      p.fc2.bias = randn({2}, r);
      Tensor e = randn({5, 8}, r);
      const std::vector<std::size_t> label{1};
      Tensor point = which == 0 ? e : which == 1 ? p.fc1.weight : which == 2 ? p.fc1.bias : which == 3 ? p.fc2.weight
                                                                                                       : p.fc2.bias;
      Fn f = [=](const Tensor& x) {
        ClassifierParams q = p;
        Tensor ex = e;
        if (which == 0) ex = x;
        if (which == 1) q.fc1.weight = x;
        if (which == 2) q.fc1.bias = x;
        if (which == 3) q.fc2.weight = x;
        if (which == 4) q.fc2.bias = x;
        return cross_entropy(classify(ex, q), label);
      };
      return std::pair{f, point.detach()};
    });
  }
  s.add("awl_combine.sigma", [](Rng& r) {
    Tensor l1 = Tensor::scalar(r.uniform(0.1, 3.0)), l2 = Tensor::scalar(r.uniform(0.1, 3.0));
    Fn f = [=](const Tensor& sig) {
      const Tensor col = reshape(sig, {2, 1});
      return awl_combine(l1, l2, reshape(slice_rows(col, 0, 1), {1}), reshape(slice_rows(col, 1, 2), {1}));
    };
    return std::pair{f, Tensor::from({2}, {r.uniform(0.3, 2.5), r.uniform(0.3, 2.5)})};
  });
  s.add("awl_combine.rho", [](Rng& r) {
    Tensor l1 = Tensor::scalar(r.uniform(0.1, 3.0)), l2 = Tensor::scalar(r.uniform(0.1, 3.0));
    Fn f = [=](const Tensor& rho) {
      const Tensor col = reshape(rho, {2, 1});
      AwlState st{reshape(slice_rows(col, 0, 1), {1}), reshape(slice_rows(col, 1, 2), {1})};
      return awl_combine(l1, l2, st);
    };
    return std::pair{f, randn({2}, r)};
  });
  s.add("info_nce", [](Rng& r) {
    return std::pair{Fn([](const Tensor& x) { return info_nce(x, 0.5); }), randn({4, 4}, r)};
  });
  s.add("similarity_logits", [](Rng& r) {
    Tensor kb = l2_normalize_rows(randn({4, 6}, r)), qb = l2_normalize_rows(randn({4, 6}, r)),
           ka = l2_normalize_rows(randn({4, 6}, r));
    Fn f = [=](const Tensor& x) { return info_nce(similarity_logits(l2_normalize_rows(x), kb, qb, ka), 0.2); };
    return std::pair{f, randn({4, 6}, r)};
  });
  return s;
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(std::size_t points, std::uint64_t seed) {
  std::vector<GradCheckCase> out;
  for (const auto& [name, build] : build_suite().cases) {
    GradCheckCase c;
    c.name = name;
    c.points = points;
    Rng rng = Rng::stream(seed, name);
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t p = 0; p < points; ++p) {
      auto [f, point] = build(rng);
      c.max_error = std::max(c.max_error, grad_check(f, point));
    }
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace mmfn
