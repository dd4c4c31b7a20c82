#pragma once

// Momentum-encoder contrastive objective over in-batch similarity matrices.

#include <vector>

#include "mmfn/vision.hpp"

namespace mmfn {

// Online encoder trained by gradient; momentum twin follows an exponential
// moving average of it and never enters the tape.
struct MomentumPair {
  ImageEncoder online;
  ImageEncoder momentum;
  double m = 0.99;

  static MomentumPair init(const EncoderConfig& cfg, double m, Rng& rng);
};

// y <- m*y + (1-m)*x for every momentum parameter y and its online twin x.
void momentum_update(MomentumPair& pair);
void momentum_update(const ParamList& online, const ParamList& momentum, double m);

enum class SimilarityMode { sum_transpose, sum_plain };

SimilarityMode parse_similarity_mode(std::string_view name);
std::string_view similarity_mode_name(SimilarityMode mode);

// S1 = qa·kbᵀ and S2 = qb·kaᵀ; returns S1 + S2ᵀ (sum_transpose) or S1 + S2.
// Rows must be unit norm within 1e-6.
Tensor similarity_logits(const Tensor& qa, const Tensor& kb, const Tensor& qb, const Tensor& ka,
                         SimilarityMode mode = SimilarityMode::sum_transpose);

// Mean over rows of cross-entropy of softmax(logits/tau) against the diagonal.
Tensor info_nce(const Tensor& logits, double tau);

struct ContrastiveBatch {
  std::size_t batch_size = 0;
  Tensor q;       // online pooled features of view A, [B × d]
  Tensor k;       // momentum pooled features of view B, [B × d]
  Tensor logits;  // [B × B]
  Tensor loss;
  double tau = 0.07;
  Tensor patches_a;  // online per-patch sequences of view A, [B·num_patches × d]
};

// Runs both encoders over paired views. view_a[i] and view_b[i] derive from the same source.
ContrastiveBatch contrastive_forward(const MomentumPair& pair, const EncoderConfig& cfg,
                                     const std::vector<Image>& view_a, const std::vector<Image>& view_b, double tau,
                                     SimilarityMode mode = SimilarityMode::sum_transpose);

// Fraction of rows whose argmax is the diagonal entry.
double diagonal_accuracy(const Tensor& logits);

}  // namespace mmfn
