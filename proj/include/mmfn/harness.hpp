#pragma once

// Model assembly, training with gradient accumulation, evaluation and the
// two ablation protocols.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mmfn/checkpoint.hpp"
#include "mmfn/contrastive.hpp"
#include "mmfn/data.hpp"
#include "mmfn/fusion.hpp"
#include "mmfn/metrics.hpp"
#include "mmfn/objective.hpp"
#include "mmfn/text.hpp"

namespace mmfn {

enum class Mode { full, modality_image, modality_text, expA, expB, expC };
Mode parse_mode(std::string_view name);
std::string_view mode_name(Mode mode);

// Which parts of the model take part in a run.
struct ModeFlags {
  bool contrastive = true;
  bool query_fusion = true;
  bool use_image = true;
  bool use_text = true;
  bool operator==(const ModeFlags&) const = default;
};
ModeFlags mode_flags(Mode mode);

struct RunConfig {
  std::uint64_t seed = 7;
  std::size_t epochs = 30;
  std::size_t micro_batch = 16;
  std::size_t accumulate = 6;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double lr = 1e-2;
  double optimizer_momentum = 0.9;
  double m = 0.99;  // momentum-encoder coefficient
  double tau = 0.07;
  std::size_t num_queries = 8;
  bool freeze_image_encoder = true;
  Mode mode = Mode::full;
  SimilarityMode similarity = SimilarityMode::sum_transpose;
  bool awl_symmetric = false;
  double sigma1_init = 1.0;
  double sigma2_init = 1.0;
  std::size_t pretrain_steps = 0;
  std::vector<Augmentation> augmentations{Augmentation::hflip, Augmentation::grayscale, Augmentation::hue_shift};

  EncoderConfig encoder;
  std::size_t lm_layers = 2;
  std::size_t lm_heads = 4;
  std::size_t context = 96;
  std::size_t vocab_size = 512;
  std::size_t max_text_tokens = 32;
  std::size_t classifier_hidden = 32;
  std::size_t eval_batch = 64;

  std::size_t effective_batch() const { return micro_batch * accumulate; }
  ModeFlags flags() const { return mode_flags(mode); }
  void validate() const;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  // Canonical key = value text; parse(serialize()) reproduces the config.
  std::string serialize() const;
  // Hex FNV-1a of serialize().
  std::string hash() const;
};

// BPE training corpus: preprocessed training texts plus the prompt literals.
BpeVocab build_vocab(const Dataset& ds, std::size_t vocab_size);

struct Model {
  RunConfig config;
  BpeVocab vocab;
  MomentumPair encoder;
  QueryBlock qformer;
  Linear direct_proj;  // image span when the query block is disabled: one row per patch
  TinyLm lm;
  ClassifierParams head;
  AwlState awl;

  static Model init(const RunConfig& config, BpeVocab vocab);

  // Everything trained by gradient.
  template <class F>
  void visit_trainable(F&& f) {
    encoder.online.visit("online", f);
    qformer.visit("qformer", f);
    direct_proj.visit("direct_proj", f);
    lm.visit("lm", f);
    head.visit("classifier", f);
    awl.visit("awl", f);
  }
  // Trainable tensors followed by the momentum encoder.
  template <class F>
  void visit_all(F&& f) {
    visit_trainable(f);
    encoder.momentum.visit("momentum", f);
  }
  ParamList trainable() { return collect_all(false); }
  ParamList all() { return collect_all(true); }

  CheckpointHeader checkpoint_header() const;
  std::string encode() { return encode_checkpoint(checkpoint_header(), all()); }
  void save(const std::filesystem::path& path) { save_checkpoint(path, checkpoint_header(), all()); }
  // Config and vocab come from the checkpoint header; tensors must match by name and shape.
  static Model from_checkpoint(const Checkpoint& ckpt);
  static Model load(const std::filesystem::path& path) { return from_checkpoint(load_checkpoint(path)); }

 private:
  ParamList collect_all(bool with_momentum);
};

struct BatchOutput {
  Tensor logits;  // [B × 2]
  Tensor l1;      // contrastive loss; empty when the branch is off
  Tensor l2;      // classification loss
  Tensor loss;    // what is back-propagated
  double diagonal_accuracy = 0.0;
};

// Drives one model through training. Randomness comes from named streams of
// the config seed: data (shuffling), augment (view B), prompt (templates).
class Trainer {
 public:
  Trainer(const RunConfig& config, const Dataset& ds);
  Trainer(Model model, const Dataset& ds);

  Model& model() { return model_; }
  const RunConfig& config() const { return model_.config; }

  // Training forward pass: random templates, augmented second views.
  BatchOutput forward(std::span<const NewsRecord* const> batch);
  // Forward and backward with the loss multiplied by `scale`. Returns the unscaled output.
  BatchOutput accumulate(std::span<const NewsRecord* const> batch, double scale);
  // Optimizer step, then the momentum update when the contrastive branch is live; zeroes grads.
  void step();
  std::size_t steps() const { return optimizer_.steps(); }

  // Contrastive-only steps on the online encoder.
  double pretrain_contrastive(std::size_t steps, std::size_t batch_size);

  EpochTrace run_epoch();
  std::size_t epoch() const { return epoch_; }

 private:
  BatchOutput forward_impl(std::span<const NewsRecord* const> batch, bool training);

  Model model_;
  const Dataset* ds_;
  std::vector<const NewsRecord*> train_;
  Optimizer optimizer_;
  ParamList params_;
  Rng data_rng_, augment_rng_, prompt_rng_;
  std::size_t epoch_ = 0;
  std::unordered_map<std::string, TokenSequence> token_cache_;
  std::unordered_map<std::string, Tensor> features_;  // used only while the encoder cannot change
};

// Fixed template 3, no augmentation, argmax decisions.
MetricsReport evaluate(Model& model, const Dataset& ds, Split split);
std::vector<int> predict(Model& model, std::span<const NewsRecord* const> records);

struct TrainResult {
  Model model;                 // best-validation-accuracy parameters
  MetricsReport validation;    // of the retained model, with the full trace
  std::size_t best_epoch = 0;  // 0 = untrained
};

// Epochs run in order; after each, validation picks the retained model
// (higher accuracy, then lower loss). A non-finite loss raises DivergenceError.
TrainResult train(const RunConfig& config, const Dataset& ds);

// Diagonal accuracy of in-batch retrieval on `heldout` unseen records after
// `steps` contrastive steps.
struct ContrastiveSanity {
  double train_loss = 0.0;
  double heldout_accuracy = 0.0;
  std::size_t heldout = 0;
};
ContrastiveSanity contrastive_sanity(const RunConfig& config, const Dataset& ds, std::size_t steps,
                                     std::size_t batch_size, std::size_t heldout);

enum class Protocol { modality, modules };
Protocol parse_protocol(std::string_view name);
std::string_view protocol_name(Protocol p);

struct AblationRow {
  std::string protocol;
  std::string run;  // image, text, image+text; expA, expB, expC
  Mode mode = Mode::full;
  ModeFlags flags;
  std::string config_hash;
  MetricsReport test;
  MetricsReport validation;
};

// Runs with identical configs (by hash) are trained once per cache.
using RunCache = std::unordered_map<std::string, TrainResult>;
std::vector<AblationRow> ablate(Protocol protocol, const RunConfig& base, const Dataset& ds, bool parallel = false,
                                RunCache* cache = nullptr);
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace mmfn
