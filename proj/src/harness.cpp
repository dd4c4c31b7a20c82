#include "mmfn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <iomanip>
#include <map>
#include <sstream>

#include "mmfn/config.hpp"
#include "mmfn/errors.hpp"
#include "mmfn/rng.hpp"

namespace mmfn {

// ---------------------------------------------------------------- modes

Mode parse_mode(std::string_view name) {
  if (name == "full") return Mode::full;
  if (name == "modality_image") return Mode::modality_image;
  if (name == "modality_text") return Mode::modality_text;
  if (name == "expA") return Mode::expA;
  if (name == "expB") return Mode::expB;
  if (name == "expC") return Mode::expC;
  throw ConfigError("unknown mode '" + std::string(name) + "'");
}

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::full:
      return "full";
    case Mode::modality_image:
      return "modality_image";
    case Mode::modality_text:
      return "modality_text";
    case Mode::expA:
      return "expA";
    case Mode::expB:
      return "expB";
    case Mode::expC:
      return "expC";
  }
  return "?";
}

ModeFlags mode_flags(Mode mode) {
  switch (mode) {
    case Mode::modality_image:
      return {true, true, true, false};
    case Mode::modality_text:
      // No image input leaves nothing for the contrastive branch to train.
      return {false, true, false, true};
    case Mode::expA:
      return {false, false, true, true};
    case Mode::expB:
      return {true, false, true, true};
    case Mode::full:
    case Mode::expC:
      break;
  }
  return {true, true, true, true};
}

// ---------------------------------------------------------------- config

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

std::string augmentation_list(const std::vector<Augmentation>& ops) {
  std::string s;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (i) s += ",";
    s += augmentation_name(ops[i]);
  }
  return s;
}

std::vector<Augmentation> parse_augmentation_list(const std::string& value) {
  std::vector<Augmentation> ops;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) ops.push_back(parse_augmentation(item));
  }
  return ops;
}

// Everything except the mode, in a fixed order.
std::vector<std::pair<std::string, std::string>> config_body(const RunConfig& c) {
  return {
      {"seed", std::to_string(c.seed)},
      {"epochs", std::to_string(c.epochs)},
      {"micro_batch", std::to_string(c.micro_batch)},
      {"accumulate", std::to_string(c.accumulate)},
      {"optimizer", std::string(optimizer_name(c.optimizer))},
      {"lr", fmt_double(c.lr)},
      {"optimizer_momentum", fmt_double(c.optimizer_momentum)},
      {"m", fmt_double(c.m)},
      {"tau", fmt_double(c.tau)},
      {"num_queries", std::to_string(c.num_queries)},
      {"freeze_image_encoder", fmt_bool(c.freeze_image_encoder)},
      {"similarity", std::string(similarity_mode_name(c.similarity))},
      {"awl_symmetric", fmt_bool(c.awl_symmetric)},
      {"sigma1_init", fmt_double(c.sigma1_init)},
      {"sigma2_init", fmt_double(c.sigma2_init)},
      {"pretrain_steps", std::to_string(c.pretrain_steps)},
      {"augmentations", augmentation_list(c.augmentations)},
      {"image_side", std::to_string(c.encoder.image_side)},
      {"patch_size", std::to_string(c.encoder.patch_size)},
      {"model_dim", std::to_string(c.encoder.model_dim)},
      {"encoder_layers", std::to_string(c.encoder.layers)},
      {"encoder_heads", std::to_string(c.encoder.heads)},
      {"lm_layers", std::to_string(c.lm_layers)},
      {"lm_heads", std::to_string(c.lm_heads)},
      {"context", std::to_string(c.context)},
      {"vocab_size", std::to_string(c.vocab_size)},
      {"max_text_tokens", std::to_string(c.max_text_tokens)},
      {"classifier_hidden", std::to_string(c.classifier_hidden)},
      {"eval_batch", std::to_string(c.eval_batch)},
  };
}

}  // namespace

void RunConfig::validate() const {
  encoder.validate();
  if (micro_batch == 0 || accumulate == 0) throw ConfigError("micro_batch and accumulate must be positive");
  if (flags().contrastive && micro_batch < 2) throw ConfigError("the contrastive branch needs micro_batch >= 2");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(optimizer_momentum >= 0.0 && optimizer_momentum < 1.0))
    throw ConfigError("optimizer_momentum must lie in [0,1)");
  if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("m must lie in [0,1]");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (num_queries == 0) throw ConfigError("num_queries must be positive");
  if (!(sigma1_init > kSigmaFloor) || !(sigma2_init > kSigmaFloor)) throw ConfigError("sigma inits must be positive");
  if (augmentations.empty()) throw ConfigError("augmentations must name at least one operation");
  if (lm_layers == 0 || lm_heads == 0 || encoder.model_dim % lm_heads != 0)
    throw ConfigError("lm_heads must divide model_dim");
  if (vocab_size <= BpeVocab::kFirstMerge) throw ConfigError("vocab_size must exceed the byte and special tokens");
  if (context < 16) throw ConfigError("context must be at least 16");
  if (classifier_hidden == 0 || eval_batch == 0) throw ConfigError("classifier_hidden and eval_batch must be positive");
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (k == "seed") c.seed = parse_size(k, v);
    else if (k == "epochs") c.epochs = parse_size(k, v);
    else if (k == "micro_batch") c.micro_batch = parse_size(k, v);
    else if (k == "accumulate") c.accumulate = parse_size(k, v);
    else if (k == "optimizer") c.optimizer = parse_optimizer(v);
    else if (k == "lr") c.lr = parse_double(k, v);
    else if (k == "optimizer_momentum") c.optimizer_momentum = parse_double(k, v);
    else if (k == "m") c.m = parse_double(k, v);
    else if (k == "tau") c.tau = parse_double(k, v);
    else if (k == "num_queries") c.num_queries = parse_size(k, v);
    else if (k == "freeze_image_encoder") c.freeze_image_encoder = parse_bool(k, v);
    else if (k == "mode") c.mode = parse_mode(v);
    else if (k == "similarity") c.similarity = parse_similarity_mode(v);
    else if (k == "awl_symmetric") c.awl_symmetric = parse_bool(k, v);
    else if (k == "sigma1_init") c.sigma1_init = parse_double(k, v);
    else if (k == "sigma2_init") c.sigma2_init = parse_double(k, v);
    else if (k == "pretrain_steps") c.pretrain_steps = parse_size(k, v);
    else if (k == "augmentations") c.augmentations = parse_augmentation_list(v);
    else if (k == "image_side") c.encoder.image_side = parse_size(k, v);
    else if (k == "patch_size") c.encoder.patch_size = parse_size(k, v);
    else if (k == "model_dim") c.encoder.model_dim = parse_size(k, v);
    else if (k == "encoder_layers") c.encoder.layers = parse_size(k, v);
    else if (k == "encoder_heads") c.encoder.heads = parse_size(k, v);
    else if (k == "lm_layers") c.lm_layers = parse_size(k, v);
    else if (k == "lm_heads") c.lm_heads = parse_size(k, v);
    else if (k == "context") c.context = parse_size(k, v);
    else if (k == "vocab_size") c.vocab_size = parse_size(k, v);
    else if (k == "max_text_tokens") c.max_text_tokens = parse_size(k, v);
    else if (k == "classifier_hidden") c.classifier_hidden = parse_size(k, v);
    else if (k == "eval_batch") c.eval_batch = parse_size(k, v);
    else throw ConfigError("unknown config key '" + k + "'");
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return parse(read_text_file(path)); }

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << "mode = " << mode_name(mode) << '\n';
  for (const auto& [k, v] : config_body(*this)) os << k << " = " << v << '\n';
  return os.str();
}

std::string RunConfig::hash() const {
  // Hash the live flags rather than the mode name, so runs that train the
  // same thing (full and expC) share a hash.
  const ModeFlags f = flags();
  std::ostringstream os;
  os << "contrastive = " << fmt_bool(f.contrastive) << '\n'
     << "query_fusion = " << fmt_bool(f.query_fusion) << '\n'
     << "use_image = " << fmt_bool(f.use_image) << '\n'
     << "use_text = " << fmt_bool(f.use_text) << '\n';
  for (const auto& [k, v] : config_body(*this)) os << k << " = " << v << '\n';
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(os.str())));
  return buf;
}

// ---------------------------------------------------------------- model

BpeVocab build_vocab(const Dataset& ds, std::size_t vocab_size) {
  std::vector<std::string> corpus;
  for (const auto& r : ds.records)
    if (r.split == Split::train) corpus.push_back(preprocess_text(r.text));
  for (const auto& t : prompt_templates()) {
    std::string literal = t.text;
    for (const char* marker : {kImagePlaceholder, kTextPlaceholder, "<Text>", "</Text>"}) {
      for (auto p = literal.find(marker); p != std::string::npos; p = literal.find(marker))
        literal.replace(p, std::char_traits<char>::length(marker), "\n");
    }
    std::stringstream ss(literal);
    std::string piece;
    while (std::getline(ss, piece))
      if (!piece.empty()) corpus.push_back(piece);
  }
  if (corpus.empty()) throw DataError("no training text to build a vocabulary from");
  return bpe_train(corpus, vocab_size);
}

Model Model::init(const RunConfig& config, BpeVocab vocab) {
  config.validate();
  Model mdl;
  mdl.config = config;
  mdl.vocab = std::move(vocab);
  Rng rng = Rng::stream(config.seed, "init");
  const std::size_t d = config.encoder.model_dim;
  mdl.encoder = MomentumPair::init(config.encoder, config.m, rng);
  mdl.qformer = QueryBlock::init(config.num_queries, d, config.encoder.heads, rng);
  mdl.direct_proj = Linear::init(d, d, rng);
  mdl.lm = TinyLm::init(std::max(mdl.vocab.vocab_size(), mdl.vocab.size()), d, config.lm_layers, config.lm_heads,
                        config.context, rng);
  mdl.head = ClassifierParams::init(d, config.classifier_hidden, rng);
  mdl.awl = AwlState::init(config.sigma1_init, config.sigma2_init);
  return mdl;
}

ParamList Model::collect_all(bool with_momentum) {
  ParamList out;
  auto f = [&](const std::string& name, Tensor& t) { out.push_back({name, t}); };
  if (with_momentum) visit_all(f);
  else visit_trainable(f);
  return out;
}

CheckpointHeader Model::checkpoint_header() const {
  CheckpointHeader h;
  h.config = config.serialize();
  h.vocab = vocab.serialize();
  h.metadata["config_hash"] = config.hash();
  h.metadata["mode"] = std::string(mode_name(config.mode));
  return h;
}

Model Model::from_checkpoint(const Checkpoint& ckpt) {
  RunConfig cfg;
  BpeVocab vocab;
  try {
    cfg = RunConfig::parse(ckpt.header.config);
    vocab = BpeVocab::parse(ckpt.header.vocab);
  } catch (const Error& e) {
    throw CompatibilityError(std::string("checkpoint header does not describe a model: ") + e.what());
  }
  Model mdl = Model::init(cfg, std::move(vocab));
  restore_params(ckpt, mdl.all());
  return mdl;
}

namespace {

Model clone_model(Model& src) {
  Model copy = src;
  copy.visit_all([](const std::string&, Tensor& t) { t = t.clone_leaf(t.requires_grad()); });
  return copy;
}

using Batch = std::span<const NewsRecord* const>;

struct ForwardContext {
  bool training = false;
  Rng* augment = nullptr;
  Rng* prompt = nullptr;
  std::unordered_map<std::string, TokenSequence>* tokens = nullptr;
  std::unordered_map<std::string, Tensor>* features = nullptr;  // frozen encoder only
};

TokenSequence record_tokens(const NewsRecord& r, const Model& mdl, ForwardContext& ctx) {
  if (ctx.tokens) {
    auto it = ctx.tokens->find(r.id);
    if (it != ctx.tokens->end()) return it->second;
  }
  TokenSequence seq = tokenize(preprocess_text(r.text), mdl.vocab, mdl.config.max_text_tokens);
  if (ctx.tokens) ctx.tokens->emplace(r.id, seq);
  return seq;
}

Tensor frozen_patches(Batch batch, Model& mdl, ForwardContext& ctx) {
  const EncoderConfig& ec = mdl.config.encoder;
  NoGradGuard no_grad;
  if (!ctx.features) {
    std::vector<Image> imgs;
    for (const auto* r : batch) imgs.push_back(r->image);
    return encode_images(imgs, mdl.encoder.online, ec).patches;
  }
  std::vector<Tensor> parts;
  for (const auto* r : batch) {
    auto it = ctx.features->find(r->id);
    if (it == ctx.features->end())
      it = ctx.features->emplace(r->id, encode_image(r->image, mdl.encoder.online, ec).patches.detach()).first;
    parts.push_back(it->second);
  }
  return concat_rows(parts);
}

BatchOutput forward_batch(Batch batch, Model& mdl, ForwardContext& ctx) {
  if (batch.empty()) throw ContractError("forward: empty batch");
  const RunConfig& cfg = mdl.config;
  const ModeFlags flags = cfg.flags();
  const std::size_t b = batch.size(), d = cfg.encoder.model_dim;
  BatchOutput out;

  Tensor image_rows;
  std::size_t per_image = 0;
  if (flags.use_image) {
    Tensor patches;
    if (ctx.training && flags.contrastive) {
      if (b < 2) throw ContractError("contrastive branch needs at least two records per batch");
      std::vector<Image> va, vb;
      for (const auto* r : batch) {
        va.push_back(r->image);
        const Augmentation op = pick_augmentation(ctx.augment->next(), cfg.augmentations);
        vb.push_back(augment(r->image, op, ctx.augment->next()));
      }
      ContrastiveBatch cb = contrastive_forward(mdl.encoder, cfg.encoder, va, vb, cfg.tau, cfg.similarity);
      out.l1 = cb.loss;
      out.diagonal_accuracy = diagonal_accuracy(cb.logits);
      patches = cb.patches_a;
    } else if (cfg.freeze_image_encoder) {
      patches = frozen_patches(batch, mdl, ctx);
    } else {
      std::vector<Image> imgs;
      for (const auto* r : batch) imgs.push_back(r->image);
      patches = encode_images(imgs, mdl.encoder.online, cfg.encoder).patches;
    }
    if (cfg.freeze_image_encoder) patches = patches.detach();
    image_rows = flags.query_fusion ? query_fuse(patches, mdl.qformer, b) : mdl.direct_proj(patches);
    per_image = image_rows.rows() / b;
  }

  const Tensor no_image = Tensor::zeros({0, d});
  std::vector<Tensor> seqs;
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < b; ++i) {
    const NewsRecord& r = *batch[i];
    const PromptTemplate& tmpl = ctx.training ? pick_prompt(ctx.prompt->next()) : prompt_template(kEvalTemplateId);
    const Tensor rows = flags.use_image ? slice_rows(image_rows, i * per_image, (i + 1) * per_image) : no_image;
    const TokenSequence text = flags.use_text ? record_tokens(r, mdl, ctx) : TokenSequence{};
    PromptAssembly a = assemble_prompt(tmpl, rows, text, mdl.lm.token_table, mdl.vocab, mdl.lm.context());
    lengths.push_back(a.seq_len());
    seqs.push_back(std::move(a.embeddings));
    labels.push_back(static_cast<std::size_t>(r.label));
  }
  const Tensor hidden = lm_forward(concat_rows(seqs), mdl.lm, lengths);
  out.logits = classify(hidden, mdl.head, lengths);
  out.l2 = cross_entropy(out.logits, labels);
  out.loss = out.l1 ? awl_combine(out.l1, out.l2, mdl.awl, cfg.awl_symmetric) : out.l2;
  return out;
}

std::vector<std::vector<const NewsRecord*>> make_batches(const std::vector<const NewsRecord*>& records,
                                                         std::size_t size) {
  std::vector<std::vector<const NewsRecord*>> out;
  for (std::size_t i = 0; i < records.size(); i += size)
    out.emplace_back(records.begin() + static_cast<std::ptrdiff_t>(i),
                     records.begin() + static_cast<std::ptrdiff_t>(std::min(records.size(), i + size)));
  // A trailing singleton joins the previous batch so in-batch negatives exist.
  if (out.size() >= 2 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back()[0]);
    out.pop_back();
  }
  return out;
}

bool live_encoder(const RunConfig& cfg) { return cfg.flags().contrastive || !cfg.freeze_image_encoder; }

}  // namespace

// ---------------------------------------------------------------- trainer

Trainer::Trainer(const RunConfig& config, const Dataset& ds)
    : Trainer(Model::init(config, build_vocab(ds, config.vocab_size)), ds) {}

Trainer::Trainer(Model model, const Dataset& ds)
    : model_(std::move(model)),
      ds_(&ds),
      train_(ds.split(Split::train)),
      optimizer_(model_.config.optimizer, model_.config.lr, model_.config.optimizer_momentum),
      params_(model_.trainable()),
      data_rng_(Rng::stream(model_.config.seed, "data")),
      augment_rng_(Rng::stream(model_.config.seed, "augment")),
      prompt_rng_(Rng::stream(model_.config.seed, "prompt")) {
  if (train_.empty()) throw DataError("training split is empty");
}

namespace {
std::unordered_map<std::string, Tensor>* feature_cache_for(const RunConfig& cfg,
                                                           std::unordered_map<std::string, Tensor>& cache) {
  return live_encoder(cfg) ? nullptr : &cache;
}
}  // namespace

BatchOutput Trainer::forward(std::span<const NewsRecord* const> batch) { return forward_impl(batch, true); }

BatchOutput Trainer::forward_impl(std::span<const NewsRecord* const> batch, bool training) {
  ForwardContext ctx{training, &augment_rng_, &prompt_rng_, &token_cache_, feature_cache_for(model_.config, features_)};
  return forward_batch(batch, model_, ctx);
}

BatchOutput Trainer::accumulate(std::span<const NewsRecord* const> batch, double scale) {
  BatchOutput out = forward_impl(batch, true);
  if (!std::isfinite(out.loss.item()))
    throw DivergenceError("non-finite loss " + std::to_string(out.loss.item()) + " at optimizer step " +
                          std::to_string(optimizer_.steps() + 1) + " (epoch " + std::to_string(epoch_ + 1) + ")");
  backward(scale == 1.0 ? out.loss : mmfn::scale(out.loss, scale));
  return out;
}

void Trainer::step() {
  optimizer_.step(params_);
  if (model_.config.flags().contrastive) momentum_update(model_.encoder);
  optimizer_.zero_grad(params_);
}

double Trainer::pretrain_contrastive(std::size_t steps, std::size_t batch_size) {
  if (batch_size < 2) throw ConfigError("contrastive batches need at least two records");
  const RunConfig& cfg = model_.config;
  const ParamList online = collect_params(model_.encoder.online, "online");
  double last = 0.0;
  std::vector<const NewsRecord*> pool = train_;
  for (std::size_t s = 0; s < steps; ++s) {
    data_rng_.shuffle(pool);
    const std::size_t n = std::min(batch_size, pool.size());
    std::vector<Image> va, vb;
    for (std::size_t i = 0; i < n; ++i) {
      va.push_back(pool[i]->image);
      const Augmentation op = pick_augmentation(augment_rng_.next(), cfg.augmentations);
      vb.push_back(augment(pool[i]->image, op, augment_rng_.next()));
    }
    ContrastiveBatch cb = contrastive_forward(model_.encoder, cfg.encoder, va, vb, cfg.tau, cfg.similarity);
    last = cb.loss.item();
    if (!std::isfinite(last))
      throw DivergenceError("non-finite contrastive loss at pre-training step " + std::to_string(s + 1));
    backward(cb.loss);
    optimizer_.step(online);
    momentum_update(model_.encoder);
    optimizer_.zero_grad(online);
  }
  return last;
}

EpochTrace Trainer::run_epoch() {
  const RunConfig& cfg = model_.config;
  std::vector<const NewsRecord*> order = train_;
  data_rng_.shuffle(order);
  const auto batches = make_batches(order, cfg.micro_batch);
  EpochTrace tr;
  tr.epoch = epoch_ + 1;
  double n_seen = 0.0;
  for (std::size_t g = 0; g < batches.size(); g += cfg.accumulate) {
    const std::size_t g_end = std::min(batches.size(), g + cfg.accumulate);
    std::size_t group = 0;
    for (std::size_t i = g; i < g_end; ++i) group += batches[i].size();
    // Weighting by batch share makes the step equal to one on the concatenated group.
    for (std::size_t i = g; i < g_end; ++i) {
      const double share = static_cast<double>(batches[i].size()) / static_cast<double>(group);
      BatchOutput out = accumulate(batches[i], share);
      const double w = static_cast<double>(batches[i].size());
      tr.loss += w * out.loss.item();
      tr.l2 += w * out.l2.item();
      if (out.l1) tr.l1 += w * out.l1.item();
      n_seen += w;
    }
    step();
  }
  tr.loss /= n_seen;
  tr.l1 /= n_seen;
  tr.l2 /= n_seen;
  tr.sigma1 = model_.awl.sigma1().item();
  tr.sigma2 = model_.awl.sigma2().item();
  ++epoch_;
  return tr;
}

// ---------------------------------------------------------------- evaluation

namespace {

struct EvalOutcome {
  std::vector<int> predictions;
  double loss_sum = 0.0;
};

EvalOutcome run_eval(Model& mdl, std::span<const NewsRecord* const> records) {
  NoGradGuard no_grad;
  EvalOutcome out;
  std::unordered_map<std::string, Tensor> features;
  ForwardContext ctx;
  ctx.training = false;
  if (!live_encoder(mdl.config)) ctx.features = &features;
  const std::size_t bs = mdl.config.eval_batch;
  for (std::size_t i = 0; i < records.size(); i += bs) {
    const auto batch = records.subspan(i, std::min(bs, records.size() - i));
    const BatchOutput o = forward_batch(batch, mdl, ctx);
    out.loss_sum += o.l2.item() * static_cast<double>(batch.size());
    for (std::size_t r = 0; r < batch.size(); ++r)
      out.predictions.push_back(o.logits.at(r, 1) > o.logits.at(r, 0) ? 1 : 0);
  }
  return out;
}

}  // namespace

std::vector<int> predict(Model& model, std::span<const NewsRecord* const> records) {
  return run_eval(model, records).predictions;
}

MetricsReport evaluate(Model& model, const Dataset& ds, Split split) {
  const auto records = ds.split(split);
  if (records.empty()) throw DataError("split '" + std::string(split_name(split)) + "' is empty");
  const EvalOutcome o = run_eval(model, records);
  std::vector<int> labels;
  for (const auto* r : records) labels.push_back(static_cast<int>(r->label));
  MetricsReport rep = compute_metrics(confusion_from(o.predictions, labels));
  rep.loss = o.loss_sum / static_cast<double>(records.size());
  return rep;
}

TrainResult train(const RunConfig& config, const Dataset& ds) {
  Trainer t(config, ds);
  if (config.pretrain_steps > 0) t.pretrain_contrastive(config.pretrain_steps, config.micro_batch);
  const bool have_val = !ds.split(Split::val).empty();

  TrainResult result{clone_model(t.model()), {}, 0};
  if (have_val) result.validation = evaluate(t.model(), ds, Split::val);
  std::vector<EpochTrace> trace;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    EpochTrace tr = t.run_epoch();
    const bool last = e + 1 == config.epochs;
    if (have_val) {
      const MetricsReport val = evaluate(t.model(), ds, Split::val);
      tr.val_accuracy = val.accuracy;
      tr.val_loss = val.loss;
      const bool better = result.best_epoch == 0 || val.accuracy > result.validation.accuracy ||
                          (val.accuracy == result.validation.accuracy && val.loss < result.validation.loss);
      if (better) {
        result.model = clone_model(t.model());
        result.validation = val;
        result.best_epoch = tr.epoch;
      }
    } else if (last) {
      result.model = clone_model(t.model());
      result.best_epoch = tr.epoch;
    }
    if (!std::isfinite(tr.sigma1) || !std::isfinite(tr.sigma2))
      throw DivergenceError("non-finite sigma after epoch " + std::to_string(tr.epoch));
    trace.push_back(tr);
  }
  result.validation.trace = std::move(trace);
  return result;
}

ContrastiveSanity contrastive_sanity(const RunConfig& config, const Dataset& ds, std::size_t steps,
                                     std::size_t batch_size, std::size_t heldout) {
  Trainer t(config, ds);
  ContrastiveSanity out;
  out.train_loss = t.pretrain_contrastive(steps, batch_size);
  std::vector<const NewsRecord*> pool = ds.split(Split::test);
  for (const auto* r : ds.split(Split::val))
    if (pool.size() < heldout) pool.push_back(r);
  if (pool.size() < std::min<std::size_t>(heldout, 2)) throw DataError("not enough held-out records");
  pool.resize(std::min(pool.size(), heldout));
  Rng aug = Rng::stream(config.seed ^ 0x5A5A5A5Aull, "augment");
  std::vector<Image> va, vb;
  for (const auto* r : pool) {
    va.push_back(r->image);
    const Augmentation op = pick_augmentation(aug.next(), config.augmentations);
    vb.push_back(augment(r->image, op, aug.next()));
  }
  NoGradGuard no_grad;
  const ContrastiveBatch cb =
      contrastive_forward(t.model().encoder, config.encoder, va, vb, config.tau, config.similarity);
  out.heldout_accuracy = diagonal_accuracy(cb.logits);
  out.heldout = pool.size();
  return out;
}

// ---------------------------------------------------------------- ablation

Protocol parse_protocol(std::string_view name) {
  if (name == "modality") return Protocol::modality;
  if (name == "modules") return Protocol::modules;
  throw ConfigError("unknown protocol '" + std::string(name) + "' (expected modality or modules)");
}

std::string_view protocol_name(Protocol p) { return p == Protocol::modality ? "modality" : "modules"; }

std::vector<AblationRow> ablate(Protocol protocol, const RunConfig& base, const Dataset& ds, bool parallel,
                                RunCache* cache) {
  const std::vector<std::pair<std::string, Mode>> runs =
      protocol == Protocol::modality
          ? std::vector<std::pair<std::string, Mode>>{{"image", Mode::modality_image},
                                                      {"text", Mode::modality_text},
                                                      {"image+text", Mode::full}}
          : std::vector<std::pair<std::string, Mode>>{{"expA", Mode::expA}, {"expB", Mode::expB}, {"expC", Mode::expC}};
  RunCache local;
  RunCache& results = cache ? *cache : local;

  std::vector<RunConfig> configs;
  for (const auto& [name, mode] : runs) {
    RunConfig c = base;
    c.mode = mode;
    c.validate();
    configs.push_back(c);
  }
  std::vector<std::pair<std::string, std::future<TrainResult>>> pending;
  for (const auto& c : configs) {
    const std::string h = c.hash();
    bool queued = results.count(h) > 0;
    for (const auto& p : pending) queued = queued || p.first == h;
    if (queued) continue;
    pending.emplace_back(h, std::async(parallel ? std::launch::async : std::launch::deferred,
                                       [c, &ds] { return train(c, ds); }));
  }
  for (auto& [h, fut] : pending) results.emplace(h, fut.get());

  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    AblationRow row;
    row.protocol = std::string(protocol_name(protocol));
    row.run = runs[i].first;
    row.mode = runs[i].second;
    row.flags = mode_flags(row.mode);
    row.config_hash = configs[i].hash();
    TrainResult& tr = results.at(row.config_hash);
    row.validation = tr.validation;
    row.test = evaluate(tr.model, ds, Split::test);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "# modes: image = modality_image, text = modality_text, image+text = full; "
        "expA = language model + classifier (contrastive off, query fusion off), "
        "expB = expA + contrastive, expC = expB + query fusion (same as full)\n";
  os << "protocol,run,mode,contrastive,query_fusion,image,text,config_hash,accuracy,precision,recall,f1\n";
  for (const auto& r : rows) {
    os << r.protocol << ',' << r.run << ',' << mode_name(r.mode) << ',' << int(r.flags.contrastive) << ','
       << int(r.flags.query_fusion) << ',' << int(r.flags.use_image) << ',' << int(r.flags.use_text) << ','
       << r.config_hash << ',' << fmt_double(r.test.accuracy) << ',' << fmt_double(r.test.precision) << ','
       << fmt_double(r.test.recall) << ',' << fmt_double(r.test.f1) << '\n';
  }
  return os.str();
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "run" << std::setw(16) << "mode" << std::right << std::setw(10) << "accuracy"
     << std::setw(11) << "precision" << std::setw(9) << "recall" << std::setw(9) << "f1" << '\n';
  os << std::fixed << std::setprecision(4);
  for (const auto& r : rows)
    os << std::left << std::setw(12) << r.run << std::setw(16) << mode_name(r.mode) << std::right << std::setw(10)
       << r.test.accuracy << std::setw(11) << r.test.precision << std::setw(9) << r.test.recall << std::setw(9)
       << r.test.f1 << '\n';
  return os.str();
}

}  // namespace mmfn
