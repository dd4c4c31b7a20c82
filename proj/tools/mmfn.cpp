// Command-line front end: data generation, training, evaluation, ablations
// and the verification utilities.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mmfn/config.hpp"
#include "mmfn/errors.hpp"
#include "mmfn/gradcheck.hpp"
#include "mmfn/harness.hpp"

namespace {

using namespace mmfn;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

void print_dataset_counts(const Dataset& ds) {
  std::cout << summary_table(summarize(ds));
  if (ds.dropped || ds.malformed)
    std::cout << "dropped " << ds.dropped << " rows with missing or invalid images, skipped " << ds.malformed
              << " malformed rows\n";
}

int cmd_gen_data(const std::string& spec_path, const std::string& out) {
  const SyntheticSpec spec = SyntheticSpec::load(spec_path);
  const Dataset ds = generate_synthetic(spec);
  write_dataset(ds, out);
  write_text_file(std::filesystem::path(out) / "summary.csv", summary_csv(summarize(ds)));
  std::cout << "wrote " << ds.records.size() << " records to " << out << '\n';
  print_dataset_counts(ds);
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out,
              std::string metrics_path) {
  const RunConfig cfg = RunConfig::load(config_path);
  const Dataset ds = load_dataset(data, cfg.encoder.image_side);
  print_dataset_counts(ds);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res = train(cfg, ds);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.model.save(out);
  if (metrics_path.empty()) metrics_path = out + ".metrics.csv";

  std::ostringstream csv;
  csv << "metric,value\n";
  csv << "best_epoch," << res.best_epoch << '\n';
  csv << metrics_csv(res.validation, "val_");
  MetricsReport test;
  const bool have_test = !ds.split(Split::test).empty();
  if (have_test) {
    test = evaluate(res.model, ds, Split::test);
    csv << metrics_csv(test, "test_");
  }
  write_text_file(metrics_path, csv.str());
  const std::string trace_path = out + ".trace.csv";
  write_text_file(trace_path, trace_csv(res.validation.trace));

  std::cout << "mode " << mode_name(cfg.mode) << ", config " << cfg.hash() << ", " << cfg.epochs << " epochs in "
            << secs << " s, best epoch " << res.best_epoch << '\n';
  std::cout << metrics_table(res.validation, "validation");
  if (have_test) std::cout << metrics_table(test, "test");
  std::cout << "checkpoint " << out << ", metrics " << metrics_path << ", trace " << trace_path << '\n';
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& split_name_arg,
             const std::string& predictions, const std::string& metrics_path) {
  MetricsReport rep;
  std::string title;
  if (!predictions.empty()) {
    rep = evaluate_predictions(parse_predictions_csv(read_text_file(predictions)));
    title = "predictions " + predictions;
  } else {
    if (ckpt.empty() || data.empty()) throw ConfigError("eval needs --ckpt and --data (or --predictions)");
    Model model = Model::load(ckpt);
    const Dataset ds = load_dataset(data, model.config.encoder.image_side);
    const Split split = parse_split(split_name_arg);
    rep = evaluate(model, ds, split);
    title = std::string(split_name(split)) + " split";
  }
  const std::string csv = metrics_csv(rep);
  if (!metrics_path.empty()) write_text_file(metrics_path, csv);
  std::cout << metrics_table(rep, title);
  return 0;
}

int cmd_ablate(const std::string& protocol, const std::string& config_path, const std::string& data,
               const std::string& out, bool parallel) {
  const RunConfig cfg = RunConfig::load(config_path);
  const Dataset ds = load_dataset(data, cfg.encoder.image_side);
  const auto rows = ablate(parse_protocol(protocol), cfg, ds, parallel);
  write_text_file(out, ablation_csv(rows));
  std::cout << ablation_table(rows) << "wrote " << out << '\n';
  return 0;
}

int cmd_gradcheck(std::size_t points, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  for (const auto& c : run_gradcheck_suite(points, seed)) {
    std::printf("%-26s points=%zu max_rel_err=%.3e %s\n", c.name.c_str(), c.points, c.max_error,
                c.passed() ? "ok" : "FAIL");
    ok = ok && c.passed();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("gradcheck %s in %.2f s (tolerance %.0e)\n", ok ? "passed" : "FAILED", secs, kGradCheckTolerance);
  return ok ? 0 : 1;
}

int cmd_tokenize(const std::string& vocab_path, bool do_train, const std::string& corpus_path,
                 std::size_t vocab_size, const std::vector<std::string>& texts) {
  if (do_train) {
    if (corpus_path.empty()) throw ConfigError("tokenize --train needs --corpus");
    std::vector<std::string> corpus;
    std::istringstream is(read_text_file(corpus_path));
    for (std::string line; std::getline(is, line);) corpus.push_back(preprocess_text(line));
    const BpeVocab vocab = bpe_train(corpus, vocab_size);
    vocab.save(vocab_path);
    std::cout << "trained " << vocab.merges().size() << " merges, vocab " << vocab_path << '\n';
    if (texts.empty()) return 0;
  }
  const BpeVocab vocab = BpeVocab::load(vocab_path);
  auto emit = [&](const std::string& text) {
    const auto ids = tokenize_ids(text, vocab);
    for (std::size_t i = 0; i < ids.size(); ++i) std::cout << (i ? " " : "") << ids[i];
    std::cout << '\n';
  };
  if (!texts.empty()) {
    for (const auto& t : texts) emit(t);
  } else {
    for (std::string line; std::getline(std::cin, line);) emit(line);
  }
  return 0;
}

int cmd_summarize(const std::string& path) {
  if (std::filesystem::path(path).extension() == ".csv") {
    std::cout << summary_table(parse_summary_csv(read_text_file(path)));
  } else {
    print_dataset_counts(load_dataset(path));
  }
  return 0;
}

int cmd_sanity(const std::string& config_path, const std::string& data, std::size_t steps, std::size_t batch,
               std::size_t heldout) {
  const RunConfig cfg = RunConfig::load(config_path);
  const Dataset ds = load_dataset(data, cfg.encoder.image_side);
  const auto t0 = std::chrono::steady_clock::now();
  const ContrastiveSanity s = contrastive_sanity(cfg, ds, steps, batch, heldout);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("contrastive: %zu steps of %zu, final loss %.4f, held-out diagonal accuracy %.4f on %zu (%.1f s)\n",
              steps, batch, s.train_loss, s.heldout_accuracy, s.heldout, secs);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal fake-news detection lab"};
  app.require_subcommand(1);

  std::string spec, out, config, data, ckpt, split = "test", metrics, protocol, vocab, corpus, predictions;
  std::size_t points = 10, vocab_size = 512, steps = 200, batch = 32, heldout = 64;
  std::uint64_t seed = 2024;
  bool parallel = false, do_train = false;
  std::vector<std::string> texts;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic paired image-text dataset");
  gen->add_option("--spec", spec, "Synthetic spec file (key = value)")->required();
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model and keep the best validation checkpoint");
  tr->add_option("--config", config, "Run config file")->required();
  tr->add_option("--data", data, "Dataset directory or manifest")->required();
  tr->add_option("--out", out, "Checkpoint path")->required();
  tr->add_option("--metrics", metrics, "Metrics CSV (default <out>.metrics.csv)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  ev->add_option("--ckpt", ckpt, "Checkpoint path");
  ev->add_option("--data", data, "Dataset directory or manifest");
  ev->add_option("--split", split, "train, val or test");
  ev->add_option("--predictions", predictions, "Score an id,label,prediction CSV instead of a model");
  ev->add_option("--metrics", metrics, "Also write metrics CSV here");

  auto* ab = app.add_subcommand("ablate", "Run an ablation protocol");
  ab->add_option("--protocol", protocol, "modality or modules")->required();
  ab->add_option("--config", config, "Base run config")->required();
  ab->add_option("--data", data, "Dataset directory or manifest")->required();
  ab->add_option("--out", out, "Output CSV")->required();
  ab->add_flag("--parallel", parallel, "Train the runs concurrently");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  gc->add_option("--points", points, "Seeded points per op");
  gc->add_option("--seed", seed, "Root seed");

  auto* tk = app.add_subcommand("tokenize", "Tokenize text with a BPE vocabulary, or train one");
  tk->add_option("--vocab", vocab, "Vocabulary file")->required();
  tk->add_flag("--train", do_train, "Train the vocabulary from --corpus first");
  tk->add_option("--corpus", corpus, "Training corpus, one text per line");
  tk->add_option("--vocab-size", vocab_size, "Target vocabulary size");
  tk->add_option("--text", texts, "Text to tokenize (default: stdin lines)");

  auto* sm = app.add_subcommand("summarize", "Per-split label counts of a dataset or summary CSV");
  sm->add_option("--data", data, "Dataset directory, manifest or summary CSV")->required();

  auto* sn = app.add_subcommand("contrastive-sanity", "Train the contrastive branch alone and score retrieval");
  sn->add_option("--config", config, "Run config file")->required();
  sn->add_option("--data", data, "Dataset directory or manifest")->required();
  sn->add_option("--steps", steps, "Training steps");
  sn->add_option("--batch", batch, "Batch size");
  sn->add_option("--heldout", heldout, "Held-out batch size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(spec, out);
    if (*tr) return cmd_train(config, data, out, metrics);
    if (*ev) return cmd_eval(ckpt, data, split, predictions, metrics);
    if (*ab) return cmd_ablate(protocol, config, data, out, parallel);
    if (*gc) return cmd_gradcheck(points, seed);
    if (*tk) return cmd_tokenize(vocab, do_train, corpus, vocab_size, texts);
    if (*sm) return cmd_summarize(data);
    if (*sn) return cmd_sanity(config, data, steps, batch, heldout);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const CorruptCheckpointError& e) {
    std::cerr << "corrupt checkpoint: " << e.what() << '\n';
    return kExitData;
  } catch (const CompatibilityError& e) {
    std::cerr << "incompatible checkpoint: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
