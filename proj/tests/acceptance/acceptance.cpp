// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// hard criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "mmfn/config.hpp"
#include "mmfn/errors.hpp"
#include "mmfn/gradcheck.hpp"
#include "mmfn/harness.hpp"

namespace {

using namespace mmfn;
namespace fs = std::filesystem;

int g_failures = 0;

void report(const char* id, bool ok, const std::string& detail, bool hard = true) {
  std::printf("%s %-30s %s\n", ok ? "PASS" : (hard ? "FAIL" : "WARN"), id, detail.c_str());
  std::fflush(stdout);
  if (!ok && hard) ++g_failures;
}

template <class F>
double timed(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void gradient_suite() {
  std::vector<GradCheckCase> cases;
  const double secs = timed([&] { cases = run_gradcheck_suite(10, 2024); });
  double worst = 0.0;
  std::string worst_name;
  bool ok = !cases.empty();
  for (const auto& c : cases) {
    ok = ok && c.passed() && c.points == 10;
    if (c.max_error >= worst) {
      worst = c.max_error;
      worst_name = c.name;
    }
  }
  ok = ok && secs < 60.0;
  report("1.gradient_suite", ok,
         fmt("%zu ops x 10 points, worst %.2e (%s) < 1e-4, %.2f s < 60 s", cases.size(), worst, worst_name.c_str(),
             secs));
}

void analytic_identities() {
  double nce_err = 0.0;
  for (std::size_t b : {2u, 4u, 8u}) {
    const Tensor z = Tensor::full({b, b}, 0.25);
    nce_err = std::max(nce_err, std::abs(info_nce(z, 0.07).item() - std::log(static_cast<double>(b))));
  }
  const double awl =
      awl_combine(Tensor::scalar(0.0), Tensor::scalar(0.0), Tensor::scalar(1.0), Tensor::scalar(1.0)).item();
  const double awl_err = std::abs(awl - 2.0 * std::log(2.0));

  Rng rng(5);
  std::vector<double> xv(64), yv(64);
  for (auto& v : xv) v = rng.normal();
  for (auto& v : yv) v = rng.normal();
  Tensor x = Tensor::from({8, 8}, xv), y = Tensor::from({8, 8}, yv);
  auto dist = [&] {
    double s = 0;
    for (std::size_t i = 0; i < 64; ++i) s += (y[i] - x[i]) * (y[i] - x[i]);
    return std::sqrt(s);
  };
  const double d0 = dist();
  for (int t = 0; t < 20; ++t) momentum_update({{"p", x}}, {{"p", y}}, 0.9);
  const double mom_err = std::abs(dist() - std::pow(0.9, 20) * d0);
  report("2.analytic_identities", nce_err < 1e-10 && awl_err < 1e-12 && mom_err < 1e-12,
         fmt("InfoNCE ln B err %.1e < 1e-10, AWL 2 ln 2 err %.1e < 1e-12, momentum m^T err %.1e < 1e-12", nce_err,
             awl_err, mom_err));
}

void contrastive_check(const RunConfig& cfg, const Dataset& ds) {
  ContrastiveSanity s;
  const double secs = timed([&] { s = contrastive_sanity(cfg, ds, 200, 32, 64); });
  report("3.contrastive_sanity", s.heldout == 64 && s.heldout_accuracy >= 0.95 && secs < 300.0,
         fmt("held-out diagonal accuracy %.4f >= 0.95 on %zu, final loss %.4f, %.1f s < 300 s", s.heldout_accuracy,
             s.heldout, s.train_loss, secs));
}

double accuracy_of(const std::vector<AblationRow>& rows, const std::string& run) {
  for (const auto& r : rows)
    if (r.run == run) return r.test.accuracy;
  throw ContractError("no ablation row " + run);
}

const AblationRow* row_of(const std::vector<AblationRow>& rows, const std::string& run) {
  for (const auto& r : rows)
    if (r.run == run) return &r;
  return nullptr;
}

void print_rows(const std::vector<AblationRow>& rows) {
  std::istringstream is(ablation_table(rows));
  for (std::string line; std::getline(is, line);) std::printf("    %s\n", line.c_str());
}

void modality_ordering(const RunConfig& cfg, const Dataset& ds, RunCache& cache) {
  std::vector<AblationRow> rows;
  const double secs = timed([&] { rows = ablate(Protocol::modality, cfg, ds, false, &cache); });
  print_rows(rows);
  const double img = accuracy_of(rows, "image"), txt = accuracy_of(rows, "text"), full = accuracy_of(rows, "image+text");
  const double gap = full - std::max(img, txt);
  report("4.modality_ordering", full > txt && txt > img && gap >= 0.05 && secs < 1800.0,
         fmt("full %.4f > text %.4f > image %.4f, gap %.1f points >= 5, %.0f s < 1800 s", full, txt, img, 100 * gap,
             secs));

  const AblationRow* f = row_of(rows, "image+text");
  report("train.full_val_accuracy", f && f->validation.accuracy >= 0.85,
         fmt("full-mode validation accuracy %.4f >= 0.85 after %zu epochs", f ? f->validation.accuracy : 0.0,
             cfg.epochs));

  // Epoch-averaged windows of five must not increase.
  const TrainResult& run = cache.at(f->config_hash);
  std::vector<double> windows;
  const auto& trace = run.validation.trace;
  for (std::size_t i = 0; i + 5 <= trace.size(); i += 5) {
    double s = 0;
    for (std::size_t k = i; k < i + 5; ++k) s += trace[k].loss;
    windows.push_back(s / 5);
  }
  bool monotone = windows.size() >= 2;
  std::string list;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (i && windows[i] > windows[i - 1]) monotone = false;
    list += fmt(i ? ", %.4f" : "%.4f", windows[i]);
  }
  report("train.loss_windows", monotone, "full-mode loss over 5-epoch windows: " + list);
}

void module_protocol(const RunConfig& cfg, const Dataset& ds, RunCache& cache) {
  std::vector<AblationRow> rows;
  const double secs = timed([&] { rows = ablate(Protocol::modules, cfg, ds, false, &cache); });
  print_rows(rows);
  bool shape = rows.size() == 3 && rows[0].run == "expA" && rows[1].run == "expB" && rows[2].run == "expC";
  for (const auto& r : rows) {
    shape = shape && r.config_hash.size() == 16 && r.test.counts.total() == ds.split(Split::test).size();
    for (double v : {r.test.accuracy, r.test.precision, r.test.recall, r.test.f1})
      shape = shape && std::isfinite(v) && v >= 0.0 && v <= 1.0;
  }
  report("5.module_protocol", shape, fmt("3 rows expA/expB/expC with hashes and four metrics, %.0f s", secs));
  if (rows.size() == 3) {
    const double a = accuracy_of(rows, "expA"), c = accuracy_of(rows, "expC");
    report("5.soft.expC_vs_expA", c >= a, fmt("expC %.4f >= expA %.4f", c, a), false);
  }
}

void determinism(const std::string& cli, const fs::path& work, const fs::path& data, const RunConfig& cfg) {
  RunConfig short_cfg = cfg;
  short_cfg.epochs = 3;
  const fs::path conf = work / "determinism.conf";
  write_text_file(conf, short_cfg.serialize());
  bool ran = true;
  for (const char* tag : {"a", "b"}) {
    const std::string cmd = "\"" + cli + "\" train --config \"" + conf.string() + "\" --data \"" + data.string() +
                            "\" --out \"" + (work / (std::string(tag) + ".ckpt")).string() + "\" > \"" +
                            (work / (std::string(tag) + ".log")).string() + "\" 2>&1";
    ran = ran && std::system(cmd.c_str()) == 0;
  }
  const bool same_ckpt = ran && file_bytes(work / "a.ckpt") == file_bytes(work / "b.ckpt") &&
                         !file_bytes(work / "a.ckpt").empty();
  const bool same_csv = ran && file_bytes(work / "a.ckpt.metrics.csv") == file_bytes(work / "b.ckpt.metrics.csv") &&
                        file_bytes(work / "a.ckpt.trace.csv") == file_bytes(work / "b.ckpt.trace.csv");
  report("6.determinism", same_ckpt && same_csv,
         fmt("two `train` invocations (%zu epochs): checkpoints %s, metric CSVs %s", short_cfg.epochs,
             same_ckpt ? "identical" : "DIFFER", same_csv ? "identical" : "DIFFER"));
}

void round_trips(const Dataset& ds, const BpeVocab& vocab, const RunConfig& cfg, const fs::path& work) {
  Rng rng(1000);
  std::size_t tok_fail = 0;
  for (int i = 0; i < 1000; ++i) {
    std::string s;
    const std::size_t n = rng.below(48);
    for (std::size_t k = 0; k < n; ++k) {
      const std::uint64_t kind = rng.below(4);
      if (kind == 0) s += ' ';
      else if (kind == 1) s += static_cast<char>(0x21 + rng.below(0x5E));
      else if (kind == 2) s += "\xC3\xA9";
      else s += "\xE2\x82\xAC";
    }
    if (detokenize(tokenize_ids(s, vocab), vocab) != s) ++tok_fail;
  }

  Model m = Model::init(cfg, vocab);
  m.save(work / "roundtrip.ckpt");
  Model back = Model::load(work / "roundtrip.ckpt");
  const bool ckpt_ok = back.encode() == m.encode();

  std::size_t patch_fail = 0;
  for (const auto* r : ds.split(Split::test))
    if (!(assemble_patches(patchify(r->image, cfg.encoder), cfg.encoder) == r->image)) ++patch_fail;
  report("7.round_trips", tok_fail == 0 && ckpt_ok && patch_fail == 0,
         fmt("tokenizer 1000 fuzzed strings %zu failures, checkpoint %s, patchify %zu/%zu lossless", tok_fail,
             ckpt_ok ? "bit-exact" : "DIFFERS", ds.split(Split::test).size() - patch_fail,
             ds.split(Split::test).size()));
}

void metrics_oracle(const fs::path& fixtures) {
  const MetricsReport r = evaluate_predictions(parse_predictions_csv(read_text_file(fixtures / "predictions.csv")));
  const bool ok = r.counts == Confusion{3, 1, 4, 2} && r.precision == 0.75 && r.recall == 0.6 &&
                  r.f1 == 2.0 * 0.75 * 0.6 / (0.75 + 0.6) && r.accuracy == 0.7 && std::abs(r.f1 - 2.0 / 3.0) < 1e-12;
  report("8.metrics_oracle", ok,
         fmt("TP=%zu FP=%zu FN=%zu TN=%zu: precision %.4f recall %.4f F1 %.4f accuracy %.4f", r.counts.tp, r.counts.fp,
             r.counts.fn, r.counts.tn, r.precision, r.recall, r.f1, r.accuracy));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string fixtures, cli, work = (fs::temp_directory_path() / "mmfn_acceptance").string();
  std::string only;
  app.add_option("--fixtures", fixtures, "Fixture directory")->required();
  app.add_option("--cli", cli, "Path to the mmfn executable")->required();
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--only", only, "Comma-separated criterion numbers to run");
  CLI11_PARSE(app, argc, argv);
  auto want = [&](char id) { return only.empty() || only.find(id) != std::string::npos; };

  try {
    fs::remove_all(work);
    fs::create_directories(work);
    const RunConfig cfg = RunConfig::load(fs::path(fixtures) / "acceptance.conf");
    const SyntheticSpec spec = SyntheticSpec::load(fs::path(fixtures) / "acceptance.spec");
    const fs::path data = fs::path(work) / "data";
    write_dataset(generate_synthetic(spec), data);
    const Dataset ds = load_dataset(data, cfg.encoder.image_side);
    std::printf("dataset %zu records, config %s (%s)\n", ds.records.size(), cfg.hash().c_str(),
                std::string(mode_name(cfg.mode)).c_str());

    if (want('1')) gradient_suite();
    if (want('2')) analytic_identities();
    if (want('3')) contrastive_check(cfg, ds);
    RunCache cache;
    if (want('4')) modality_ordering(cfg, ds, cache);
    if (want('5')) module_protocol(cfg, ds, cache);
    if (want('6')) determinism(cli, work, data, cfg);
    if (want('7')) round_trips(ds, build_vocab(ds, cfg.vocab_size), cfg, work);
    if (want('8')) metrics_oracle(fixtures);
  } catch (const std::exception& e) {
    std::printf("FAIL %-30s %s\n", "harness", e.what());
    return 1;
  }
  std::printf("%s: %d hard criteria failed\n", g_failures ? "FAILED" : "PASSED", g_failures);
  return g_failures ? 1 : 0;
}
