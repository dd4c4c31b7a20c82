// Python view of the library: datasets, configs, training, evaluation and the
// scalar loss helpers. Tensors cross the boundary as flat lists plus a shape.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mmfn/config.hpp"
#include "mmfn/contrastive.hpp"
#include "mmfn/data.hpp"
#include "mmfn/errors.hpp"
#include "mmfn/gradcheck.hpp"
#include "mmfn/harness.hpp"
#include "mmfn/metrics.hpp"
#include "mmfn/objective.hpp"
#include "mmfn/text.hpp"

namespace py = pybind11;
using namespace mmfn;

namespace {

py::dict report_dict(const MetricsReport& r) {
  py::dict d;
  d["accuracy"] = r.accuracy;
  d["precision"] = r.precision;
  d["recall"] = r.recall;
  d["f1"] = r.f1;
  d["loss"] = r.loss;
  d["tp"] = r.counts.tp;
  d["fp"] = r.counts.fp;
  d["tn"] = r.counts.tn;
  d["fn"] = r.counts.fn;
  return d;
}

Tensor square_tensor(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size();
  std::vector<double> flat;
  for (const auto& r : rows) {
    if (r.size() != n) throw DimensionError("similarity matrix must be square");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor::from({n, n}, std::move(flat));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multimodal fake-news detection at desk scale";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<CorruptCheckpointError>(m, "CorruptCheckpointError", PyExc_ValueError);
  py::register_exception<CompatibilityError>(m, "CompatibilityError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

  py::class_<SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init<>())
      .def_static("parse", [](const std::string& text) { return SyntheticSpec::parse(text); })
      .def_readwrite("num_records", &SyntheticSpec::num_records)
      .def_readwrite("mismatch_rate", &SyntheticSpec::mismatch_rate)
      .def_readwrite("noise", &SyntheticSpec::noise)
      .def_readwrite("caption_noise_rate", &SyntheticSpec::caption_noise_rate)
      .def_readwrite("image_side", &SyntheticSpec::image_side)
      .def_readwrite("seed", &SyntheticSpec::seed);

  py::class_<NewsRecord>(m, "NewsRecord")
      .def_readonly("id", &NewsRecord::id)
      .def_readonly("text", &NewsRecord::text)
      .def_property_readonly("label", [](const NewsRecord& r) { return static_cast<int>(r.label); })
      .def_property_readonly("split", [](const NewsRecord& r) { return std::string(split_name(r.split)); })
      .def_property_readonly("image_shape", [](const NewsRecord& r) {
        return py::make_tuple(r.image.height, r.image.width, 3);
      })
      .def_property_readonly("pixels", [](const NewsRecord& r) { return r.image.pixels; });

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("records", &Dataset::records)
      .def_readonly("dropped", &Dataset::dropped)
      .def_readonly("malformed", &Dataset::malformed)
      .def("__len__", [](const Dataset& d) { return d.records.size(); })
      .def("split_ids", [](const Dataset& d, const std::string& name) {
        std::vector<std::string> ids;
        for (const auto* r : d.split(parse_split(name))) ids.push_back(r->id);
        return ids;
      })
      .def("summary_csv", [](const Dataset& d) { return summary_csv(summarize(d)); });

  m.def("generate_synthetic", &generate_synthetic, py::arg("spec"));
  m.def("load_dataset", &load_dataset, py::arg("path"), py::arg("image_side") = 32);
  m.def("write_dataset", &write_dataset, py::arg("dataset"), py::arg("directory"));
  m.def("preprocess_text", [](const std::string& s) { return preprocess_text(s); });

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("parse", [](const std::string& text) { return RunConfig::parse(text); })
      .def_static("load", [](const std::filesystem::path& p) { return RunConfig::load(p); })
      .def("serialize", &RunConfig::serialize)
      .def("hash", &RunConfig::hash)
      .def_property_readonly("mode", [](const RunConfig& c) { return std::string(mode_name(c.mode)); })
      .def_readwrite("seed", &RunConfig::seed)
      .def_readwrite("epochs", &RunConfig::epochs)
      .def_readwrite("micro_batch", &RunConfig::micro_batch)
      .def_readwrite("accumulate", &RunConfig::accumulate)
      .def_readwrite("lr", &RunConfig::lr)
      .def_readwrite("tau", &RunConfig::tau)
      .def_readwrite("num_queries", &RunConfig::num_queries);

  py::class_<BpeVocab>(m, "BpeVocab")
      .def_static("parse", [](const std::string& text) { return BpeVocab::parse(text); })
      .def("serialize", &BpeVocab::serialize)
      .def("__len__", &BpeVocab::size)
      .def_property_readonly("vocab_size", &BpeVocab::vocab_size)
      .def("encode", [](const BpeVocab& v, const std::string& text) { return tokenize_ids(text, v); })
      .def("decode", [](const BpeVocab& v, const std::vector<TokenId>& ids) { return detokenize(ids, v); });
  m.def("bpe_train", &bpe_train, py::arg("corpus"), py::arg("vocab_size"));

  py::class_<Model>(m, "Model")
      .def_static("load", &Model::load, py::arg("path"))
      .def("save", &Model::save, py::arg("path"))
      .def_property_readonly("config", [](const Model& mdl) { return mdl.config; })
      .def_property_readonly("vocab", [](const Model& mdl) { return mdl.vocab; })
      .def("parameter_names", [](Model& mdl) {
        std::vector<std::string> names;
        for (const auto& p : mdl.all()) names.push_back(p.name);
        return names;
      });

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("model", &TrainResult::model)
      .def_readonly("best_epoch", &TrainResult::best_epoch)
      .def_property_readonly("validation", [](const TrainResult& r) { return report_dict(r.validation); })
      .def_property_readonly("trace", [](const TrainResult& r) { return trace_csv(r.validation.trace); });

  m.def("train", &train, py::arg("config"), py::arg("dataset"), py::call_guard<py::gil_scoped_release>());
  m.def(
      "evaluate",
      [](Model& mdl, const Dataset& ds, const std::string& split) {
        return report_dict(evaluate(mdl, ds, parse_split(split)));
      },
      py::arg("model"), py::arg("dataset"), py::arg("split") = "test");

  m.def(
      "metrics",
      [](const std::vector<int>& labels, const std::vector<int>& predictions) {
        if (labels.size() != predictions.size()) throw DimensionError("labels and predictions differ in length");
        return report_dict(compute_metrics(confusion_from(predictions, labels)));
      },
      py::arg("labels"), py::arg("predictions"));
  m.def("metrics_from_csv",
        [](const std::string& text) { return report_dict(evaluate_predictions(parse_predictions_csv(text))); });

  m.def(
      "info_nce",
      [](const std::vector<std::vector<double>>& logits, double tau) {
        return info_nce(square_tensor(logits), tau).item();
      },
      py::arg("logits"), py::arg("tau"));
  m.def(
      "awl_combine",
      [](double l1, double l2, double sigma1, double sigma2, bool symmetric) {
        return awl_combine(Tensor::scalar(l1), Tensor::scalar(l2), Tensor::scalar(sigma1), Tensor::scalar(sigma2),
                           symmetric)
            .item();
      },
      py::arg("l1"), py::arg("l2"), py::arg("sigma1"), py::arg("sigma2"), py::arg("symmetric") = false);

  m.def(
      "gradcheck",
      [](std::size_t points, std::uint64_t seed) {
        std::vector<py::dict> out;
        for (const auto& c : run_gradcheck_suite(points, seed)) {
          py::dict d;
          d["name"] = c.name;
          d["points"] = c.points;
          d["max_error"] = c.max_error;
          d["passed"] = c.passed();
          out.push_back(d);
        }
        return out;
      },
      py::arg("points") = 10, py::arg("seed") = 2024);
}
