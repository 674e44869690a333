#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hbm/errors.hpp"
#include "hbm/loss_metrics.hpp"
#include "hbm/model.hpp"
#include "hbm/saliency.hpp"
#include "hbm/storage.hpp"
#include "hbm/study.hpp"
#include "hbm/trainer.hpp"

namespace py = pybind11;
using namespace hbm;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Mat to_mat(const FloatArray& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Mat(rows, cols, std::vector<float>(a.data(), a.data() + rows * cols));
}

py::array_t<float> to_numpy(const Mat& m) {
  py::array_t<float> out({static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

template <typename T>
py::array_t<T> to_numpy(const std::vector<T>& v) {
  py::array_t<T> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<double> to_vector(const DoubleArray& a) {
  if (a.ndim() != 1) throw ShapeError("expected a 1-D array");
  return std::vector<double>(a.data(), a.data() + a.shape(0));
}

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

std::vector<const Document*> pick(const EmbeddedDataset& ds, const std::optional<std::vector<std::size_t>>& idx) {
  return idx ? select(ds, *idx) : all_documents(ds);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sentence-level hierarchical encoder engine";
  m.attr("__version__") = HBM_VERSION;

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", error);
  py::register_exception<NumericError>(m, "NumericError", error);
  py::register_exception<ConfigError>(m, "ConfigError", error);
  auto data_error = py::register_exception<DataError>(m, "DataError", error);
  py::register_exception<FormatError>(m, "FormatError", data_error);
  py::register_exception<CorruptionError>(m, "CorruptionError", data_error);
  py::register_exception<ConfigMismatchError>(m, "ConfigMismatchError", data_error);
  py::register_exception<IntegrityError>(m, "IntegrityError", error);
  py::register_exception<TrainingError>(m, "TrainingError", error);
  py::register_exception<MetricError>(m, "MetricError", error);
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", error);
  py::register_exception<ExportError>(m, "ExportError", error);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("embed_dim", &ModelConfig::embed_dim)
      .def_readwrite("max_sentences", &ModelConfig::max_sentences)
      .def_readwrite("layers", &ModelConfig::layers)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("ffn_expansion", &ModelConfig::ffn_expansion)
      .def_readwrite("num_classes", &ModelConfig::num_classes)
      .def_readwrite("dropout", &ModelConfig::dropout)
      .def_readwrite("layernorm_eps", &ModelConfig::layernorm_eps)
      .def_readwrite("mask_padding", &ModelConfig::mask_padding)
      .def_readwrite("saliency_layer", &ModelConfig::saliency_layer)
      .def("validate", &ModelConfig::validate)
      .def("to_dict", [](const ModelConfig& c) { return to_python(config_to_json(c)); })
      .def("__eq__", [](const ModelConfig& a, const ModelConfig& b) { return a == b; })
      .def("__repr__", [](const ModelConfig& c) { return "ModelConfig(" + config_to_json(c).dump() + ")"; });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("rollback", &TrainConfig::rollback)
      .def_readwrite("shuffle", &TrainConfig::shuffle)
      .def_property(
          "lr", [](const TrainConfig& t) { return t.adam.lr; }, [](TrainConfig& t, double v) { t.adam.lr = v; })
      .def_property(
          "eps", [](const TrainConfig& t) { return t.adam.eps; }, [](TrainConfig& t, double v) { t.adam.eps = v; });

  py::class_<ModelParams>(m, "ModelParams")
      .def_readonly("generation", &ModelParams::generation)
      .def("tensors", [](const ModelParams& p, const ModelConfig& c) {
        py::dict out;
        const auto names = tensor_names(c);
        const auto tensors = tensor_list(p);
        for (std::size_t i = 0; i < names.size(); ++i) out[py::str(names[i])] = to_numpy(*tensors[i]);
        return out;
      });

  m.def(
      "init_params",
      [](const ModelConfig& c, std::uint64_t seed) {
        Rng rng(seed, 1);
        return init_params(c, rng);
      },
      py::arg("config"), py::arg("seed") = 0);

  py::class_<Document>(m, "Document")
      .def(py::init([](std::uint32_t id, std::uint32_t label, const FloatArray& emb,
                       std::optional<std::vector<std::string>> sentences) {
             return Document{id, label, to_mat(emb), std::move(sentences)};
           }),
           py::arg("id"), py::arg("label"), py::arg("embeddings"), py::arg("sentences") = py::none())
      .def_readwrite("id", &Document::id)
      .def_readwrite("label", &Document::label)
      .def_readwrite("sentences", &Document::sentences)
      .def_property(
          "embeddings", [](const Document& d) { return to_numpy(d.embeddings); },
          [](Document& d, const FloatArray& a) { d.embeddings = to_mat(a); })
      .def("sentence_count", &Document::sentence_count);

  py::class_<EmbeddedDataset>(m, "Dataset")
      .def(py::init([](std::uint32_t embed_dim, std::vector<Document> docs) {
             return EmbeddedDataset{embed_dim, std::move(docs)};
           }),
           py::arg("embed_dim"), py::arg("documents") = std::vector<Document>{})
      .def_readwrite("embed_dim", &EmbeddedDataset::embed_dim)
      .def_readwrite("documents", &EmbeddedDataset::documents)
      .def("__len__", [](const EmbeddedDataset& d) { return d.documents.size(); })
      .def("find", &EmbeddedDataset::find, py::return_value_policy::copy)
      .def("encode", [](const EmbeddedDataset& d) { return py::bytes(encode_dataset(d)); });

  m.def("decode_dataset", [](const py::bytes& b) { return decode_dataset(std::string(b)); });
  m.def("read_dataset", &read_dataset, py::arg("path"));
  m.def("write_dataset", &write_dataset, py::arg("path"), py::arg("dataset"));
  m.def("sidecar_path", &sidecar_path);

  m.def(
      "save_checkpoint",
      [](const std::filesystem::path& path, const ModelConfig& c, const ModelParams& p, std::uint64_t epoch,
         double loss, std::uint64_t seed) { save_checkpoint(path, {c, p, {epoch, loss, seed}}); },
      py::arg("path"), py::arg("config"), py::arg("params"), py::arg("epoch") = 0, py::arg("loss") = 0.0,
      py::arg("seed") = 0);
  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& path, std::optional<ModelConfig> expected) {
        Checkpoint ck = load_checkpoint(path, expected ? &*expected : nullptr);
        py::dict meta;
        meta["epoch"] = ck.meta.epoch;
        meta["loss"] = ck.meta.loss;
        meta["seed"] = ck.meta.seed;
        return py::make_tuple(ck.config, ck.params, meta);
      },
      py::arg("path"), py::arg("expected") = py::none());

  m.def(
      "forward",
      [](const FloatArray& d, const ModelParams& p, const ModelConfig& c, std::optional<std::size_t> real_rows) {
        Rng unused(0);
        const ForwardTrace t = forward(to_mat(d), p, c, unused, false, real_rows.value_or(kAll));
        py::list attention;
        for (std::size_t l = 0; l < c.layers; ++l) {
          py::list heads;
          for (std::size_t h = 0; h < c.heads; ++h) heads.append(to_numpy(t.attention.at(l, h)));
          attention.append(heads);
        }
        py::dict out;
        out["logits"] = to_numpy(t.logits);
        out["doc_vector"] = to_numpy(t.doc_vector);
        out["attention"] = attention;
        return out;
      },
      py::arg("d"), py::arg("params"), py::arg("config"), py::arg("real_rows") = py::none());

  m.def(
      "subsample",
      [](std::size_t size, std::size_t pool, std::size_t n, std::uint64_t seed) {
        const Split s = subsample(size, {pool, n, seed});
        py::dict out;
        out["pool"] = s.pool;
        out["train"] = s.train;
        out["test"] = s.test;
        return out;
      },
      py::arg("dataset_size"), py::arg("pool") = 200, py::arg("n") = 200, py::arg("seed") = 0);

  m.def(
      "train",
      [](const EmbeddedDataset& ds, const ModelConfig& c, const TrainConfig& t,
         std::optional<std::vector<std::size_t>> indices) {
        const auto docs = pick(ds, indices);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(docs, c, t);
        }
        py::list history;
        for (const auto& e : r.history) {
          py::dict rec;
          rec["epoch"] = e.epoch;
          rec["mean_loss"] = e.mean_loss;
          rec["checkpoint"] = e.checkpoint;
          history.append(rec);
        }
        py::dict out;
        out["params"] = r.params;
        out["history"] = history;
        out["selected_epoch"] = r.selected_epoch;
        out["selected_loss"] = r.selected_loss;
        return out;
      },
      py::arg("dataset"), py::arg("config"), py::arg("train_config") = TrainConfig{},
      py::arg("indices") = py::none());

  m.def(
      "predict",
      [](const ModelParams& p, const ModelConfig& c, const EmbeddedDataset& ds,
         std::optional<std::vector<std::size_t>> indices) {
        return to_numpy(predict(p, c, pick(ds, indices)));
      },
      py::arg("params"), py::arg("config"), py::arg("dataset"), py::arg("indices") = py::none());

  m.def(
      "run_experiment",
      [](const EmbeddedDataset& ds, const ModelConfig& c, const TrainConfig& t, std::vector<std::size_t> sizes,
         std::vector<std::uint64_t> seeds, std::size_t pool, std::size_t threads) {
        ExperimentSpec spec{std::move(sizes), std::move(seeds), pool, threads};
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(ds, spec, c, t);
        }
        py::list cells;
        for (const auto& cell : r.cells) {
          py::dict d;
          d["n"] = cell.n;
          d["aucs"] = cell.aucs;
          d["mean"] = cell.mean;
          d["std"] = cell.std_dev;
          d["formatted"] = cell.formatted();
          cells.append(d);
        }
        py::dict out;
        out["cells"] = cells;
        out["table"] = r.table();
        return out;
      },
      py::arg("dataset"), py::arg("config"), py::arg("train_config") = TrainConfig{},
      py::arg("sizes") = std::vector<std::size_t>{50, 100, 150, 200},
      py::arg("seeds") = std::vector<std::uint64_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, py::arg("pool") = 200,
      py::arg("threads") = 1);

  m.def("auc", [](const DoubleArray& scores, const std::vector<int>& labels) { return auc(to_vector(scores), labels); },
        py::arg("scores"), py::arg("labels"));
  m.def(
      "mann_whitney_u",
      [](const DoubleArray& a, const DoubleArray& b) {
        const auto r = mann_whitney_u(to_vector(a), to_vector(b));
        return py::make_tuple(r.u, r.p_two_sided, r.exact);
      },
      py::arg("a"), py::arg("b"));
  m.def("class_weights", [](const std::vector<std::size_t>& counts) { return class_weights(counts).weights; });
  m.def(
      "weighted_ce",
      [](const std::vector<float>& logits, std::size_t y, const std::vector<double>& weights) {
        const auto r = weighted_ce(logits, y, ClassWeights{weights});
        return py::make_tuple(r.loss, r.dlogits);
      },
      py::arg("logits"), py::arg("label"), py::arg("weights"));

  m.def("saliency_scores", [](const FloatArray& a, std::size_t s) { return saliency_scores(to_mat(a), s); },
        py::arg("attention"), py::arg("real_count"));
  m.def("select_salient",
        [](const std::vector<double>& scores, double ratio) { return select_salient(scores, ratio); },
        py::arg("scores"), py::arg("ratio") = kDefaultSalientRatio);
  m.def(
      "explain",
      [](const Document& doc, const ModelParams& p, const ModelConfig& c, double ratio) {
        return to_python(report_to_json(explain(doc, p, c, ratio)));
      },
      py::arg("document"), py::arg("params"), py::arg("config"), py::arg("ratio") = kDefaultSalientRatio);
  m.def(
      "export_bundle",
      [](const EmbeddedDataset& ds, const ModelParams& p, const ModelConfig& c, const std::vector<std::uint32_t>& ids,
         const std::string& condition, const std::vector<std::string>& labels, double ratio) {
        std::vector<SaliencyReport> reports;
        for (auto id : ids) reports.push_back(explain(ds.find(id), p, c, ratio));
        return to_python(bundle_to_json(export_bundle(reports, ds, condition_from_string(condition), labels)));
      },
      py::arg("dataset"), py::arg("params"), py::arg("config"), py::arg("ids"), py::arg("condition") = "highlight",
      py::arg("labels") = std::vector<std::string>{"negative", "positive"}, py::arg("ratio") = kDefaultSalientRatio);

  m.def(
      "summarize_sessions",
      [](const std::vector<std::string>& session_json, const std::string& bundle_json) {
        std::vector<Session> sessions;
        for (const auto& s : session_json) sessions.push_back(session_from_json(nlohmann::json::parse(s)));
        const auto truth = bundle_truth(bundle_from_json(nlohmann::json::parse(bundle_json)));
        return to_python(summary_to_json(summarize(sessions, truth)));
      },
      py::arg("sessions"), py::arg("bundle"),
      "Sessions and bundle are JSON strings in the annotation UI's formats.");
}
