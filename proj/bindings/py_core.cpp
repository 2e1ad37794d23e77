// Python bindings for the core operations: checkpoint I/O, the merge
// operators, dataset generation, toy-model training, evaluation, and the
// pipeline driver. Tensors cross the boundary as float32 numpy arrays
// (copied); structured values (specs, reports) as plain dicts mirroring the
// on-disk JSON.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "mergeprobe/analysis.hpp"
#include "mergeprobe/dataset.hpp"
#include "mergeprobe/errors.hpp"
#include "mergeprobe/merge.hpp"
#include "mergeprobe/pipeline.hpp"
#include "mergeprobe/probe.hpp"
#include "mergeprobe/safetensors.hpp"
#include "mergeprobe/toy_model.hpp"

#ifndef MERGEPROBE_VERSION
#define MERGEPROBE_VERSION "0.0.0"
#endif

namespace py = pybind11;
using namespace mergeprobe;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// ---- JSON <-> Python bridge -------------------------------------------------

nlohmann::json to_json(const py::handle& obj) {
    if (obj.is_none()) return nullptr;
    if (py::isinstance<py::bool_>(obj)) return obj.cast<bool>();
    if (py::isinstance<py::int_>(obj)) return obj.cast<std::int64_t>();
    if (py::isinstance<py::float_>(obj)) return obj.cast<double>();
    if (py::isinstance<py::str>(obj)) return obj.cast<std::string>();
    if (py::isinstance<py::dict>(obj)) {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [key, value] : obj.cast<py::dict>())
            j[key.cast<std::string>()] = to_json(value);
        return j;
    }
    if (py::isinstance<py::sequence>(obj) && !py::isinstance<py::bytes>(obj)) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& item : obj.cast<py::sequence>()) j.push_back(to_json(item));
        return j;
    }
    throw py::type_error("cannot convert object to JSON: " +
                         std::string(py::str(py::type::of(obj))));
}

py::object to_py(const nlohmann::json& j) {
    switch (j.type()) {
        case nlohmann::json::value_t::null: return py::none();
        case nlohmann::json::value_t::boolean: return py::bool_(j.get<bool>());
        case nlohmann::json::value_t::number_integer:
            return py::int_(j.get<std::int64_t>());
        case nlohmann::json::value_t::number_unsigned:
            return py::int_(j.get<std::uint64_t>());
        case nlohmann::json::value_t::number_float: return py::float_(j.get<double>());
        case nlohmann::json::value_t::string: return py::str(j.get<std::string>());
        case nlohmann::json::value_t::array: {
            py::list out;
            for (const auto& item : j) out.append(to_py(item));
            return out;
        }
        case nlohmann::json::value_t::object: {
            py::dict out;
            for (const auto& [key, value] : j.items())
                out[py::str(key)] = to_py(value);
            return out;
        }
        default: return py::none();
    }
}

// ---- tensor / dataset conversion --------------------------------------------

py::array tensor_to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<float> out(shape);
    std::memcpy(out.mutable_data(), t.data.data(), t.data.size() * sizeof(float));
    return out;
}

Tensor numpy_to_tensor(const FloatArray& arr) {
    Tensor t;
    t.shape.assign(arr.shape(), arr.shape() + arr.ndim());
    t.data.assign(arr.data(), arr.data() + arr.size());
    return t;
}

Matrix numpy_to_matrix(const FloatArray& arr) {
    if (arr.ndim() != 2) throw py::value_error("expected a 2-D array");
    Matrix m(static_cast<std::size_t>(arr.shape(0)), static_cast<std::size_t>(arr.shape(1)));
    std::memcpy(m.data.data(), arr.data(), m.data.size() * sizeof(float));
    return m;
}

py::array matrix_to_numpy(const Matrix& m) {
    py::array_t<float> out({static_cast<py::ssize_t>(m.rows),
                            static_cast<py::ssize_t>(m.cols)});
    std::memcpy(out.mutable_data(), m.data.data(), m.data.size() * sizeof(float));
    return out;
}

py::dict dataset_to_py(const LabeledDataset& ds) {
    py::dict out;
    out["inputs"] = matrix_to_numpy(ds.inputs);
    out["labels"] = py::cast(ds.labels);
    out["num_classes"] = ds.num_classes;
    return out;
}

LabeledDataset py_to_dataset(const py::dict& d) {
    LabeledDataset ds;
    ds.inputs = numpy_to_matrix(d["inputs"].cast<FloatArray>());
    ds.labels = d["labels"].cast<std::vector<int>>();
    ds.num_classes = d["num_classes"].cast<int>();
    validate_dataset(ds, "dataset");
    return ds;
}

ToyArchitecture arch_from_py(const py::dict& d) {
    return arch_from_json(to_json(d), "arch");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Merge toy-model checkpoints and measure what the merge preserves";
    m.attr("__version__") = MERGEPROBE_VERSION;

    py::register_exception<Error>(m, "MergeProbeError");

    // ---- checkpoints --------------------------------------------------------

    py::class_<Checkpoint>(m, "Checkpoint",
                           "Named-tensor checkpoint with string metadata")
        .def(py::init<>())
        .def("tensor_names",
             [](const Checkpoint& ck) {
                 std::vector<std::string> names;
                 for (const auto& [name, t] : ck.tensors) names.push_back(name);
                 return names;
             })
        .def("tensor",
             [](const Checkpoint& ck, const std::string& name) {
                 const auto it = ck.tensors.find(name);
                 if (it == ck.tensors.end())
                     throw py::key_error("no tensor named '" + name + "'");
                 return tensor_to_numpy(it->second);
             },
             py::arg("name"), "Tensor contents as a float32 array (copy)")
        .def("set_tensor",
             [](Checkpoint& ck, const std::string& name, const FloatArray& arr) {
                 ck.tensors[name] = numpy_to_tensor(arr);
             },
             py::arg("name"), py::arg("values"))
        .def_property(
            "metadata", [](const Checkpoint& ck) { return ck.metadata; },
            [](Checkpoint& ck, const std::map<std::string, std::string>& md) {
                ck.metadata = md;
            })
        .def("__contains__",
             [](const Checkpoint& ck, const std::string& name) {
                 return ck.tensors.count(name) > 0;
             })
        .def("__len__", [](const Checkpoint& ck) { return ck.tensors.size(); })
        .def("__eq__",
             [](const Checkpoint& a, const Checkpoint& b) { return a == b; },
             py::is_operator());

    m.def("load_checkpoint",
          [](const std::filesystem::path& path) { return load_checkpoint(path.string()); },
          py::arg("path"));
    m.def("save_checkpoint",
          [](const Checkpoint& ck, const std::filesystem::path& path) {
              save_checkpoint(ck, path.string());
          },
          py::arg("checkpoint"), py::arg("path"));
    m.def("checkpoint_bytes",
          [](const Checkpoint& ck) { return py::bytes(checkpoint_bytes(ck)); },
          py::arg("checkpoint"), "Serialized container bytes");

    // ---- merge operators ----------------------------------------------------

    m.def("merge_linear", &merge_linear, py::arg("parents"), py::arg("weights"),
          "Weighted average of parent checkpoints (one weight per parent)");
    m.def("merge_slerp", &merge_slerp, py::arg("a"), py::arg("b"), py::arg("t"),
          "Spherical interpolation on each flattened tensor");
    m.def("merge_task_arithmetic", &merge_task_arithmetic, py::arg("base"),
          py::arg("fine_tuned"), py::arg("lambda_"),
          "base + lambda * sum of task vectors");
    m.def("merge_ties", &merge_ties, py::arg("base"), py::arg("fine_tuned"),
          py::arg("density"), py::arg("lambda_"),
          "Trim by magnitude, elect signs, merge sign-aligned entries");
    m.def("merge_dare_ties", &merge_dare_ties, py::arg("base"), py::arg("fine_tuned"),
          py::arg("drop_prob"), py::arg("density"), py::arg("lambda_"), py::arg("seed"),
          "TIES over drop-and-rescale sparsified task vectors");

    // ---- datasets and toy models --------------------------------------------

    m.def("generate_dataset",
          [](const py::dict& spec) {
              return dataset_to_py(generate_dataset(parse_gen_spec(to_json(spec), "spec")));
          },
          py::arg("spec"), "Synthetic dataset from a generator spec dict");
    m.def("generate_splits",
          [](const py::dict& spec) {
              py::dict out;
              for (const auto& [name, ds] :
                   generate_splits(parse_gen_spec(to_json(spec), "spec")))
                  out[py::str(name)] = dataset_to_py(ds);
              return out;
          },
          py::arg("spec"), "One dataset per declared split");
    m.def("load_dataset",
          [](const std::filesystem::path& path) {
              return dataset_to_py(load_dataset(path));
          },
          py::arg("path"));
    m.def("save_dataset",
          [](const py::dict& ds, const std::filesystem::path& path) {
              save_dataset(py_to_dataset(ds), path);
          },
          py::arg("dataset"), py::arg("path"));

    m.def("train_toy_model",
          [](const py::dict& arch, const py::dict& data, int epochs, double learning_rate,
             std::uint64_t seed, const Checkpoint* init_from) {
              return train_toy_model(arch_from_py(arch), py_to_dataset(data), epochs,
                                     learning_rate, seed, init_from);
          },
          py::arg("arch"), py::arg("data"), py::arg("epochs"), py::arg("learning_rate"),
          py::arg("seed"), py::arg("init_from") = nullptr,
          "Deterministic full-batch training of the tanh MLP");
    m.def("forward",
          [](const Checkpoint& model, const py::dict& arch, const FloatArray& inputs) {
              return matrix_to_numpy(forward(model, arch_from_py(arch),
                                             numpy_to_matrix(inputs)));
          },
          py::arg("model"), py::arg("arch"), py::arg("inputs"),
          "Logits [n, num_classes] for a batch of inputs");
    m.def("extract_representation",
          [](const Checkpoint& model, const py::dict& arch, const FloatArray& inputs) {
              return matrix_to_numpy(extract_representation(model, arch_from_py(arch),
                                                            numpy_to_matrix(inputs)));
          },
          py::arg("model"), py::arg("arch"), py::arg("inputs"),
          "Final hidden activations (probe features)");

    // ---- evaluation ---------------------------------------------------------

    m.def("evaluate_behavior",
          [](const Checkpoint& model, const py::dict& arch,
             const std::filesystem::path& suites_file, const std::string& model_id) {
              const BehaviorReport report =
                  evaluate_behavior(model, arch_from_py(arch),
                                    load_behavior_suites(suites_file), model_id);
              return to_py(behavior_report_to_json(report));
          },
          py::arg("model"), py::arg("arch"), py::arg("suites_file"), py::arg("model_id"),
          "Behavioral accuracy report as a dict");
    m.def("run_probe_suite",
          [](const Checkpoint& model, const py::dict& arch,
             const std::filesystem::path& tasks_file, const std::string& model_id,
             int epochs, double learning_rate, double l2_penalty) {
              ProbeConfig config;
              config.epochs = epochs;
              config.learning_rate = learning_rate;
              config.l2_penalty = l2_penalty;
              const ProbeReport report =
                  run_probe_suite(model, arch_from_py(arch), load_probe_tasks(tasks_file),
                                  config, model_id);
              return to_py(probe_report_to_json(report));
          },
          py::arg("model"), py::arg("arch"), py::arg("tasks_file"), py::arg("model_id"),
          py::arg("epochs") = ProbeConfig{}.epochs,
          py::arg("learning_rate") = ProbeConfig{}.learning_rate,
          py::arg("l2_penalty") = ProbeConfig{}.l2_penalty,
          "Linear-probe report over a task manifest as a dict");
    m.def("categorize_vs_parents",
          [](double merged, double parent_a, double parent_b, double epsilon) {
              return std::string(
                  category_name(categorize_vs_parents(merged, parent_a, parent_b, epsilon)));
          },
          py::arg("merged"), py::arg("parent_a"), py::arg("parent_b"),
          py::arg("epsilon") = 0.0, "'Better', 'Between', or 'Worse'");

    // ---- statistics ---------------------------------------------------------

    m.def("pearson", &pearson, py::arg("x"), py::arg("y"),
          "Sample Pearson correlation, clamped to [-1, 1]");
    m.def("spearman", &spearman, py::arg("x"), py::arg("y"),
          "Rank correlation with average ranks for ties");
    m.def("fractional_ranks", &fractional_ranks, py::arg("values"),
          "1-based ranks, ties averaged");
    m.def("correlation_matrix",
          [](const py::list& probe_reports, const py::list& behavior_reports,
             const std::string& method) {
              std::vector<ProbeReport> probes;
              for (const auto& r : probe_reports)
                  probes.push_back(probe_report_from_json(to_json(r), "probe report"));
              std::vector<BehaviorReport> behaviors;
              for (const auto& r : behavior_reports)
                  behaviors.push_back(
                      behavior_report_from_json(to_json(r), "behavior report"));
              CorrMethod m_;
              if (method == "pearson") m_ = CorrMethod::pearson;
              else if (method == "spearman") m_ = CorrMethod::spearman;
              else throw py::value_error("method must be 'pearson' or 'spearman'");
              return to_py(correlation_matrix_to_json(
                  correlation_matrix(probes, behaviors, m_)));
          },
          py::arg("probe_reports"), py::arg("behavior_reports"),
          py::arg("method") = "pearson",
          "Phenomenon x suite correlation matrix from report dicts");

    // ---- pipeline -----------------------------------------------------------

    m.def("run_pipeline",
          [](const std::filesystem::path& manifest, const py::object& out,
             const py::object& seed, int jobs, const std::string& stage) {
              PipelineOptions options;
              if (!out.is_none()) options.out_dir = out.cast<std::filesystem::path>();
              if (!seed.is_none()) {
                  options.has_seed = true;
                  options.seed = seed.cast<std::uint64_t>();
              }
              options.jobs = jobs;
              options.stage = stage;
              const PipelineResult result =
                  run_pipeline(validate_manifest(manifest), options);
              py::dict d;
              d["out_dir"] = result.out_dir;
              d["stages"] = result.stages_run;
              return d;
          },
          py::arg("manifest"), py::arg("out") = py::none(), py::arg("seed") = py::none(),
          py::arg("jobs") = 1, py::arg("stage") = std::string(),
          "Execute the merge-and-evaluate pipeline from a run manifest");
}
