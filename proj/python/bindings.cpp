// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "xmc/dataset.hpp"
#include "xmc/error.hpp"
#include "xmc/kahan.hpp"
#include "xmc/memory_plan.hpp"
#include "xmc/metrics.hpp"
#include "xmc/trainer.hpp"

namespace py = pybind11;
using namespace xmc;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

FloatArray map_values(const FloatArray& in, const std::function<float(float, std::size_t)>& fn) {
  FloatArray out(in.request().shape);
  const float* src = in.data();
  float* dst = out.mutable_data();
  for (py::ssize_t i = 0; i < in.size(); ++i) dst[i] = fn(src[i], static_cast<std::size_t>(i));
  return out;
}

py::dict plan_dict(const MemoryPlan& p) {
  py::dict d;
  d["recipe"] = std::string(to_string(p.recipe()));
  d["peak_bytes"] = p.peak_bytes();
  d["peak_gib"] = to_gib(static_cast<double>(p.peak_bytes()));
  d["init_gib"] = to_gib(static_cast<double>(p.init_bytes()));
  d["classifier_peak_gib"] = to_gib(static_cast<double>(p.classifier_peak_bytes()));
  py::dict allocs;
  for (const auto& a : p.allocations()) allocs[py::str(a.name)] = a.bytes;
  d["allocations"] = allocs;
  d["timeline_csv"] = p.timeline_csv();
  return d;
}

py::list metrics_list(const std::vector<MetricRecord>& records) {
  py::list out;
  for (const auto& r : records) {
    py::dict d;
    d["metric"] = r.metric;
    d["k"] = r.k;
    d["value"] = r.value;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Low-precision extreme multilabel classification engine";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ArithmeticError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_RuntimeError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

  py::enum_<Rounding>(m, "Rounding").value("RTN", Rounding::kNearest).value("SR", Rounding::kStochastic);

  py::class_<FloatFormat>(m, "FloatFormat")
      .def(py::init([](const std::string& name) { return FloatFormat::parse(name); }), py::arg("name"))
      .def_static("ieee", &FloatFormat::ieee, py::arg("exp_bits"), py::arg("man_bits"),
                  py::arg("saturating") = true)
      .def_readonly("exp_bits", &FloatFormat::exp_bits)
      .def_readonly("man_bits", &FloatFormat::man_bits)
      .def_readonly("saturating", &FloatFormat::saturating)
      .def_property_readonly("name", &FloatFormat::name)
      .def_property_readonly("max_finite", &FloatFormat::max_finite)
      .def_property_readonly("min_subnormal", &FloatFormat::min_subnormal)
      .def_property_readonly("storage_bits", &FloatFormat::storage_bits)
      .def("__eq__", [](const FloatFormat& a, const FloatFormat& b) { return a == b; })
      .def("__repr__", [](const FloatFormat& f) { return "FloatFormat('" + f.name() + "')"; });

  m.def(
      "round_nearest",
      [](const FloatFormat& f, const FloatArray& x) {
        return map_values(x, [&](float v, std::size_t) { return round_nearest(f, v); });
      },
      py::arg("format"), py::arg("values"), "Round to nearest, ties to even.");
  m.def(
      "round_stochastic",
      [](const FloatFormat& f, const FloatArray& x, std::uint64_t seed, std::uint64_t step, std::uint32_t tensor) {
        const RoundingRng rng(seed);
        return map_values(x, [&](float v, std::size_t i) { return round_stochastic(f, v, rng, {step, tensor, i}); });
      },
      py::arg("format"), py::arg("values"), py::arg("seed") = 0, py::arg("step") = 0, py::arg("tensor") = 0,
      "Stochastic rounding keyed by (seed, step, tensor, flat index).");
  m.def("on_grid", &on_grid, py::arg("format"), py::arg("value"));
  m.def(
      "kahan_sum",
      [](const FloatFormat& f, float init, const FloatArray& values) {
        const auto s = kahan_accumulate({init, 0.0f}, std::span<const float>(values.data(), values.size()), f);
        return py::make_tuple(s.sum, s.comp);
      },
      py::arg("format"), py::arg("init"), py::arg("values"), "Compensated sum; returns (sum, compensation).");
  m.def(
      "plain_sum",
      [](const FloatFormat& f, float init, const FloatArray& values) {
        float s = init;
        for (py::ssize_t i = 0; i < values.size(); ++i) s = quantized_add(s, values.data()[i], f);
        return s;
      },
      py::arg("format"), py::arg("init"), py::arg("values"));

  m.def(
      "memory_plan",
      [](std::uint64_t labels, const std::string& recipe, std::uint64_t dim, std::uint64_t batch,
         std::uint64_t seq, std::uint64_t chunks, const std::string& encoder) {
        TrainingShape s;
        s.labels = labels;
        s.dim = dim;
        s.batch = batch;
        s.seq = seq;
        s.chunks = chunks;
        s.encoder = EncoderProfile::by_name(encoder);
        return plan_dict(plan(s, parse_recipe(recipe)));
      },
      py::arg("labels"), py::arg("recipe"), py::arg("dim") = 768, py::arg("batch") = 128, py::arg("seq") = 128,
      py::arg("chunks") = 8, py::arg("encoder") = "bert-base");

  m.def(
      "precision_at_k",
      [](const FloatArray& scores, const std::vector<std::uint32_t>& truth, std::size_t k) {
        return precision_at_k(std::span<const float>(scores.data(), scores.size()), truth, k);
      },
      py::arg("scores"), py::arg("truth"), py::arg("k"));
  m.def(
      "psp_at_k",
      [](const FloatArray& scores, const std::vector<std::uint32_t>& truth, std::vector<double> propensity,
         std::size_t k, bool normalized) {
        return psp_at_k(std::span<const float>(scores.data(), scores.size()), truth,
                        PropensityModel(std::move(propensity)), k, normalized);
      },
      py::arg("scores"), py::arg("truth"), py::arg("propensity"), py::arg("k"), py::arg("normalized") = false);
  m.def(
      "propensity_from_frequencies",
      [](const std::vector<std::size_t>& counts, std::size_t n, double a, double b) {
        const auto p = propensity_from_frequencies(counts, n, a, b);
        return std::vector<double>(p.values().begin(), p.values().end());
      },
      py::arg("label_counts"), py::arg("num_samples"), py::arg("a") = 0.55, py::arg("b") = 1.5);

  py::class_<SparseDataset>(m, "Dataset")
      .def_property_readonly("num_samples", &SparseDataset::size)
      .def_property_readonly("num_features", &SparseDataset::num_features)
      .def_property_readonly("num_labels", &SparseDataset::num_labels)
      .def("labels", [](const SparseDataset& d, std::size_t i) { return d.row(i).labels; })
      .def("label_counts", &SparseDataset::label_counts)
      .def("save", [](const SparseDataset& d, const std::filesystem::path& p) { save_dataset(p, d); })
      .def("__len__", &SparseDataset::size);

  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def(
      "generate_synthetic",
      [](std::size_t samples, std::size_t features, std::size_t labels, double mean_labels, double zipf,
         std::size_t min_labels, std::size_t max_labels, double noise, std::size_t noise_nnz, std::uint64_t seed) {
        SyntheticSpec s;
        s.samples = samples;
        s.features = features;
        s.labels = labels;
        s.mean_labels = mean_labels;
        s.zipf = zipf;
        s.min_labels = min_labels;
        s.max_labels = max_labels;
        s.noise = noise;
        s.noise_nnz = noise_nnz;
        s.seed = seed;
        return generate_synthetic(s);
      },
      py::arg("samples") = 1000, py::arg("features") = 256, py::arg("labels") = 64, py::arg("mean_labels") = 1.0,
      py::arg("zipf") = 1.0, py::arg("min_labels") = 0, py::arg("max_labels") = 0, py::arg("noise") = 0.1,
      py::arg("noise_nnz") = 4, py::arg("seed") = 0);

  m.def("default_train_config", []() { return to_json(TrainConfig{}); },
        "Default training configuration as a JSON string.");
  m.def(
      "train_json",
      [](const SparseDataset& ds, const std::string& config_json) {
        const TrainConfig cfg = train_config_from_json(config_json);
        Trainer trainer(ds, cfg);
        {
          py::gil_scoped_release release;
          trainer.run();
        }
        py::dict out;
        py::list history;
        for (const auto& e : trainer.history()) history.append(py::str(to_json_line(e)));
        out["history"] = history;
        out["metrics"] = metrics_list(trainer.evaluate());
        out["tracked_peak_bytes"] = cfg.track_memory ? trainer.tracked_peak() : std::size_t{0};
        const QuantizedMatrix& q = trainer.head().weights();
        FloatArray w({q.rows(), q.cols()});
        std::copy(q.values().begin(), q.values().end(), w.mutable_data());
        out["weights"] = w;
        out["weight_format"] = q.format().name();
        return out;
      },
      py::arg("dataset"), py::arg("config_json"));
}
