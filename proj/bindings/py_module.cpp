#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "h2o/checkpoint.hpp"
#include "h2o/config.hpp"
#include "h2o/data.hpp"
#include "h2o/metrics.hpp"
#include "h2o/model.hpp"
#include "h2o/topology.hpp"

namespace py = pybind11;
using namespace h2o;

namespace {

NdArray from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  Shape shape;
  for (py::ssize_t i = 0; i < arr.ndim(); ++i)
    shape.push_back(static_cast<std::size_t>(arr.shape(i)));
  std::vector<double> values(arr.data(), arr.data() + arr.size());
  return NdArray::from_values(std::move(shape), std::move(values));
}

py::array_t<double> to_numpy(const NdArray& a) {
  std::vector<py::ssize_t> shape(a.shape().begin(), a.shape().end());
  py::array_t<double> out(shape);
  std::copy(a.data(), a.data() + a.numel(), out.mutable_data());
  return out;
}

py::dict metrics_dict(const MetricsReport& m) {
  py::dict d;
  d["accuracy"] = m.accuracy;
  d["f1_micro"] = m.f1_micro;
  d["f1_positive"] = m.f1_positive;
  d["f1_macro"] = m.f1_macro;
  return d;
}

}  // namespace

PYBIND11_MODULE(_h2oformer, m) {
  m.doc() = "hypergraph-enhanced transformer for skeleton-based emotion recognition";

  py::register_exception<ValidationError>(m, "ValidationError");
  py::register_exception<NumericError>(m, "NumericError");

  py::class_<Topology, std::shared_ptr<Topology>>(m, "Topology")
      .def_static("from_json_file", &Topology::from_json_file)
      .def_static("from_json_text", &Topology::from_json_text)
      .def_property_readonly("num_vertices", &Topology::num_vertices)
      .def_property_readonly("num_hyperedges", &Topology::num_hyperedges)
      .def_property_readonly("root_joint", [](const Topology& t) { return t.root_joint; })
      .def_property_readonly("incidence",
                             [](const Topology& t) { return to_numpy(t.partition.incidence); })
      .def_property_readonly("hops",
                             [](const Topology& t) {
                               const std::size_t n = t.num_vertices();
                               py::array_t<std::uint32_t> out(
                                   {static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(n)});
                               std::copy(t.hops.hops.begin(), t.hops.hops.end(),
                                         out.mutable_data());
                               return out;
                             })
      .def_property_readonly("max_hops_plus_one",
                             [](const Topology& t) { return t.hops.max_hops_plus_one; });

  m.def(
      "hop_distances",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& adjacency) {
        NdArray adj = from_numpy(adjacency);
        if (adj.ndim() != 2 || adj.dim(0) != adj.dim(1))
          throw ValidationError("hop_distances: adjacency must be square");
        const std::size_t n = adj.dim(0);
        std::vector<std::pair<std::size_t, std::size_t>> bones;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = i + 1; j < n; ++j)
            if (adj.at(i, j) != 0.0) bones.emplace_back(i, j);
        HopTable hops = hop_distances(make_joint_graph(n, bones));
        py::array_t<std::uint32_t> out(
            {static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(n)});
        std::copy(hops.hops.begin(), hops.hops.end(), out.mutable_data());
        return out;
      },
      py::arg("adjacency"), "BFS shortest-path hop matrix of a symmetric adjacency matrix");

  m.def(
      "hyperedge_pool",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
         const std::vector<std::vector<std::size_t>>& groups,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& weight) {
        NdArray features = from_numpy(x);
        HyperedgePartition partition = partition_from_groups(features.dim(0), groups);
        DegreeMatrices degrees = compute_degrees(partition);
        return to_numpy(hyperedge_pool(features, partition, degrees, from_numpy(weight)));
      },
      py::arg("x"), py::arg("groups"), py::arg("weight"),
      "Per-hyperedge mean of member-vertex features, projected by the weight");

  m.def(
      "gather_relpos",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& adjacency,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& table) {
        NdArray adj = from_numpy(adjacency);
        const std::size_t n = adj.dim(0);
        std::vector<std::pair<std::size_t, std::size_t>> bones;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = i + 1; j < n; ++j)
            if (adj.at(i, j) != 0.0) bones.emplace_back(i, j);
        HopTable hops = hop_distances(make_joint_graph(n, bones));
        return to_numpy(gather_relpos(hops, from_numpy(table)));
      },
      py::arg("adjacency"), py::arg("table"),
      "Hop-indexed gather of the relative-position table, (V,V,d)");

  m.def(
      "compute_metrics",
      [](const std::vector<int>& predictions, const std::vector<int>& labels) {
        return metrics_dict(compute_metrics(predictions, labels));
      },
      py::arg("predictions"), py::arg("labels"));

  m.def("reported_reference_results", []() {
    py::list out;
    for (const auto& r : reported_reference_results()) {
      py::dict d;
      d["dataset"] = r.dataset;
      d["accuracy"] = r.accuracy;
      d["f1"] = r.f1;
      out.append(d);
    }
    return out;
  });

  m.def(
      "generate_synthetic",
      [](const std::string& spec_json, const std::string& topology_json) {
        nlohmann::json j = nlohmann::json::parse(spec_json, nullptr, false);
        if (j.is_discarded()) throw ValidationError("generate_synthetic: spec is not valid JSON");
        SynthSpec spec;
        if (j.contains("num_subjects")) spec.num_subjects = j["num_subjects"].get<std::size_t>();
        if (j.contains("sequences_per_subject"))
          spec.sequences_per_subject = j["sequences_per_subject"].get<std::size_t>();
        if (j.contains("noise_std")) spec.noise_std = j["noise_std"].get<double>();
        if (j.contains("positive_group"))
          spec.positive_group = j["positive_group"].get<std::size_t>();
        if (j.contains("negative_group"))
          spec.negative_group = j["negative_group"].get<std::size_t>();
        if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
        auto topo = std::make_shared<Topology>(Topology::from_json_text(topology_json));
        DatasetManifest manifest = generate_synthetic(spec, topo);
        py::list out;
        for (const auto& seq : manifest.sequences) {
          py::dict d;
          d["subject"] = seq.subject;
          d["label"] = seq.label;
          d["frames"] = to_numpy(seq.frames);
          out.append(d);
        }
        return out;
      },
      py::arg("spec_json"), py::arg("topology_json"));

  py::class_<Model>(m, "Model")
      .def(py::init([](const std::string& model_json, const std::string& topology_json,
                       std::uint64_t seed) {
             nlohmann::json j = nlohmann::json::parse(model_json, nullptr, false);
             if (j.is_discarded()) throw ValidationError("Model: config is not valid JSON");
             auto topo = std::make_shared<Topology>(Topology::from_json_text(topology_json));
             return new Model(parse_model_config(j), topo, seed);
           }),
           py::arg("model_json"), py::arg("topology_json"), py::arg("seed") = 0)
      .def_property_readonly("parameter_count", &Model::parameter_count)
      .def(
          "forward",
          [](Model& model,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
            NoGradGuard guard;
            ForwardOutput out = model.forward(from_numpy(x), Mode::eval);
            py::dict d;
            d["logit"] = out.logit.scalar();
            d["probability"] = out.probability.scalar();
            d["reconstruction"] =
                out.reconstruction.defined()
                    ? py::object(to_numpy(out.reconstruction.value()))
                    : py::object(py::none());
            return d;
          },
          py::arg("x"), "Eval-mode forward pass on one (T,V,3) sequence")
      .def("save_checkpoint",
           [](Model& model, const std::string& path) {
             save_checkpoint(path, model.parameters(),
                             {model.config().dtype, model.seed(), model.parameter_count()});
           })
      .def("load_checkpoint", [](Model& model, const std::string& path) {
        load_checkpoint(path, model.parameters());
      });
}
