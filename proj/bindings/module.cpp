#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>

#include "hqnn/checkpoint.hpp"
#include "hqnn/dataio.hpp"
#include "hqnn/qsim.hpp"
#include "hqnn/train.hpp"
#include "hqnn/version.hpp"

namespace py = pybind11;

using hqnn::autodiff::Graph;
using hqnn::autodiff::Tensor;

namespace {

Tensor tensor_from_array(const py::array_t<double>& arr) {
    const py::buffer_info info = arr.request();
    hqnn::autodiff::Shape shape(info.shape.begin(), info.shape.end());
    auto contiguous = py::array_t<double, py::array::c_style |
                                              py::array::forcecast>(arr);
    const double* p = contiguous.data();
    return Tensor::from_data(
        std::move(shape), std::vector<double>(p, p + contiguous.size()));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data(), t.data() + t.size(), out.mutable_data());
    return out;
}

hqnn::models::ModelSpec spec_from(const std::string& family, bool quantum) {
    return hqnn::models::ModelSpec::preset(
        hqnn::models::family_from_name(family), quantum);
}

py::dict record_to_dict(const hqnn::train::TrainRecord& r) {
    py::dict d;
    d["seed"] = r.seed;
    d["train_loss"] = r.train_loss;
    d["val_accuracy"] = r.val_accuracy;
    d["best_epoch"] = r.best_epoch;
    d["best_val_accuracy"] = r.best_val_accuracy;
    d["checkpoint_path"] = r.checkpoint_path;
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "hybrid quantum-classical binary classifiers (C++ core)";
    m.attr("__version__") = hqnn::kVersion;

    py::register_exception<hqnn::ValidationError>(m, "ValidationError",
                                                  PyExc_ValueError);
    py::register_exception<hqnn::ShapeError>(m, "ShapeError",
                                             PyExc_ValueError);
    py::register_exception<hqnn::FormatError>(m, "FormatError",
                                              PyExc_ValueError);

    m.def(
        "circuit_forward",
        [](double theta, std::optional<std::uint64_t> shots,
           std::uint64_t seed) {
            if (!shots)
                return hqnn::qsim::circuit_forward(
                    theta, hqnn::qsim::analytic_backend());
            return hqnn::qsim::sample_probability(theta, *shots, seed);
        },
        py::arg("theta"), py::arg("shots") = py::none(), py::arg("seed") = 0,
        "P(1) of the |0> -> H -> Ry(theta) circuit; exact when shots is "
        "None, otherwise a seeded Monte-Carlo estimate");
    m.def("param_shift_grad", &hqnn::qsim::param_shift_grad, py::arg("theta"),
          "d p1 / d theta via the parameter-shift rule");

    m.def(
        "conv2d",
        [](const py::array_t<double>& input, const py::array_t<double>& kernel,
           const py::array_t<double>& bias, const std::string& padding) {
            Graph g;
            const auto pad = padding == "same"
                                 ? hqnn::autodiff::Padding::same
                                 : hqnn::autodiff::Padding::valid;
            if (padding != "same" && padding != "valid")
                throw hqnn::ValidationError("padding must be same or valid");
            return array_from_tensor(
                hqnn::autodiff::conv2d(g, tensor_from_array(input),
                                       tensor_from_array(kernel),
                                       tensor_from_array(bias), pad));
        },
        py::arg("input"), py::arg("kernel"), py::arg("bias"),
        py::arg("padding") = "same",
        "channel-first 2D convolution, stride 1 (forward only)");

    py::class_<hqnn::models::Model>(m, "Model")
        .def_property_readonly(
            "family",
            [](const hqnn::models::Model& mm) {
                return std::string(
                    hqnn::models::family_name(mm.spec.family));
            })
        .def_property_readonly(
            "quantum",
            [](const hqnn::models::Model& mm) { return mm.spec.quantum_head; })
        .def_property_readonly("param_count",
                               [](const hqnn::models::Model& mm) {
                                   return hqnn::models::param_count(mm);
                               })
        .def(
            "forward",
            [](const hqnn::models::Model& mm, const py::array_t<double>& img) {
                Graph g;
                return hqnn::models::forward(g, mm, tensor_from_array(img))
                    .item();
            },
            py::arg("image"), "probability for one (3,64,64) image")
        .def(
            "parameters",
            [](const hqnn::models::Model& mm) {
                py::dict d;
                for (std::size_t i = 0; i < mm.params.size(); ++i)
                    d[py::str(mm.param_names[i])] =
                        array_from_tensor(mm.params[i]);
                return d;
            },
            "name -> ndarray copy of every trainable tensor")
        .def(
            "save",
            [](const hqnn::models::Model& mm,
               const std::filesystem::path& path) {
                hqnn::train::save_checkpoint(mm, path);
            },
            py::arg("path"));

    m.def(
        "build_model",
        [](const std::string& family, bool quantum, std::uint64_t seed) {
            return hqnn::models::build_model(spec_from(family, quantum), seed);
        },
        py::arg("family"), py::arg("quantum") = false, py::arg("seed") = 0);
    m.def("load_checkpoint", &hqnn::train::load_checkpoint, py::arg("path"));

    m.def(
        "gen_synthetic",
        [](std::size_t n_per_class, std::uint64_t seed) {
            const auto samples = hqnn::dataio::gen_synthetic(n_per_class, seed);
            py::array_t<double> images(std::vector<py::ssize_t>{
                static_cast<py::ssize_t>(samples.size()), 3, 64, 64});
            py::array_t<int> labels(
                std::vector<py::ssize_t>{static_cast<py::ssize_t>(
                    samples.size())});
            double* ip = images.mutable_data();
            int* lp = labels.mutable_data();
            for (std::size_t i = 0; i < samples.size(); ++i) {
                std::copy(samples[i].pixels.data(),
                          samples[i].pixels.data() + samples[i].pixels.size(),
                          ip + i * samples[i].pixels.size());
                lp[i] = samples[i].class_id;
            }
            return py::make_tuple(images, labels);
        },
        py::arg("n_per_class"), py::arg("seed") = 0,
        "(images, labels) for the two synthetic classes");

    m.def(
        "train_synthetic",
        [](const std::string& family, bool quantum, std::size_t n_per_class,
           std::size_t epochs, std::uint64_t seed, std::uint64_t data_seed,
           double lr) {
            hqnn::train::TrainConfig tc;
            tc.model = spec_from(family, quantum);
            tc.epochs = epochs;
            tc.seed = seed;
            tc.lr = lr;
            tc.pair = hqnn::dataio::make_pair(0, 1);
            const auto samples =
                hqnn::dataio::gen_synthetic(n_per_class, data_seed);
            const auto labeled = hqnn::dataio::build_pair_task(samples, 0, 1);
            const auto split = hqnn::dataio::split_train_val(
                labeled, hqnn::train::kValFraction, seed);
            return record_to_dict(hqnn::train::train(tc, split));
        },
        py::arg("family"), py::arg("quantum") = false,
        py::arg("n_per_class") = 50, py::arg("epochs") = 5,
        py::arg("seed") = 0, py::arg("data_seed") = 0, py::arg("lr") = 1e-4,
        "end-to-end training run on the synthetic dataset");

    m.def(
        "variance_stats",
        [](const std::vector<double>& acc) {
            const auto [mean, var] = hqnn::train::variance_stats(acc);
            return py::make_tuple(mean, var);
        },
        py::arg("accuracies"), "mean and population variance");
    m.def("default_seeds",
          []() { return hqnn::train::kDefaultSeeds; },
          "the 10-seed benchmark list");
}
