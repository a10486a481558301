#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "nfebench/coupling.hpp"
#include "nfebench/error.hpp"
#include "nfebench/harness.hpp"
#include "nfebench/metrics.hpp"
#include "nfebench/training.hpp"

namespace py = pybind11;
using namespace nfe;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    if (a.ndim() != 2) throw InvalidArgument("expected a 2-d array, got " + std::to_string(a.ndim()) + " dimensions");
    const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
    return Tensor({rows, cols}, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Tensor& t) {
    Array a({t.rows(), t.cols()});
    std::copy(t.data().begin(), t.data().end(), a.mutable_data());
    return a;
}

py::dict dataset_dict(const Dataset& d) {
    py::dict out;
    out["y"] = to_array(d.y);
    out["cond"] = to_array(d.cond);
    out["token"] = d.token;
    return out;
}

// Training rows: the dataset file when given, else the train split of the configured dataset.
Dataset training_data(const RunConfig& c, const std::string& data_path) {
    if (!data_path.empty()) return load_dataset(data_path);
    return split(generate(c.data), c.split_fractions, c.split_seed).train;
}

std::string run_train(const std::string& config, const std::string& out, const std::string& data) {
    const RunConfig c = run_config_from_doc(parse_config(config));
    return train(c, training_data(c, data), out).manifest.dump();
}

std::string run_distill(const std::string& config, const std::string& teacher, const std::string& out,
                        const std::string& data) {
    const RunConfig c = run_config_from_doc(parse_config(config));
    return distill_cd(load_model(teacher), c, training_data(c, data), out).manifest.dump();
}

std::string run_reflow(const std::string& config, const std::string& base, const std::string& out,
                       const std::string& data) {
    const RunConfig c = run_config_from_doc(parse_config(config));
    return reflow_retrain(load_model(base), c, training_data(c, data), out).manifest.dump();
}

std::string run_fit_bespoke(const std::string& config, const std::string& base, const std::string& out,
                            const std::string& data) {
    const RunConfig c = run_config_from_doc(parse_config(config));
    return fit_bespoke(load_model(base), c, training_data(c, data), out).manifest.dump();
}

py::tuple run_sample(const std::string& ckpt, int nfe, std::size_t n, std::uint64_t seed,
                     std::optional<Array> cond, const std::string& transform_path) {
    const ConditionalModel m = load_model(ckpt);
    SampleRequest req;
    req.nfe = nfe;
    req.data_dim = m.config.data_dim;
    req.n_samples = n;
    req.seed = seed;
    req.cond = cond ? to_tensor(*cond) : Tensor::matrix(n, static_cast<std::size_t>(m.config.cond_dim));
    if (req.cond.rows() != n || req.cond.cols() != static_cast<std::size_t>(m.config.cond_dim))
        throw InvalidArgument("cond must have shape (n, " + std::to_string(m.config.cond_dim) + ")");
    std::optional<BespokeTransform> transform;
    if (!transform_path.empty()) transform = load_transform(transform_path);
    EvalCounter counter;
    const Tensor x = sample_model(counted(model_field(m), counter), m, req, transform ? &*transform : nullptr);
    return py::make_tuple(to_array(x), counter.count());
}

std::string run_sweep_text(const std::string& config, std::optional<int> jobs) {
    SweepConfig c = sweep_config_from_doc(parse_config(config));
    if (jobs) c.jobs = *jobs;
    py::gil_scoped_release release;
    return sweep_csv(run_sweep(c, load_sweep_inputs(c)));
}

}  // namespace

PYBIND11_MODULE(_nfebench, m) {
    m.doc() = "Few-step generative sampler benchmark on synthetic data";

    static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
    static py::exception<ConfigError> config_error(m, "ConfigError", error.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ConfigError& e) {
            PyErr_SetString(config_error.ptr(), e.what());
        } catch (const InvalidArgument& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const Error& e) {
            PyErr_SetString(error.ptr(), e.what());
        }
    });

    m.def("dataset_kinds", &dataset_kind_names);
    m.def("sweep_methods", &sweep_method_names);
    m.def("default_nfe_list", &default_nfe_list);

    m.def(
        "generate_dataset",
        [](const std::string& kind, std::size_t n, std::uint64_t seed) {
            DatasetSpec s;
            s.kind = dataset_kind_from_string(kind);
            s.n = n;
            s.seed = seed;
            return dataset_dict(generate(s));
        },
        py::arg("kind"), py::arg("n"), py::arg("seed") = 0);
    m.def(
        "save_dataset",
        [](const std::string& kind, std::size_t n, std::uint64_t seed, const std::string& path) {
            DatasetSpec s;
            s.kind = dataset_kind_from_string(kind);
            s.n = n;
            s.seed = seed;
            save_dataset(path, generate(s));
        },
        py::arg("kind"), py::arg("n"), py::arg("seed"), py::arg("path"));
    m.def("load_dataset", [](const std::string& path) { return dataset_dict(load_dataset(path)); }, py::arg("path"));

    m.def(
        "frechet_distance",
        [](const Array& a, const Array& b) { return frechet_distance(to_tensor(a), to_tensor(b)).value; },
        py::arg("a"), py::arg("b"));
    m.def(
        "optimal_coupling",
        [](const Array& y, const Array& eps) {
            const Coupling c = optimal_coupling(to_tensor(y), to_tensor(eps));
            return py::make_tuple(c.permutation, c.cost);
        },
        py::arg("y"), py::arg("eps"));
    m.def("cell_seed", &cell_seed, py::arg("master"), py::arg("method"), py::arg("nfe"));

    m.def("_train", &run_train, py::arg("config"), py::arg("out"), py::arg("data") = "");
    m.def("_distill", &run_distill, py::arg("config"), py::arg("teacher"), py::arg("out"), py::arg("data") = "");
    m.def("_reflow", &run_reflow, py::arg("config"), py::arg("base"), py::arg("out"), py::arg("data") = "");
    m.def("_fit_bespoke", &run_fit_bespoke, py::arg("config"), py::arg("base"), py::arg("out"),
          py::arg("data") = "");
    m.def("sample", &run_sample, py::arg("ckpt"), py::arg("nfe"), py::arg("n"), py::arg("seed") = 0,
          py::arg("cond") = py::none(), py::arg("transform") = "");
    m.def("sweep", &run_sweep_text, py::arg("config"), py::arg("jobs") = py::none());
    m.def(
        "report_markdown",
        [](const std::string& csv, const std::string& metric) { return report_markdown(parse_sweep_csv(csv), metric); },
        py::arg("csv"), py::arg("metric") = "frechet");
    m.def(
        "report_svg",
        [](const std::string& csv, const std::string& metric, bool log_y) {
            return report_svg(parse_sweep_csv(csv), metric, log_y);
        },
        py::arg("csv"), py::arg("metric") = "frechet", py::arg("log_y") = false);
}
