#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <random>

#include "udsc/adaptation.hpp"
#include "udsc/channel.hpp"
#include "udsc/error.hpp"
#include "udsc/harness.hpp"
#include "udsc/objectives.hpp"

namespace py = pybind11;
using namespace udsc;
using udsc::ad::Matrix;

namespace {

harness::CommandOptions make_options(const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed,
                                     std::optional<std::string> out, bool force, bool quiet) {
    harness::CommandOptions o;
    o.overrides = overrides;
    o.seed = seed;
    if (out) o.out = *out;
    o.force = force;
    o.quiet = quiet;
    return o;
}

py::dict row_dict(const harness::ResultRow& r) {
    py::dict d;
    d["system"] = r.system;
    d["task"] = std::string(to_string(r.task));
    d["snr_db"] = r.snr_db;
    d["metric"] = r.metric;
    d["value"] = r.value;
    d["std"] = r.std;
    d["n"] = r.n;
    d["model_tag"] = r.model_tag;
    d["exit_layer"] = r.exit_layer;
    d["symbols_sent"] = r.symbols_sent;
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Unified multi-task semantic communication core";
    static py::exception<Error> error(m, "UdscError", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            PyErr_SetString(error.ptr(), (std::string(to_string(e.code())) + ": " + e.what()).c_str());
        }
    });

    m.def("version", &harness::version_string);
    m.def("tasks", [] {
        std::vector<std::string> out;
        for (TaskId t : kAllTasks) out.emplace_back(to_string(t));
        return out;
    });
    m.def("exit_layer", [](const std::string& task) { return ExitTable{}.exit_layer_for(task_from_string(task)); });

    m.def("snr_to_sigma2", &channel::snr_to_sigma2, py::arg("snr_db"));
    m.def(
        "awgn",
        [](const channel::ComplexVector& x, double snr_db, std::uint64_t seed) {
            channel::ChannelConfig cfg;
            cfg.snr_db = snr_db;
            channel::Rng rng(seed);
            return channel::transmit(x, cfg, rng).y;
        },
        py::arg("x"), py::arg("snr_db"), py::arg("seed") = 0);

    m.def("similarity", &adaptation::similarity, py::arg("e1"), py::arg("e2"));
    m.def(
        "adaptation_loss",
        [](const Matrix& pa, const Matrix& sa, const Matrix& pb, const Matrix& sb, bool normalized) {
            return adaptation::adaptation_loss({pa, sa}, {pb, sb}, normalized);
        },
        py::arg("private_a"), py::arg("shared_a"), py::arg("private_b"), py::arg("shared_b"),
        py::arg("normalized") = false);

    m.def("psnr_from_mse", &objectives::psnr_from_mse, py::arg("mse"), py::arg("max_val") = 1.0,
          py::arg("cap_db") = objectives::kPsnrCapDb);
    m.def(
        "bleu", [](const std::vector<int>& ref, const std::vector<int>& hyp) { return objectives::bleu(ref, hyp); },
        py::arg("reference"), py::arg("hypothesis"));
    m.def(
        "recall_at_1",
        [](const Matrix& e, const std::vector<int>& labels) { return objectives::recall_at_1(e, labels); },
        py::arg("embeddings"), py::arg("labels"));

    m.def(
        "config_json",
        [](const std::string& path, const std::vector<std::string>& overrides) {
            return harness::config_json(harness::load_config(path, overrides));
        },
        py::arg("path"), py::arg("overrides") = std::vector<std::string>{});
    m.def(
        "config_hash",
        [](const std::string& path, const std::vector<std::string>& overrides) {
            return harness::config_hash(harness::load_config(path, overrides));
        },
        py::arg("path"), py::arg("overrides") = std::vector<std::string>{});

    m.def(
        "train",
        [](const std::string& config, const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed,
           std::optional<std::string> out, std::optional<std::string> task, bool force, bool quiet) {
            harness::CommandOptions o = make_options(overrides, seed, out, force, quiet);
            if (task) o.task = task_from_string(*task);
            py::gil_scoped_release release;
            const harness::RunManifest r = harness::cmd_train(std::filesystem::path(config), o);
            return std::map<std::string, std::string>{
                {"run_id", r.run_id}, {"config_hash", r.config_hash}, {"checkpoint", r.artifacts.at("checkpoint")}};
        },
        py::arg("config"), py::arg("overrides") = std::vector<std::string>{}, py::arg("seed") = py::none(),
        py::arg("out") = py::none(), py::arg("task") = py::none(), py::arg("force") = false, py::arg("quiet") = true);

    m.def(
        "sweep",
        [](const std::string& checkpoint, double snr_min, double snr_max, double snr_step, std::optional<std::string> out,
           bool noiseless, bool conventional, bool force) {
            harness::CommandOptions o = make_options({}, std::nullopt, out, force, true);
            o.noiseless = noiseless;
            o.conventional = conventional;
            std::vector<harness::ResultRow> rows;
            {
                py::gil_scoped_release release;
                rows = harness::cmd_sweep(checkpoint, {}, snr_min, snr_max, snr_step, o);
            }
            py::list result;
            for (const auto& r : rows) result.append(row_dict(r));
            return result;
        },
        py::arg("checkpoint"), py::arg("snr_min") = -6.0, py::arg("snr_max") = 18.0, py::arg("snr_step") = 3.0,
        py::arg("out") = py::none(), py::arg("noiseless") = false, py::arg("conventional") = false,
        py::arg("force") = false);

    m.def(
        "read_results",
        [](const std::string& csv) {
            py::list result;
            for (const auto& r : harness::read_results_csv(csv)) result.append(row_dict(r));
            return result;
        },
        py::arg("csv"));
}
