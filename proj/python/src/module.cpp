#include "tscseg/cli.hpp"
#include "tscseg/eval.hpp"
#include "tscseg/gmm.hpp"
#include "tscseg/io.hpp"
#include "tscseg/pipeline.hpp"
#include "tscseg/simgen.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace tscseg;

namespace {

struct Model {
    std::shared_ptr<const TransitionHierarchy> hierarchy;
    ModelBundle bundle;
};

std::shared_ptr<Model> wrap(ModelBundle b) {
    auto m = std::make_shared<Model>();
    m->hierarchy = std::make_shared<const TransitionHierarchy>(b.hierarchy);
    m->bundle = std::move(b);
    return m;
}

py::dict decision_dict(const OnlineDecision& d) {
    py::dict out;
    out["t"] = d.time_index;
    out["segment"] = d.segment_label;
    out["event"] = d.transition_event ? py::object(py::str(*d.transition_event)) : py::none();
    out["out_of_order"] = d.out_of_order;
    out["candidate"] = d.candidate_label ? py::object(py::str(*d.candidate_label)) : py::none();
    out["directive"] = d.directive ? py::object(py::str(directive_record(*d.directive))) : py::none();
    double total = 0.0;
    for (double v : d.stage_latencies_us) total += v;
    out["latency_us"] = total;
    return out;
}

py::dict gmm_dict(const GmmModel& m) {
    py::dict out;
    out["weights"] = m.weights();
    out["means"] = m.means();
    out["covariances"] = m.covariances();
    out["log_likelihood"] = m.fit_log_likelihood;
    out["ll_history"] = m.ll_history;
    return out;
}

GmmModel gmm_from_dict(const py::dict& d) {
    return GmmModel(d["weights"].cast<Eigen::VectorXd>(), d["means"].cast<Eigen::MatrixXd>(),
                    d["covariances"].cast<std::vector<Eigen::MatrixXd>>());
}

GmmFitConfig gmm_config(std::uint64_t seed, std::size_t restarts, double regularization) {
    GmmFitConfig cfg;
    cfg.seed = seed;
    cfg.num_restarts = restarts;
    cfg.covariance_regularization = regularization;
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Hierarchical transition state clustering";

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args, const std::string& stdin_text) {
            std::istringstream in(stdin_text);
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = run_cli(args, in, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), py::arg("stdin") = "", "Runs a tscseg subcommand in process; returns (code, stdout, stderr).");

    m.def(
        "generate_dataset",
        [](const fs::path& out, std::uint64_t seed, std::size_t num_demos, std::size_t train_count,
           double kinematic_noise, std::size_t raw_dim, std::size_t latent_dim, double jitter_rate) {
            SimConfig cfg;
            cfg.seed = seed;
            cfg.num_demos = num_demos;
            cfg.train_count = train_count;
            cfg.kinematic_noise = kinematic_noise;
            cfg.raw_dim = raw_dim;
            cfg.latent_dim = latent_dim;
            cfg.spurious_jitter_rate = jitter_rate;
            write_dataset(generate_dataset(cfg), out);
        },
        py::arg("out"), py::arg("seed") = 0, py::arg("num_demos") = 14, py::arg("train_count") = 9,
        py::arg("kinematic_noise") = 1.0, py::arg("raw_dim") = 512, py::arg("latent_dim") = 128,
        py::arg("jitter_rate") = 0.0);

    m.def(
        "gmm_fit",
        [](const Eigen::MatrixXd& data, std::size_t k, std::uint64_t seed, std::size_t restarts, double reg) {
            return gmm_dict(gmm_fit(data, k, gmm_config(seed, restarts, reg)));
        },
        py::arg("data"), py::arg("k"), py::arg("seed") = 0, py::arg("restarts") = 5, py::arg("regularization") = 1e-6);

    m.def(
        "gmm_posterior",
        [](const py::dict& model, const Eigen::VectorXd& x) { return Eigen::VectorXd(gmm_posterior(gmm_from_dict(model), x)); },
        py::arg("model"), py::arg("x"));

    m.def(
        "select_k",
        [](const Eigen::MatrixXd& data, std::size_t k_min, std::size_t k_max, std::uint64_t seed) {
            const auto sel = select_k(data, k_min, k_max, gmm_config(seed, 5, 1e-6));
            py::dict out = gmm_dict(sel.model);
            out["k"] = sel.k;
            out["score"] = sel.score;
            out["curve"] = sel.curve;
            return out;
        },
        py::arg("data"), py::arg("k_min"), py::arg("k_max"), py::arg("seed") = 0);

    m.def(
        "silhouette_score",
        [](const Eigen::MatrixXd& data, const std::vector<std::size_t>& labels) { return silhouette_score(data, labels); },
        py::arg("data"), py::arg("labels"));

    m.def(
        "frame_accuracy",
        [](const std::vector<std::string>& pred, const std::vector<std::string>& truth) {
            return frame_accuracy(SegmentTrack::from_labels(pred), SegmentTrack::from_labels(truth));
        },
        py::arg("pred"), py::arg("truth"));

    py::class_<Model, std::shared_ptr<Model>>(m, "Model")
        .def_static("load", [](const fs::path& p) { return wrap(load_bundle(p)); }, py::arg("path"))
        .def("save", [](const Model& self, const fs::path& p) { save_bundle(self.bundle, p); }, py::arg("path"))
        .def_property_readonly("labels", [](const Model& self) { return self.hierarchy->labels(); })
        .def_property_readonly("fingerprint", [](const Model& self) { return self.bundle.dataset_fingerprint; })
        .def_property_readonly("train_ids", [](const Model& self) { return self.bundle.train_ids; })
        .def(
            "segment",
            [](const Model& self, const fs::path& data_dir, const std::string& id) {
                const auto demos = load_dataset(data_dir).subset({id});
                return segment_demonstration(*self.hierarchy, demos.front()).labels;
            },
            py::arg("data_dir"), py::arg("id"))
        .def(
            "evaluate",
            [](const Model& self, const fs::path& data_dir, const std::string& split) {
                const auto ds = load_dataset(data_dir);
                const auto demos = split == "train" ? ds.train() : split == "test" ? ds.test() : ds.demos;
                return to_json(evaluate(*self.hierarchy, demos)).dump();
            },
            py::arg("data_dir"), py::arg("split") = "test", "Evaluation report as a JSON string.");

    m.def(
        "train",
        [](const fs::path& data_dir, std::uint64_t seed, const std::string& config_json) {
            const auto ds = load_dataset(data_dir);
            auto cfg = config_json.empty() ? TrainConfig{} : train_config_from_json(nlohmann::json::parse(config_json));
            cfg.seed = seed;
            const auto train = ds.train();
            py::gil_scoped_release release;
            auto bundle = train_model(train, cfg);
            return wrap(std::move(bundle));
        },
        py::arg("data_dir"), py::arg("seed") = 0, py::arg("config_json") = "");

    py::class_<SegmenterSession>(m, "Session")
        .def(py::init([](const Model& model) {
                 return stream_new(model.hierarchy, empty_directives(*model.hierarchy));
             }),
             py::arg("model"))
        .def(
            "step",
            [](SegmenterSession& s, const Eigen::VectorXd& visual, const Eigen::VectorXd& kinematic) {
                if (kinematic.size() != kKinematicDim)
                    fail(ErrorCode::DimensionMismatch, "kinematic vector must have " + std::to_string(kKinematicDim) + " entries");
                return decision_dict(s.step(visual, KinematicFeatures::unflatten(KinVec(kinematic))));
            },
            py::arg("visual"), py::arg("kinematic"))
        .def_property_readonly("segment", &SegmenterSession::segment_label)
        .def_property_readonly("steps", &SegmenterSession::steps)
        .def_property_readonly("events", [](const SegmenterSession& s) {
            std::vector<std::pair<std::size_t, std::string>> out;
            for (const auto& e : s.events()) out.emplace_back(e.time_index, e.label);
            return out;
        });
}
