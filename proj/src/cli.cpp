#include "tscseg/cli.hpp"

#include "tscseg/eval.hpp"
#include "tscseg/io.hpp"
#include "tscseg/online.hpp"
#include "tscseg/pipeline.hpp"
#include "tscseg/simgen.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

namespace tscseg {

using nlohmann::json;

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument:
        case ErrorCode::EmptyDataset:
        case ErrorCode::NonFinite:
        case ErrorCode::DimensionMismatch:
        case ErrorCode::TooShort:
        case ErrorCode::MissingDirective:
        case ErrorCode::LengthMismatch:
        case ErrorCode::FileNotFound:
        case ErrorCode::Format:
        case ErrorCode::VersionMismatch:
            return kExitValidation;
        default:
            return kExitRuntime;
    }
}

namespace {

struct GenerateArgs {
    std::size_t demos = 14;
    std::uint64_t seed = 0;
    std::string out;
    double noise = 1.0;
    std::string split;
    double jitter_rate = 0.0;
};

struct TrainArgs {
    std::string data;
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string report;
    bool raw_visual = false;
};

struct ModelInput {
    std::string model;
    std::string data;
    std::string id;
    std::string demo;
    std::string out;
};

struct EvalArgs {
    std::string model;
    std::string data;
    std::string split = "test";
    std::size_t window = kDefaultMatchWindow;
    std::string out;
    std::optional<double> min_accuracy;
    std::size_t bench_reps = 0;
};

struct BenchArgs {
    std::string model;
    std::string data;
    std::string split = "test";
    std::size_t reps = 1;
    std::string out;
    std::optional<double> max_total_ms;
};

std::vector<Demonstration> pick_split(const Dataset& ds, const std::string& split) {
    if (split == "train") return ds.train();
    if (split == "test") return ds.test();
    if (split == "all") return ds.demos;
    fail(ErrorCode::InvalidArgument, "split must be train, test or all (got '" + split + "')");
}

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
    if (a.demos == 0) fail(ErrorCode::InvalidArgument, "--demos must be at least 1");
    SimConfig cfg;
    cfg.num_demos = a.demos;
    cfg.seed = a.seed;
    cfg.kinematic_noise = a.noise;
    cfg.spurious_jitter_rate = a.jitter_rate;
    if (a.split.empty()) {
        cfg.train_count = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(a.demos) * 9.0 / 14.0)));
    } else {
        const auto colon = a.split.find(':');
        std::size_t tr = 0, te = 0;
        try {
            if (colon == std::string::npos) throw std::invalid_argument("no colon");
            tr = std::stoul(a.split.substr(0, colon));
            te = std::stoul(a.split.substr(colon + 1));
        } catch (const std::exception&) {
            fail(ErrorCode::InvalidArgument, "--split must look like TRAIN:TEST (got '" + a.split + "')");
        }
        if (tr + te != a.demos)
            fail(ErrorCode::InvalidArgument, "--split " + a.split + " does not add up to --demos " + std::to_string(a.demos));
        cfg.train_count = tr;
    }
    cfg.validate();
    const auto ds = generate_dataset(cfg);
    write_dataset(ds, a.out);
    out << "wrote " << ds.demos.size() << " demonstrations to " << a.out << " (train " << ds.manifest.train.size()
        << ", test " << ds.manifest.test.size() << ")\n";
    return kExitOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
    TrainConfig cfg;
    if (!a.config.empty()) {
        try {
            cfg = train_config_from_json(json::parse(read_file(a.config)));
        } catch (const json::parse_error& ex) {
            fail(ErrorCode::Format, a.config + ": " + ex.what());
        }
    }
    if (a.seed) cfg.seed = *a.seed;
    if (a.raw_visual) cfg.use_encoder = false;
    const Dataset ds = load_dataset(a.data);
    const auto train = ds.manifest.train.empty() ? ds.demos : ds.train();
    out << "training on " << train.size() << " demonstrations\n";
    const ModelBundle bundle = train_model(train, cfg, [&](const std::string& line) { out << line << "\n"; });
    save_bundle(bundle, a.out);
    if (!a.report.empty()) atomic_write(a.report, hierarchy_report(bundle.hierarchy).dump(2) + "\n");
    out << "model written to " << a.out << " (" << bundle.hierarchy.labels().size() << " labeled transitions)\n";
    return kExitOk;
}

Demonstration input_demo(const ModelInput& a) {
    if (!a.demo.empty()) {
        const auto stem = fs::path(a.demo).stem().string();
        return read_demo_csv(a.demo, stem, 30.0);
    }
    if (a.data.empty() || a.id.empty()) fail(ErrorCode::InvalidArgument, "give --demo FILE or --data DIR with --id ID");
    const Dataset ds = load_dataset(a.data);
    return ds.subset({a.id}).front();
}

int cmd_segment(const ModelInput& a, std::ostream& out, std::ostream& err) {
    const ModelBundle bundle = load_bundle(a.model);
    const Demonstration demo = input_demo(a);
    const SegmentTrack track = segment_demonstration(bundle.hierarchy, demo, bundle.config.online);
    const std::string csv = format_annotations_csv(track);
    if (a.out.empty()) out << csv;
    else atomic_write(a.out, csv);
    std::ostream& log = a.out.empty() ? err : out;
    log << demo.id << ": " << track.transition_events.size() << " transitions";
    for (const auto& e : track.transition_events) log << " " << e.label << "@" << e.time_index;
    log << "\n";
    if (demo.annotations) log << "frame accuracy vs annotations: " << frame_accuracy(track, *demo.annotations) << "\n";
    return kExitOk;
}

json decision_json(const OnlineDecision& d) {
    json lat = json::object();
    for (std::size_t s = 0; s < kStageCount; ++s) lat[std::string(to_string(static_cast<Stage>(s)))] = d.stage_latencies_us[s];
    json j = {{"t", d.time_index},
              {"segment", d.segment_label},
              {"event", d.transition_event ? json(*d.transition_event) : json(nullptr)},
              {"out_of_order", d.out_of_order},
              {"candidate", d.candidate_label ? json(*d.candidate_label) : json(nullptr)},
              {"latency_us", lat}};
    if (d.directive) {
        const auto& q = d.directive->target_orientation;
        j["directive"] = {{"transition", d.directive->transition},
                          {"target_orientation", {q(0), q(1), q(2), q(3)}},
                          {"gripper_command", to_string(d.directive->gripper)}};
    } else {
        j["directive"] = nullptr;
    }
    return j;
}

int cmd_stream(const ModelInput& a, const std::string& directives_path, std::istream& in, std::ostream& out) {
    auto bundle = std::make_shared<ModelBundle>(load_bundle(a.model));
    DirectiveMap directives = directives_path.empty()
                                  ? empty_directives(bundle->hierarchy)
                                  : directives_from_json([&] {
                                        try {
                                            return json::parse(read_file(directives_path));
                                        } catch (const json::parse_error& ex) {
                                            fail(ErrorCode::Format, directives_path + ": " + ex.what());
                                        }
                                    }());
    std::shared_ptr<const TransitionHierarchy> h(bundle, &bundle->hierarchy);
    SegmenterSession session(h, std::move(directives), bundle->config.online);

    std::ostringstream buffer;
    std::ostream& sink = a.out.empty() ? out : buffer;
    auto emit = [&](const OnlineDecision& d) { sink << decision_json(d).dump() << "\n"; };

    if (a.demo == "-") {
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            ++n;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            json rec;
            try {
                rec = json::parse(line);
            } catch (const json::parse_error& ex) {
                fail(ErrorCode::Format, "stdin:" + std::to_string(n) + ": " + ex.what());
            }
            try {
                const auto kin = rec.at("kinematic").get<std::vector<double>>();
                const auto vis = rec.at("visual").get<std::vector<double>>();
                if (kin.size() != kKinematicDim)
                    fail(ErrorCode::DimensionMismatch, "stdin:" + std::to_string(n) + ": kinematic needs 14 values");
                KinematicFeatures k = KinematicFeatures::unflatten(Eigen::Map<const KinVec>(kin.data()));
                k.tool_orientation = canonical_quaternion(k.tool_orientation);
                emit(session.step(Eigen::Map<const Eigen::VectorXd>(vis.data(), static_cast<Eigen::Index>(vis.size())), k));
            } catch (const json::exception& ex) {
                fail(ErrorCode::Format, "stdin:" + std::to_string(n) + ": " + ex.what());
            }
        }
    } else {
        const Demonstration demo = input_demo(a);
        for (const auto& s : demo.states) emit(session.step(s.visual, s.kinematic));
    }
    if (a.out.empty()) out.flush();
    else atomic_write(a.out, buffer.str());
    return kExitOk;
}

void warn_on_fingerprint(const ModelBundle& bundle, const Dataset& ds, std::ostream& err) {
    std::vector<Demonstration> train;
    for (const auto& id : bundle.train_ids) {
        const auto it = std::find_if(ds.demos.begin(), ds.demos.end(), [&](const Demonstration& d) { return d.id == id; });
        if (it == ds.demos.end()) {
            err << "warning: dataset lacks training demo '" << id << "'; cannot confirm the model was trained on it\n";
            return;
        }
        train.push_back(*it);
    }
    if (dataset_fingerprint(train) != bundle.dataset_fingerprint)
        err << "warning: dataset fingerprint differs from the one recorded in the model\n";
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    const ModelBundle bundle = load_bundle(a.model);
    const Dataset ds = load_dataset(a.data);
    warn_on_fingerprint(bundle, ds, err);
    const auto demos = pick_split(ds, a.split);
    if (demos.empty()) fail(ErrorCode::EmptyDataset, "split '" + a.split + "' is empty");
    EvalReport report = evaluate(bundle.hierarchy, demos, bundle.config.online, a.window);
    if (a.bench_reps > 0) report.latency = run_benchmark(bundle.hierarchy, demos, a.bench_reps, bundle.config.online);
    char line[160];
    std::snprintf(line, sizeof line, "frame accuracy (%s, %zu demos): mean %.4f  sd %.4f\n", a.split.c_str(),
                  demos.size(), report.accuracy_mean, report.accuracy_std);
    out << line;
    std::snprintf(line, sizeof line, "events (W=%zu): precision %.4f  recall %.4f  matched %zu/%zu  order violations %zu\n",
                  a.window, report.precision, report.recall, report.matched, report.truth, report.order_violations);
    out << line;
    if (report.latency) out << report.latency->to_text();
    if (!a.out.empty()) atomic_write(a.out, to_json(report).dump(2) + "\n");
    if (a.min_accuracy && report.accuracy_mean < *a.min_accuracy) {
        err << "mean frame accuracy " << report.accuracy_mean << " is below " << *a.min_accuracy << "\n";
        return kExitThreshold;
    }
    return kExitOk;
}

int cmd_bench(const BenchArgs& a, std::ostream& out, std::ostream& err) {
    const ModelBundle bundle = load_bundle(a.model);
    const Dataset ds = load_dataset(a.data);
    const auto demos = pick_split(ds, a.split);
    const LatencyTable table = run_benchmark(bundle.hierarchy, demos, a.reps, bundle.config.online);
    out << table.to_text();
    if (!a.out.empty()) atomic_write(a.out, to_json(table).dump(2) + "\n");
    const double total_ms = table.row("total").mean_us / 1000.0;
    if (a.max_total_ms && total_ms > *a.max_total_ms) {
        err << "mean total latency " << total_ms << " ms exceeds " << *a.max_total_ms << " ms\n";
        return kExitThreshold;
    }
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hierarchical transition-state clustering for online task segmentation", "tscseg"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "Write a synthetic dataset");
    generate->add_option("--demos", gen.demos, "Number of demonstrations")->capture_default_str();
    generate->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
    generate->add_option("--out", gen.out, "Output directory")->required();
    generate->add_option("--noise", gen.noise, "Kinematic noise multiplier")->capture_default_str();
    generate->add_option("--split", gen.split, "TRAIN:TEST demo counts");
    generate->add_option("--jitter-rate", gen.jitter_rate, "Injected spurious jitters per demo")->capture_default_str();

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Fit the autoencoder and the transition hierarchy");
    train->add_option("--data", tr.data, "Dataset directory")->required();
    train->add_option("--config", tr.config, "JSON training config");
    train->add_option("--out", tr.out, "Model file")->required();
    train->add_option("--seed", tr.seed, "Seed (overrides the config)");
    train->add_option("--report", tr.report, "Write hierarchy diagnostics as JSON");
    train->add_flag("--raw-visual", tr.raw_visual, "Cluster raw visual features (no autoencoder)");

    ModelInput seg;
    auto* segment = app.add_subcommand("segment", "Segment one demonstration offline");
    segment->add_option("--model", seg.model, "Model file")->required();
    segment->add_option("--demo", seg.demo, "Demonstration CSV");
    segment->add_option("--data", seg.data, "Dataset directory");
    segment->add_option("--id", seg.id, "Demo id within --data");
    segment->add_option("--out", seg.out, "Write t,segment_label CSV here");

    ModelInput st;
    std::string directives_path;
    auto* stream = app.add_subcommand("stream", "Run the online segmenter frame by frame");
    stream->add_option("--model", st.model, "Model file")->required();
    stream->add_option("--demo", st.demo, "Demonstration CSV, or - for JSON lines on stdin");
    stream->add_option("--data", st.data, "Dataset directory");
    stream->add_option("--id", st.id, "Demo id within --data");
    stream->add_option("--directives", directives_path, "JSON directive map");
    stream->add_option("--out", st.out, "Write decision records here");

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "Score segmentation against annotations");
    eval->add_option("--model", ev.model, "Model file")->required();
    eval->add_option("--data", ev.data, "Dataset directory")->required();
    eval->add_option("--split", ev.split, "train, test or all")->capture_default_str();
    eval->add_option("--window", ev.window, "Event matching window in frames")->capture_default_str();
    eval->add_option("--out", ev.out, "Write the report as JSON");
    eval->add_option("--min-accuracy", ev.min_accuracy, "Exit 3 when mean frame accuracy is lower");
    eval->add_option("--bench-reps", ev.bench_reps, "Also time this many streaming passes")->capture_default_str();

    BenchArgs be;
    auto* bench = app.add_subcommand("bench", "Measure per-stage streaming latency");
    bench->add_option("--model", be.model, "Model file")->required();
    bench->add_option("--data", be.data, "Dataset directory")->required();
    bench->add_option("--split", be.split, "train, test or all")->capture_default_str();
    bench->add_option("--reps", be.reps, "Passes over the data")->capture_default_str()->check(CLI::PositiveNumber);
    bench->add_option("--out", be.out, "Write the table as JSON");
    bench->add_option("--max-total-ms", be.max_total_ms, "Exit 3 when the mean total exceeds this");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (generate->parsed()) return cmd_generate(gen, out);
        if (train->parsed()) return cmd_train(tr, out);
        if (segment->parsed()) return cmd_segment(seg, out, err);
        if (stream->parsed()) return cmd_stream(st, directives_path, in, out);
        if (eval->parsed()) return cmd_eval(ev, out, err);
        if (bench->parsed()) return cmd_bench(be, out, err);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitValidation;
}

}  // namespace tscseg
