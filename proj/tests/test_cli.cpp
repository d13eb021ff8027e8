#include "doctest.h"

#include "fixtures.hpp"
#include "tscseg/cli.hpp"
#include "tscseg/eval.hpp"
#include "tscseg/io.hpp"

#include <algorithm>
#include <sstream>
#include <unistd.h>

using namespace tscseg;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args, const std::string& input = "") {
    std::istringstream in(input);
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(args, in, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

struct Workspace {
    fs::path root;
    fs::path data;
    fs::path config;
    fs::path model;

    Workspace() {
        root = fs::temp_directory_path() / ("tscseg_test_cli_" + std::to_string(::getpid()));
        fs::remove_all(root);
        data = root / "data";
        config = root / "small.json";
        model = root / "model.json";
        write_dataset(generate_dataset(testing::small_sim_config(0)), data);
        atomic_write(config, to_json(testing::small_train_config(0)).dump(2));
        const auto r = cli({"train", "--data", data.string(), "--config", config.string(), "--out", model.string()});
        REQUIRE_MESSAGE(r.code == 0, r.err);
    }
    ~Workspace() { fs::remove_all(root); }
};

Workspace& workspace() {
    static Workspace w;
    return w;
}

}  // namespace

TEST_CASE("generate writes a deterministic dataset") {
    const auto dir = fs::temp_directory_path() / ("tscseg_test_gen_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    const auto a = cli({"generate", "--seed", "5", "--out", (dir / "a").string()});
    REQUIRE_MESSAGE(a.code == 0, a.err);
    const auto b = cli({"generate", "--seed", "5", "--out", (dir / "b").string()});
    REQUIRE(b.code == 0);
    std::size_t csv = 0;
    for (const auto& e : fs::directory_iterator(dir / "a")) {
        const auto name = e.path().filename().string();
        if (name.ends_with(".csv") && name.find("_labels") == std::string::npos) ++csv;
        CHECK(read_file(e.path()) == read_file(dir / "b" / name));
    }
    CHECK(csv == 14);
    const auto manifest = nlohmann::json::parse(read_file(dir / "a" / "manifest.json"));
    CHECK(manifest.at("split").at("train").size() == 9);
    CHECK(manifest.at("split").at("test").size() == 5);
    CHECK(manifest.at("visual_dim") == 512);
    fs::remove_all(dir);
}

TEST_CASE("usage and validation errors exit with 1") {
    const auto dir = fs::temp_directory_path() / ("tscseg_test_bad_" + std::to_string(::getpid()));
    CHECK(cli({"generate", "--demos", "0", "--out", dir.string()}).code == kExitValidation);
    CHECK_FALSE(fs::exists(dir));
    CHECK(cli({"generate", "--demos", "4", "--split", "1:1", "--out", dir.string()}).code == kExitValidation);
    CHECK(cli({"generate"}).code == kExitValidation);
    CHECK(cli({"frobnicate"}).code == kExitValidation);
    CHECK(cli({}).code == kExitValidation);
    CHECK(cli({"--help"}).code == kExitOk);

    const auto missing = cli({"train", "--data", (dir / "nowhere").string(), "--out", (dir / "m.json").string()});
    CHECK(missing.code == kExitValidation);
    CHECK(missing.err.find("manifest.json") != std::string::npos);
    CHECK(missing.err.find("FileNotFound") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "m.json"));
}

TEST_CASE("exit code mapping") {
    CHECK(exit_code_for(ErrorCode::FileNotFound) == kExitValidation);
    CHECK(exit_code_for(ErrorCode::MissingDirective) == kExitValidation);
    CHECK(exit_code_for(ErrorCode::VersionMismatch) == kExitValidation);
    CHECK(exit_code_for(ErrorCode::AllPruned) == kExitRuntime);
    CHECK(exit_code_for(ErrorCode::Io) == kExitRuntime);
}

TEST_CASE("train is deterministic and reports its stages") {
    auto& w = workspace();
    const auto again = w.root / "again.json";
    const auto r = cli({"train", "--data", w.data.string(), "--config", w.config.string(), "--out", again.string(),
                        "--report", (w.root / "report.json").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(read_file(again) == read_file(w.model));
    CHECK(r.out.find("visual silhouette") != std::string::npos);
    CHECK(r.out.find("labels: T1 T2 T3 T4 T5 T6 T7 T8") != std::string::npos);
    CHECK(r.out.find("8 labeled transitions") != std::string::npos);
    CHECK(nlohmann::json::parse(read_file(w.root / "report.json")).contains("diagnostics"));

    const auto other = cli({"train", "--data", w.data.string(), "--config", w.config.string(), "--seed", "1", "--out",
                            (w.root / "seed1.json").string()});
    REQUIRE(other.code == 0);
    CHECK(read_file(w.root / "seed1.json") != read_file(w.model));

    atomic_write(w.root / "bad.json", R"({"tsc": {"min_demo_fraction": 3}})");
    const auto bad = cli({"train", "--data", w.data.string(), "--config", (w.root / "bad.json").string(), "--out",
                          (w.root / "bad_model.json").string()});
    CHECK(bad.code == kExitValidation);
    CHECK_FALSE(fs::exists(w.root / "bad_model.json"));
}

TEST_CASE("segment") {
    auto& w = workspace();
    const auto r = cli({"segment", "--model", w.model.string(), "--data", w.data.string(), "--id", "demo_012"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.rfind("t,segment_label\n0,S1\n", 0) == 0);
    CHECK(r.err.find("frame accuracy") != std::string::npos);
    const auto out = w.root / "seg.csv";
    const auto f = cli({"segment", "--model", w.model.string(), "--demo", (w.data / "demo_012.csv").string(), "--out",
                        out.string()});
    REQUIRE(f.code == 0);
    CHECK(read_file(out) == r.out);
}

TEST_CASE("eval and bench") {
    auto& w = workspace();
    const auto report = w.root / "eval.json";
    const auto r = cli({"eval", "--model", w.model.string(), "--data", w.data.string(), "--split", "train", "--out",
                        report.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("mean ") != std::string::npos);
    CHECK(r.out.find("sd ") != std::string::npos);
    CHECK(r.err.empty());
    const auto j = nlohmann::json::parse(read_file(report));
    CHECK(j.at("frame_accuracy").at("mean").get<double>() >= 0.85);

    CHECK(cli({"eval", "--model", w.model.string(), "--data", w.data.string(), "--min-accuracy", "1.01"}).code ==
          kExitThreshold);
    CHECK(cli({"eval", "--model", w.model.string(), "--data", w.data.string(), "--split", "nope"}).code ==
          kExitValidation);

    const auto table = w.root / "bench.json";
    const auto b = cli({"bench", "--model", w.model.string(), "--data", w.data.string(), "--reps", "3", "--out",
                        table.string()});
    REQUIRE_MESSAGE(b.code == 0, b.err);
    const auto t = latency_table_from_json(nlohmann::json::parse(read_file(table)));
    const auto test = load_dataset(w.data).test();
    std::size_t frames = 0;
    for (const auto& d : test) frames += d.length();
    CHECK(t.steps == 3 * frames);
    CHECK(b.out.find("total") != std::string::npos);
    CHECK(cli({"bench", "--model", w.model.string(), "--data", w.data.string(), "--max-total-ms", "0"}).code ==
          kExitThreshold);
}

TEST_CASE("eval warns when the dataset does not match the model") {
    auto& w = workspace();
    const auto other = w.root / "other";
    write_dataset(generate_dataset(testing::small_sim_config(9)), other);
    const auto r = cli({"eval", "--model", w.model.string(), "--data", other.string()});
    CHECK(r.code == kExitOk);
    CHECK(r.err.find("fingerprint") != std::string::npos);
}

TEST_CASE("stream") {
    auto& w = workspace();
    SUBCASE("from a dataset with the task directives") {
        const auto r = cli({"stream", "--model", w.model.string(), "--data", w.data.string(), "--id", "demo_010",
                            "--directives", (w.data / "directives.json").string()});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        std::istringstream lines(r.out);
        std::string line;
        std::size_t n = 0, events = 0, directives = 0;
        std::vector<std::string> labels;
        while (std::getline(lines, line)) {
            const auto j = nlohmann::json::parse(line);
            CHECK(j.at("t") == n);
            for (const char* key : {"segment", "event", "out_of_order", "candidate", "latency_us", "directive"})
                CHECK(j.contains(key));
            if (!j.at("event").is_null()) {
                ++events;
                labels.push_back(j.at("event"));
                if (!j.at("directive").is_null()) ++directives;
            }
            ++n;
        }
        const auto demo = load_dataset(w.data).subset({"demo_010"}).front();
        CHECK(n == demo.length());
        CHECK(events >= 7);
        CHECK(directives == events);
        CHECK(std::is_sorted(labels.begin(), labels.end()));
    }
    SUBCASE("from JSON lines on stdin") {
        const auto demo = load_dataset(w.data).subset({"demo_010"}).front();
        std::string input;
        for (std::size_t t = 0; t < 40; ++t) {
            const auto k = demo.states[t].kinematic.flatten();
            nlohmann::json rec{{"kinematic", std::vector<double>(k.data(), k.data() + k.size())},
                               {"visual", std::vector<double>(demo.states[t].visual.data(),
                                                              demo.states[t].visual.data() + demo.states[t].visual.size())}};
            input += rec.dump() + "\n";
        }
        const auto r = cli({"stream", "--model", w.model.string(), "--demo", "-"}, input);
        REQUIRE_MESSAGE(r.code == 0, r.err);
        CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 40);

        const auto bad = cli({"stream", "--model", w.model.string(), "--demo", "-"}, "{\"kinematic\": [1, 2]}\n");
        CHECK(bad.code == kExitValidation);
    }
    SUBCASE("a directive map missing a label") {
        auto dirs = nlohmann::json::parse(read_file(w.data / "directives.json"));
        dirs.erase("T3");
        atomic_write(w.root / "partial.json", dirs.dump());
        const auto out = w.root / "stream.jsonl";
        const auto r = cli({"stream", "--model", w.model.string(), "--data", w.data.string(), "--id", "demo_010",
                            "--directives", (w.root / "partial.json").string(), "--out", out.string()});
        CHECK(r.code == kExitValidation);
        CHECK(r.err.find("MissingDirective") != std::string::npos);
        CHECK(r.err.find("T3") != std::string::npos);
        CHECK_FALSE(fs::exists(out));
    }
}

TEST_CASE("a model from a different format version is rejected") {
    auto& w = workspace();
    auto j = nlohmann::json::parse(read_file(w.model));
    j["format_version"] = 2;
    atomic_write(w.root / "v2.json", j.dump());
    const auto r = cli({"segment", "--model", (w.root / "v2.json").string(), "--data", w.data.string(), "--id", "demo_000"});
    CHECK(r.code == kExitValidation);
    CHECK(r.err.find("VersionMismatch") != std::string::npos);
}
