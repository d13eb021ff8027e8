#include "doctest.h"

#include "fixtures.hpp"
#include "tscseg/error.hpp"
#include "tscseg/io.hpp"

#include <cstdlib>
#include <random>

using namespace tscseg;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("tscseg_test_io_" + std::to_string(::getpid()) + "_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("demonstration CSV round trip is exact") {
    const auto sd = generate_demo(testing::small_sim_config(4), 2);
    const std::string text = format_demo_csv(sd.demo);
    CHECK(text.rfind(demo_csv_header(64), 0) == 0);
    CHECK(demo_csv_header(2) == "t,px,py,pz,vx,vy,vz,wx,wy,wz,qw,qx,qy,qz,g,f000,f001");
    const auto back = parse_demo_csv(text, sd.demo.id, 30.0, 64);
    REQUIRE(back.length() == sd.demo.length());
    for (std::size_t t = 0; t < back.length(); ++t) {
        CHECK(back.states[t].time_index == t);
        CHECK(back.states[t].kinematic.flatten() == sd.demo.states[t].kinematic.flatten());
        CHECK(back.states[t].visual == sd.demo.states[t].visual);
    }
    CHECK(format_demo_csv(back) == text);
}

TEST_CASE("malformed demonstration CSV reports the line") {
    const auto sd = generate_demo(testing::small_sim_config(4), 0);
    std::string text = format_demo_csv(sd.demo);
    SUBCASE("bad number") {
        const auto pos = text.find('\n', text.find('\n') + 1) + 1;  // start of line 3
        text.insert(text.find(',', pos) + 1, "x");
        try {
            parse_demo_csv(text, "d", 30.0, 0, "demo.csv");
            FAIL("expected Format");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::Format);
            CHECK(std::string(e.what()).find("demo.csv:3") != std::string::npos);
        }
    }
    SUBCASE("short row") {
        text += "999,1,2\n";
        CHECK(code_of([&] { parse_demo_csv(text, "d", 30.0); }) == ErrorCode::Format);
    }
    SUBCASE("wrong visual width") {
        CHECK(code_of([&] { parse_demo_csv(text, "d", 30.0, 512); }) == ErrorCode::DimensionMismatch);
    }
    SUBCASE("bad header") {
        text.replace(0, 1, "u");
        CHECK(code_of([&] { parse_demo_csv(text, "d", 30.0); }) == ErrorCode::Format);
    }
    SUBCASE("empty") {
        CHECK(code_of([&] { parse_demo_csv("", "d", 30.0); }) == ErrorCode::Format);
    }
    SUBCASE("non-unit quaternions are normalized on ingest") {
        Demonstration d = sd.demo;
        d.states[0].kinematic.tool_orientation *= 3.0;
        const auto back = parse_demo_csv(format_demo_csv(d), "d", 30.0);
        CHECK(back.states[0].kinematic.tool_orientation.norm() == doctest::Approx(1.0));
    }
}

TEST_CASE("annotation sidecars") {
    const auto sd = generate_demo(testing::small_sim_config(4), 0);
    const auto text = format_annotations_csv(sd.truth);
    CHECK(text.rfind("t,segment_label\n", 0) == 0);
    const auto back = parse_annotations_csv(text);
    CHECK(back.labels == sd.truth.labels);
    CHECK(back.transition_events == sd.truth.transition_events);
    CHECK(code_of([] { parse_annotations_csv("t,segment_label\n0,S1\n2,S1\n"); }) == ErrorCode::Format);
    CHECK(code_of([] { parse_annotations_csv("time,label\n0,S1\n"); }) == ErrorCode::Format);
}

TEST_CASE("manifest JSON round trip") {
    const auto ds = generate_dataset(testing::small_sim_config(6));
    const auto j = to_json(ds.manifest);
    for (const char* key : {"demos", "visual_dim", "sample_rate", "split", "seed", "segment_labels"})
        CHECK(j.contains(key));
    const auto back = manifest_from_json(j);
    CHECK(to_json(back) == j);
    CHECK(code_of([] { manifest_from_json(nlohmann::json::parse(R"({"demos": 3})")); }) == ErrorCode::Format);
}

TEST_CASE("dataset directory round trip") {
    const auto dir = scratch_dir("dataset");
    auto cfg = testing::small_sim_config(8);
    cfg.num_demos = 4;
    cfg.train_count = 3;
    const auto ds = generate_dataset(cfg);
    write_dataset(ds, dir);
    CHECK(fs::exists(dir / "manifest.json"));
    CHECK(fs::exists(dir / "directives.json"));
    const auto loaded = load_dataset(dir);
    REQUIRE(loaded.demos.size() == 4);
    CHECK(loaded.train().size() == 3);
    CHECK(loaded.test().size() == 1);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(loaded.demos[i].id == ds.demos[i].demo.id);
        REQUIRE(loaded.demos[i].annotations.has_value());
        CHECK(loaded.demos[i].annotations->labels == ds.demos[i].truth.labels);
        CHECK(dataset_fingerprint(std::span(&loaded.demos[i], 1)) == dataset_fingerprint(std::span(&ds.demos[i].demo, 1)));
    }

    SUBCASE("missing manifest names the path") {
        fs::remove(dir / "manifest.json");
        try {
            load_dataset(dir);
            FAIL("expected FileNotFound");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::FileNotFound);
            CHECK(std::string(e.what()).find("manifest.json") != std::string::npos);
        }
    }
    SUBCASE("label count must match the demo") {
        const auto labels = dir / (ds.demos[1].demo.id + "_labels.csv");
        auto text = read_file(labels);
        text.resize(text.rfind('\n', text.size() - 2) + 1);
        atomic_write(labels, text);
        CHECK(code_of([&] { load_dataset(dir); }) == ErrorCode::LengthMismatch);
    }
    fs::remove_all(dir);
}

TEST_CASE("base64") {
    CHECK(base64_encode("") == "");
    CHECK(base64_encode("f") == "Zg==");
    CHECK(base64_encode("fo") == "Zm8=");
    CHECK(base64_encode("foo") == "Zm9v");
    CHECK(base64_encode("foobar") == "Zm9vYmFy");
    std::mt19937_64 rng(1);
    for (int n = 0; n < 40; ++n) {
        std::string bytes(static_cast<std::size_t>(n), '\0');
        for (auto& c : bytes) c = static_cast<char>(rng() & 0xff);
        CHECK(base64_decode(base64_encode(bytes)) == bytes);
    }
    CHECK(code_of([] { base64_decode("abc"); }) == ErrorCode::Format);
    CHECK(code_of([] { base64_decode("ab!="); }) == ErrorCode::Format);
}

TEST_CASE("training configuration JSON") {
    SUBCASE("absent fields keep defaults") {
        const auto c = train_config_from_json(nlohmann::json::parse(R"({"tsc": {"min_demo_fraction": 0.5}})"));
        CHECK(c.tsc.min_demo_fraction == 0.5);
        CHECK(c.tsc.dynamics_window == TscConfig{}.dynamics_window);
        CHECK(c.autoencoder.latent_dim == AutoencoderConfig{}.latent_dim);
    }
    SUBCASE("shared gmm section then per-level overrides") {
        const auto c = train_config_from_json(nlohmann::json::parse(
            R"({"gmm": {"num_restarts": 2}, "tsc": {"kinematic_gmm": {"num_restarts": 7}}})"));
        CHECK(c.tsc.visual_gmm.num_restarts == 2);
        CHECK(c.tsc.kinematic_gmm.num_restarts == 7);
    }
    SUBCASE("unknown sections and bad values are rejected") {
        CHECK(code_of([] { train_config_from_json(nlohmann::json::parse(R"({"bogus": 1})")); }) == ErrorCode::Format);
        CHECK(code_of([] { train_config_from_json(nlohmann::json::parse(R"({"tsc": {"threshold_mode": "x"}})")); }) ==
              ErrorCode::Format);
        CHECK(code_of([] { train_config_from_json(nlohmann::json::parse(R"({"seed": "seven"})")); }) ==
              ErrorCode::Format);
    }
    SUBCASE("round trip") {
        auto c = testing::small_train_config(3);
        c.tsc.threshold_mode = ThresholdMode::Fixed;
        c.online.out_of_order_policy = OutOfOrderPolicy::EmitWithFlag;
        const auto j = to_json(c);
        CHECK(to_json(train_config_from_json(j)) == j);
    }
}

TEST_CASE("directive files") {
    const auto j = nlohmann::json::parse(R"({
        "T1": {"target_orientation": [0, 0.6, 0, 0.8], "gripper_command": "close"},
        "T2": null,
        "T3": "none"
    })");
    const auto m = directives_from_json(j);
    REQUIRE(m.size() == 3);
    REQUIRE(m.at("T1").has_value());
    CHECK(m.at("T1")->gripper == GripperCommand::Close);
    CHECK(m.at("T1")->target_orientation == Eigen::Vector4d(0, 0.6, 0, 0.8));
    CHECK_FALSE(m.at("T2").has_value());
    CHECK_FALSE(m.at("T3").has_value());
    CHECK(directives_from_json(to_json(m)).size() == 3);
    CHECK(code_of([] { directives_from_json(nlohmann::json::parse(R"({"T1": {"target_orientation": [1, 0]}})")); }) ==
          ErrorCode::Format);
    CHECK(code_of([] {
              directives_from_json(
                  nlohmann::json::parse(R"({"T1": {"target_orientation": [1, 0, 0, 0], "gripper_command": "grab"}})"));
          }) == ErrorCode::Format);
    CHECK(code_of([] {
              directives_from_json(
                  nlohmann::json::parse(R"({"T1": {"target_orientation": [2, 0, 0, 0], "gripper_command": "open"}})"));
          }) == ErrorCode::InvalidArgument);
    const auto task = task_directives();
    CHECK(directives_from_json(to_json(task)).size() == task.size());
}

TEST_CASE("model bundles") {
    const auto& m = testing::small_model();
    const auto dir = scratch_dir("bundle");
    const auto path = dir / "model.json";
    save_bundle(m.bundle, path);
    const auto first = read_file(path);

    SUBCASE("save, load, save is byte-identical") {
        const auto loaded = load_bundle(path);
        save_bundle(loaded, dir / "again.json");
        CHECK(read_file(dir / "again.json") == first);
        CHECK(loaded.hierarchy.labels() == m.bundle.hierarchy.labels());
        CHECK(loaded.dataset_fingerprint == m.bundle.dataset_fingerprint);
        const auto test = m.data.test();
        for (const auto& d : test)
            CHECK(segment_demonstration(loaded.hierarchy, d).labels == segment_demonstration(m.bundle.hierarchy, d).labels);
    }
    SUBCASE("version mismatch") {
        auto j = nlohmann::json::parse(first);
        j["format_version"] = 99;
        CHECK(code_of([&] { deserialize_bundle(j.dump()); }) == ErrorCode::VersionMismatch);
    }
    SUBCASE("corrupt files") {
        CHECK(code_of([] { deserialize_bundle("{not json"); }) == ErrorCode::Format);
        auto j = nlohmann::json::parse(first);
        j["hierarchy"].erase("visual_model");
        CHECK(code_of([&] { deserialize_bundle(j.dump()); }) == ErrorCode::Format);
    }
    SUBCASE("missing file") {
        try {
            load_bundle(dir / "nope.json");
            FAIL("expected FileNotFound");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::FileNotFound);
            CHECK(std::string(e.what()).find("nope.json") != std::string::npos);
        }
    }
    SUBCASE("hierarchy report") {
        const auto r = hierarchy_report(m.bundle.hierarchy);
        CHECK(r.at("labels") == nlohmann::json(m.bundle.hierarchy.labels()));
        CHECK(r.at("diagnostics").contains("visual_curve"));
    }
    fs::remove_all(dir);
}

TEST_CASE("atomic writes leave no temporaries and replace whole files") {
    const auto dir = scratch_dir("atomic");
    const auto path = dir / "sub" / "file.txt";
    atomic_write(path, "first");
    atomic_write(path, "second");
    CHECK(read_file(path) == "second");
    std::size_t entries = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "sub")) ++entries;
    CHECK(entries == 1);
    fs::remove_all(dir);
}
