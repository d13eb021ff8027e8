#include "tscseg/io.hpp"

#include "tscseg/error.hpp"
#include "tscseg/parallel.hpp"

#include <array>
#include <charconv>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

namespace tscseg {

using nlohmann::json;

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        if (!fs::exists(path)) fail(ErrorCode::FileNotFound, "file not found: " + path.string());
        fail(ErrorCode::Io, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) fail(ErrorCode::Io, "read failed: " + path.string());
    return ss.str();
}

void atomic_write(const fs::path& path, std::string_view content) {
    const fs::path parent = path.has_parent_path() ? path.parent_path() : fs::path(".");
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) fail(ErrorCode::Io, "cannot create directory " + parent.string() + ": " + ec.message());
    fs::path tmp = path;
    tmp += ".tmp-" + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::Io, "cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            fs::remove(tmp, ec);
            fail(ErrorCode::Io, "write failed: " + tmp.string());
        }
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        std::error_code ignored;
        fs::remove(tmp, ignored);
        fail(ErrorCode::Io, "cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

// ---------------------------------------------------------------- CSV

namespace {

void append_double(std::string& out, double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, r.ptr);
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        std::string_view f = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
        out.push_back(f);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
    std::size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++line_no;
        if (!line.empty()) fn(line, line_no);
        pos = end + 1;
    }
}

double parse_double(std::string_view s, const std::string& where) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        fail(ErrorCode::Format, where + ": not a number: '" + std::string(s) + "'");
    return v;
}

std::size_t parse_index(std::string_view s, const std::string& where) {
    std::size_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        fail(ErrorCode::Format, where + ": not a non-negative integer: '" + std::string(s) + "'");
    return v;
}

constexpr std::array<const char*, 15> kKinematicColumns{"t",  "px", "py", "pz", "vx", "vy", "vz", "wx",
                                                        "wy", "wz", "qw", "qx", "qy", "qz", "g"};

}  // namespace

std::string demo_csv_header(std::size_t visual_dim) {
    std::string h;
    for (std::size_t i = 0; i < kKinematicColumns.size(); ++i) {
        if (i) h += ',';
        h += kKinematicColumns[i];
    }
    char buf[32];
    for (std::size_t i = 0; i < visual_dim; ++i) {
        std::snprintf(buf, sizeof buf, ",f%03zu", i);
        h += buf;
    }
    return h;
}

std::string format_demo_csv(const Demonstration& demo) {
    std::string out = demo_csv_header(demo.visual_dim());
    out += '\n';
    out.reserve(demo.states.size() * (15 + demo.visual_dim()) * 22);
    for (const auto& s : demo.states) {
        out += std::to_string(s.time_index);
        const KinVec k = s.kinematic.flatten();
        for (Eigen::Index i = 0; i < k.size(); ++i) {
            out += ',';
            append_double(out, k(i));
        }
        for (Eigen::Index i = 0; i < s.visual.size(); ++i) {
            out += ',';
            append_double(out, s.visual(i));
        }
        out += '\n';
    }
    return out;
}

Demonstration parse_demo_csv(std::string_view text, const std::string& id, double sample_rate_hz,
                             std::size_t expected_visual_dim, const std::string& source) {
    Demonstration demo;
    demo.id = id;
    demo.sample_rate_hz = sample_rate_hz;
    std::size_t visual_dim = 0;
    bool header = true;
    for_each_line(text, [&](std::string_view line, std::size_t line_no) {
        const std::string where = source + ":" + std::to_string(line_no);
        const auto fields = split_fields(line);
        if (header) {
            header = false;
            if (fields.size() < kKinematicColumns.size())
                fail(ErrorCode::Format, where + ": header has " + std::to_string(fields.size()) + " columns");
            for (std::size_t i = 0; i < kKinematicColumns.size(); ++i)
                if (fields[i] != kKinematicColumns[i])
                    fail(ErrorCode::Format, where + ": expected column '" + kKinematicColumns[i] + "', found '" +
                                                std::string(fields[i]) + "'");
            visual_dim = fields.size() - kKinematicColumns.size();
            if (expected_visual_dim && visual_dim != expected_visual_dim)
                fail(ErrorCode::DimensionMismatch, where + ": " + std::to_string(visual_dim) +
                                                       " visual columns, manifest says " +
                                                       std::to_string(expected_visual_dim));
            return;
        }
        if (fields.size() != kKinematicColumns.size() + visual_dim)
            fail(ErrorCode::Format, where + ": " + std::to_string(fields.size()) + " fields, header has " +
                                        std::to_string(kKinematicColumns.size() + visual_dim));
        StateVector s;
        s.time_index = parse_index(fields[0], where);
        KinVec k;
        for (std::size_t i = 0; i < kKinematicDim; ++i) k(static_cast<Eigen::Index>(i)) = parse_double(fields[i + 1], where);
        s.kinematic = KinematicFeatures::unflatten(k);
        s.visual.resize(static_cast<Eigen::Index>(visual_dim));
        for (std::size_t i = 0; i < visual_dim; ++i)
            s.visual(static_cast<Eigen::Index>(i)) = parse_double(fields[kKinematicColumns.size() + i], where);
        demo.states.push_back(std::move(s));
    });
    if (header) fail(ErrorCode::Format, source + ": empty file");
    ingest(demo, expected_visual_dim);
    return demo;
}

Demonstration read_demo_csv(const fs::path& path, const std::string& id, double sample_rate_hz,
                            std::size_t expected_visual_dim) {
    return parse_demo_csv(read_file(path), id, sample_rate_hz, expected_visual_dim, path.string());
}

std::string format_annotations_csv(const SegmentTrack& track) {
    std::string out = "t,segment_label\n";
    for (std::size_t i = 0; i < track.labels.size(); ++i) out += std::to_string(i) + "," + track.labels[i] + "\n";
    return out;
}

SegmentTrack parse_annotations_csv(std::string_view text, const std::string& source) {
    std::vector<std::string> labels;
    bool header = true;
    for_each_line(text, [&](std::string_view line, std::size_t line_no) {
        const std::string where = source + ":" + std::to_string(line_no);
        const auto fields = split_fields(line);
        if (header) {
            header = false;
            if (fields.size() != 2 || fields[0] != "t" || fields[1] != "segment_label")
                fail(ErrorCode::Format, where + ": expected header 't,segment_label'");
            return;
        }
        if (fields.size() != 2 || fields[1].empty()) fail(ErrorCode::Format, where + ": expected 't,segment_label'");
        if (parse_index(fields[0], where) != labels.size())
            fail(ErrorCode::Format, where + ": frames must be numbered consecutively from 0");
        labels.emplace_back(fields[1]);
    });
    if (header) fail(ErrorCode::Format, source + ": empty file");
    return SegmentTrack::from_labels(std::move(labels));
}

// ---------------------------------------------------------------- manifest / dataset

json to_json(const DatasetManifest& m) {
    json demos = json::array();
    for (const auto& d : m.demos) demos.push_back({{"id", d.id}, {"file", d.file}, {"annotations", d.annotations}});
    json j = {{"demos", demos},
              {"visual_dim", m.visual_dim},
              {"sample_rate", m.sample_rate_hz},
              {"split", {{"train", m.train}, {"test", m.test}}},
              {"segment_labels", m.segment_labels}};
    j["seed"] = m.generator_seed ? json(*m.generator_seed) : json(nullptr);
    return j;
}

DatasetManifest manifest_from_json(const json& j) {
    try {
        DatasetManifest m;
        for (const auto& d : j.at("demos")) {
            DatasetManifest::Entry e;
            e.id = d.at("id").get<std::string>();
            e.file = d.at("file").get<std::string>();
            if (d.contains("annotations") && !d.at("annotations").is_null())
                e.annotations = d.at("annotations").get<std::string>();
            m.demos.push_back(std::move(e));
        }
        m.visual_dim = j.at("visual_dim").get<std::size_t>();
        m.sample_rate_hz = j.value("sample_rate", 30.0);
        if (j.contains("split")) {
            m.train = j.at("split").value("train", std::vector<std::string>{});
            m.test = j.at("split").value("test", std::vector<std::string>{});
        }
        if (j.contains("seed") && !j.at("seed").is_null()) m.generator_seed = j.at("seed").get<std::uint64_t>();
        m.segment_labels = j.value("segment_labels", std::vector<std::string>{});
        return m;
    } catch (const json::exception& ex) {
        fail(ErrorCode::Format, std::string("malformed manifest: ") + ex.what());
    }
}

std::vector<Demonstration> Dataset::subset(const std::vector<std::string>& ids) const {
    std::vector<Demonstration> out;
    for (const auto& id : ids) {
        const auto it = std::find_if(demos.begin(), demos.end(), [&](const Demonstration& d) { return d.id == id; });
        if (it == demos.end()) fail(ErrorCode::InvalidArgument, "split references unknown demo '" + id + "'");
        out.push_back(*it);
    }
    return out;
}

void write_dataset(const SimDataset& ds, const fs::path& dir) {
    const auto& m = ds.manifest;
    std::vector<std::string> blobs(ds.demos.size());
    parallel_for(ds.demos.size(), [&](std::size_t i) { blobs[i] = format_demo_csv(ds.demos[i].demo); });
    for (std::size_t i = 0; i < ds.demos.size(); ++i) {
        atomic_write(dir / m.demos[i].file, blobs[i]);
        atomic_write(dir / m.demos[i].annotations, format_annotations_csv(ds.demos[i].truth));
    }
    atomic_write(dir / "directives.json", to_json(task_directives()).dump(2) + "\n");
    atomic_write(dir / "manifest.json", to_json(m).dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    Dataset ds;
    try {
        ds.manifest = manifest_from_json(json::parse(read_file(manifest_path)));
    } catch (const json::parse_error& ex) {
        fail(ErrorCode::Format, manifest_path.string() + ": " + ex.what());
    }
    const auto& m = ds.manifest;
    if (m.demos.empty()) fail(ErrorCode::EmptyDataset, manifest_path.string() + " lists no demonstrations");
    std::set<std::string> ids;
    for (const auto& d : m.demos)
        if (!ids.insert(d.id).second) fail(ErrorCode::InvalidArgument, "duplicate demo id '" + d.id + "'");
    for (const auto* split : {&m.train, &m.test})
        for (const auto& id : *split)
            if (!ids.contains(id)) fail(ErrorCode::InvalidArgument, "split references unknown demo '" + id + "'");

    ds.demos.resize(m.demos.size());
    parallel_for(m.demos.size(), [&](std::size_t i) {
        const auto& e = m.demos[i];
        Demonstration d = read_demo_csv(dir / e.file, e.id, m.sample_rate_hz, m.visual_dim);
        if (!e.annotations.empty()) {
            const fs::path ap = dir / e.annotations;
            auto track = parse_annotations_csv(read_file(ap), ap.string());
            if (track.labels.size() != d.states.size())
                fail(ErrorCode::LengthMismatch, ap.string() + ": " + std::to_string(track.labels.size()) +
                                                    " labels for " + std::to_string(d.states.size()) + " frames");
            d.annotations = std::move(track);
            ingest(d, m.visual_dim);
        }
        ds.demos[i] = std::move(d);
    });
    return ds;
}

// ---------------------------------------------------------------- config

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& field) {
    if (j.contains(key) && !j.at(key).is_null()) field = j.at(key).get<T>();
}

void read_gmm(const json& j, GmmFitConfig& c) {
    read_opt(j, "max_iterations", c.max_iterations);
    read_opt(j, "ll_tolerance", c.ll_tolerance);
    read_opt(j, "covariance_regularization", c.covariance_regularization);
    read_opt(j, "num_restarts", c.num_restarts);
    read_opt(j, "seed", c.seed);
}

json gmm_json(const GmmFitConfig& c) {
    return {{"max_iterations", c.max_iterations},
            {"ll_tolerance", c.ll_tolerance},
            {"covariance_regularization", c.covariance_regularization},
            {"num_restarts", c.num_restarts},
            {"seed", c.seed}};
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
    try {
        if (!j.is_object()) fail(ErrorCode::Format, "config must be a JSON object");
        static const std::set<std::string> known{"autoencoder", "gmm",         "tsc",  "online", "ae_max_train_rows",
                                                 "ae_search_trials", "use_encoder", "seed"};
        for (const auto& [key, value] : j.items())
            if (!known.contains(key)) fail(ErrorCode::Format, "unknown config section '" + key + "'");
        TrainConfig c;
        if (j.contains("autoencoder")) {
            const auto& a = j.at("autoencoder");
            auto& ac = c.autoencoder;
            read_opt(a, "input_dim", ac.input_dim);
            read_opt(a, "latent_dim", ac.latent_dim);
            read_opt(a, "encoder_hidden", ac.encoder_hidden);
            read_opt(a, "decoder_hidden", ac.decoder_hidden);
            read_opt(a, "learning_rate", ac.learning_rate);
            read_opt(a, "rmsprop_decay", ac.rmsprop_decay);
            read_opt(a, "rmsprop_epsilon", ac.rmsprop_epsilon);
            read_opt(a, "batch_size", ac.batch_size);
            read_opt(a, "max_epochs", ac.max_epochs);
            read_opt(a, "early_stop_patience", ac.early_stop_patience);
            read_opt(a, "validation_fraction", ac.validation_fraction);
            read_opt(a, "seed", ac.seed);
        }
        if (j.contains("gmm")) {
            read_gmm(j.at("gmm"), c.tsc.visual_gmm);
            read_gmm(j.at("gmm"), c.tsc.kinematic_gmm);
        }
        if (j.contains("tsc")) {
            const auto& t = j.at("tsc");
            auto& tc = c.tsc;
            read_opt(t, "dynamics_window", tc.dynamics_window);
            if (t.contains("threshold_mode")) {
                const auto mode = t.at("threshold_mode").get<std::string>();
                if (mode == "auto") tc.threshold_mode = ThresholdMode::Auto;
                else if (mode == "fixed") tc.threshold_mode = ThresholdMode::Fixed;
                else fail(ErrorCode::Format, "threshold_mode must be 'auto' or 'fixed'");
            }
            read_opt(t, "threshold_sigmas", tc.threshold_sigmas);
            read_opt(t, "fixed_threshold", tc.fixed_threshold);
            read_opt(t, "residual_floor", tc.residual_floor);
            read_opt(t, "merge_window", tc.merge_window);
            read_opt(t, "min_demo_fraction", tc.min_demo_fraction);
            read_opt(t, "visual_k_min", tc.visual_k_min);
            read_opt(t, "visual_k_max", tc.visual_k_max);
            read_opt(t, "kinematic_k_min", tc.kinematic_k_min);
            read_opt(t, "kinematic_k_max", tc.kinematic_k_max);
            read_opt(t, "split_silhouette", tc.split_silhouette);
            read_opt(t, "relative_regularization", tc.relative_regularization);
            read_opt(t, "all_states", tc.all_states);
            read_opt(t, "all_states_stride", tc.all_states_stride);
            read_opt(t, "canonical_order", tc.canonical_order);
            read_opt(t, "seed", tc.seed);
            if (t.contains("visual_gmm")) read_gmm(t.at("visual_gmm"), tc.visual_gmm);
            if (t.contains("kinematic_gmm")) read_gmm(t.at("kinematic_gmm"), tc.kinematic_gmm);
        }
        if (j.contains("online")) {
            const auto& o = j.at("online");
            read_opt(o, "hysteresis", c.online.hysteresis);
            read_opt(o, "posterior_floor", c.online.posterior_floor);
            read_opt(o, "max_skip", c.online.max_skip);
            if (o.contains("out_of_order_policy")) {
                const auto p = o.at("out_of_order_policy").get<std::string>();
                if (p == "suppress") c.online.out_of_order_policy = OutOfOrderPolicy::Suppress;
                else if (p == "emit_with_flag") c.online.out_of_order_policy = OutOfOrderPolicy::EmitWithFlag;
                else fail(ErrorCode::Format, "out_of_order_policy must be 'suppress' or 'emit_with_flag'");
            }
        }
        read_opt(j, "ae_max_train_rows", c.ae_max_train_rows);
        read_opt(j, "ae_search_trials", c.ae_search_trials);
        read_opt(j, "use_encoder", c.use_encoder);
        read_opt(j, "seed", c.seed);
        return c;
    } catch (const json::exception& ex) {
        fail(ErrorCode::Format, std::string("malformed config: ") + ex.what());
    }
}

json to_json(const TrainConfig& c) {
    const auto& a = c.autoencoder;
    const auto& t = c.tsc;
    const auto& o = c.online;
    return {{"autoencoder",
             {{"input_dim", a.input_dim},
              {"latent_dim", a.latent_dim},
              {"encoder_hidden", a.encoder_hidden},
              {"decoder_hidden", a.decoder_hidden},
              {"learning_rate", a.learning_rate},
              {"rmsprop_decay", a.rmsprop_decay},
              {"rmsprop_epsilon", a.rmsprop_epsilon},
              {"batch_size", a.batch_size},
              {"max_epochs", a.max_epochs},
              {"early_stop_patience", a.early_stop_patience},
              {"validation_fraction", a.validation_fraction},
              {"seed", a.seed}}},
            {"tsc",
             {{"dynamics_window", t.dynamics_window},
              {"threshold_mode", t.threshold_mode == ThresholdMode::Auto ? "auto" : "fixed"},
              {"threshold_sigmas", t.threshold_sigmas},
              {"fixed_threshold", t.fixed_threshold},
              {"residual_floor", t.residual_floor},
              {"merge_window", t.merge_window},
              {"min_demo_fraction", t.min_demo_fraction},
              {"visual_k_min", t.visual_k_min},
              {"visual_k_max", t.visual_k_max},
              {"kinematic_k_min", t.kinematic_k_min},
              {"kinematic_k_max", t.kinematic_k_max},
              {"split_silhouette", t.split_silhouette},
              {"relative_regularization", t.relative_regularization},
              {"all_states", t.all_states},
              {"all_states_stride", t.all_states_stride},
              {"canonical_order", t.canonical_order},
              {"seed", t.seed},
              {"visual_gmm", gmm_json(t.visual_gmm)},
              {"kinematic_gmm", gmm_json(t.kinematic_gmm)}}},
            {"online",
             {{"hysteresis", o.hysteresis},
              {"posterior_floor", o.posterior_floor},
              {"max_skip", o.max_skip},
              {"out_of_order_policy",
               o.out_of_order_policy == OutOfOrderPolicy::Suppress ? "suppress" : "emit_with_flag"}}},
            {"ae_max_train_rows", c.ae_max_train_rows},
            {"ae_search_trials", c.ae_search_trials},
            {"use_encoder", c.use_encoder},
            {"seed", c.seed}};
}

DirectiveMap directives_from_json(const json& j) {
    if (!j.is_object()) fail(ErrorCode::Format, "directives must be a JSON object keyed by transition label");
    DirectiveMap m;
    try {
        for (const auto& [label, value] : j.items()) {
            if (value.is_null() || (value.is_string() && value.get<std::string>() == "none")) {
                m.emplace(label, std::nullopt);
                continue;
            }
            AssistanceDirective d;
            d.transition = label;
            const auto q = value.at("target_orientation").get<std::vector<double>>();
            if (q.size() != 4) fail(ErrorCode::Format, "directive " + label + ": target_orientation needs 4 values");
            d.target_orientation = Eigen::Vector4d(q[0], q[1], q[2], q[3]);
            d.gripper = parse_gripper_command(value.at("gripper_command").get<std::string>());
            d.validate();
            m.emplace(label, d);
        }
    } catch (const json::exception& ex) {
        fail(ErrorCode::Format, std::string("malformed directives: ") + ex.what());
    }
    return m;
}

json to_json(const DirectiveMap& m) {
    json j = json::object();
    for (const auto& [label, d] : m) {
        if (!d) {
            j[label] = nullptr;
            continue;
        }
        const auto& q = d->target_orientation;
        j[label] = {{"target_orientation", {q(0), q(1), q(2), q(3)}}, {"gripper_command", to_string(d->gripper)}};
    }
    return j;
}

// ---------------------------------------------------------------- base64

std::string base64_encode(std::string_view bytes) {
    static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (static_cast<unsigned char>(bytes[i]) << 16) |
                                (static_cast<unsigned char>(bytes[i + 1]) << 8) | static_cast<unsigned char>(bytes[i + 2]);
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    if (const std::size_t rest = bytes.size() - i; rest > 0) {
        std::uint32_t v = static_cast<unsigned char>(bytes[i]) << 16;
        if (rest == 2) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::string base64_decode(std::string_view text) {
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    if (text.size() % 4 != 0) fail(ErrorCode::Format, "base64 length is not a multiple of 4");
    std::string out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int v[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = text[i + static_cast<std::size_t>(k)];
            if (c == '=' && i + 4 == text.size() && k >= 2) {
                v[k] = 0;
                ++pad;
            } else if (pad > 0 || (v[k] = value(c)) < 0) {
                fail(ErrorCode::Format, "invalid base64 character");
            }
        }
        const std::uint32_t n = (static_cast<std::uint32_t>(v[0]) << 18) | (static_cast<std::uint32_t>(v[1]) << 12) |
                                (static_cast<std::uint32_t>(v[2]) << 6) | static_cast<std::uint32_t>(v[3]);
        out += static_cast<char>((n >> 16) & 0xff);
        if (pad < 2) out += static_cast<char>((n >> 8) & 0xff);
        if (pad < 1) out += static_cast<char>(n & 0xff);
    }
    return out;
}

// ---------------------------------------------------------------- bundle

namespace {

json encode_matrix(const Eigen::MatrixXd& m) {
    std::string bytes(static_cast<std::size_t>(m.size()) * 8, '\0');
    std::size_t pos = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            std::uint64_t bits;
            const double v = m(r, c);
            std::memcpy(&bits, &v, 8);
            for (int b = 0; b < 8; ++b) bytes[pos++] = static_cast<char>((bits >> (8 * b)) & 0xff);
        }
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", base64_encode(bytes)}};
}

Eigen::MatrixXd decode_matrix(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const std::string bytes = base64_decode(j.at("data").get<std::string>());
    if (rows < 0 || cols < 0 || bytes.size() != static_cast<std::size_t>(rows * cols) * 8)
        fail(ErrorCode::Format, "matrix blob size does not match its shape");
    Eigen::MatrixXd m(rows, cols);
    std::size_t pos = 0;
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * b);
            double v;
            std::memcpy(&v, &bits, 8);
            m(r, c) = v;
        }
    }
    return m;
}

json encode_vector(const std::vector<double>& v) {
    return encode_matrix(Eigen::Map<const Eigen::MatrixXd>(v.data(), static_cast<Eigen::Index>(v.size()), 1));
}

std::vector<double> decode_vector(const json& j) {
    const Eigen::MatrixXd m = decode_matrix(j);
    return {m.data(), m.data() + m.size()};
}

json encode_gmm(const GmmModel& g) {
    json covs = json::array();
    for (const auto& c : g.covariances()) covs.push_back(encode_matrix(c));
    return {{"weights", encode_matrix(g.weights())},
            {"means", encode_matrix(g.means())},
            {"covariances", covs},
            {"config", gmm_json(g.config())},
            {"fit_log_likelihood", encode_vector({g.fit_log_likelihood})},
            {"ll_history", encode_vector(g.ll_history)}};
}

GmmModel decode_gmm(const json& j) {
    GmmFitConfig cfg;
    read_gmm(j.at("config"), cfg);
    std::vector<Eigen::MatrixXd> covs;
    for (const auto& c : j.at("covariances")) covs.push_back(decode_matrix(c));
    GmmModel g(decode_matrix(j.at("weights")), decode_matrix(j.at("means")), std::move(covs), cfg);
    const auto ll = decode_vector(j.at("fit_log_likelihood"));
    if (ll.size() != 1) fail(ErrorCode::Format, "fit_log_likelihood must hold one value");
    g.fit_log_likelihood = ll.front();
    g.ll_history = decode_vector(j.at("ll_history"));
    return g;
}

json encode_layers(const std::vector<DenseLayer>& layers) {
    json out = json::array();
    for (const auto& l : layers)
        out.push_back({{"weight", encode_matrix(l.weight)}, {"bias", encode_matrix(l.bias)}, {"relu", l.relu}});
    return out;
}

std::vector<DenseLayer> decode_layers(const json& j) {
    std::vector<DenseLayer> out;
    for (const auto& l : j) {
        DenseLayer d;
        d.weight = decode_matrix(l.at("weight"));
        const Eigen::MatrixXd b = decode_matrix(l.at("bias"));
        if (b.cols() != 1) fail(ErrorCode::Format, "layer bias must be a column");
        d.bias = b.col(0);
        d.relu = l.at("relu").get<bool>();
        out.push_back(std::move(d));
    }
    return out;
}

json curve_json(const std::vector<std::pair<std::size_t, double>>& curve) {
    json out = json::array();
    for (const auto& [k, s] : curve) out.push_back({k, s});
    return out;
}

std::vector<std::pair<std::size_t, double>> curve_from_json(const json& j) {
    std::vector<std::pair<std::size_t, double>> out;
    for (const auto& p : j) out.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<double>());
    return out;
}

json diagnostics_json(const HierarchyDiagnostics& d) {
    json kin = json::object();
    for (const auto& [v, c] : d.kinematic_curves) kin[std::to_string(v)] = curve_json(c);
    return {{"visual_curve", curve_json(d.visual_curve)},
            {"visual_score", d.visual_score},
            {"weak_visual_structure", d.weak_visual_structure},
            {"kinematic_curves", kin},
            {"candidate_count", d.candidate_count},
            {"required_demos", d.required_demos},
            {"pruned_count", d.pruned_count},
            {"count_mismatch", d.count_mismatch},
            {"messages", d.messages}};
}

HierarchyDiagnostics diagnostics_from_json(const json& j) {
    HierarchyDiagnostics d;
    d.visual_curve = curve_from_json(j.at("visual_curve"));
    d.visual_score = j.at("visual_score").get<double>();
    d.weak_visual_structure = j.at("weak_visual_structure").get<bool>();
    for (const auto& [v, c] : j.at("kinematic_curves").items())
        d.kinematic_curves[static_cast<std::size_t>(std::stoull(v))] = curve_from_json(c);
    d.candidate_count = j.at("candidate_count").get<std::size_t>();
    d.required_demos = j.at("required_demos").get<std::size_t>();
    d.pruned_count = j.at("pruned_count").get<std::size_t>();
    d.count_mismatch = j.at("count_mismatch").get<bool>();
    d.messages = j.at("messages").get<std::vector<std::string>>();
    return d;
}

json sub_clusters_json(const TransitionHierarchy& h) {
    json rows = json::array();
    for (const auto& row : h.sub_clusters) {
        json r = json::array();
        for (const auto& s : row) {
            r.push_back({{"visual", s.visual},
                         {"kinematic", s.kinematic},
                         {"members", s.members},
                         {"demos", s.demos},
                         {"mean_time", s.mean_time},
                         {"pruned", s.pruned},
                         {"label", s.label ? json(*s.label) : json(nullptr)},
                         {"extra", s.extra}});
        }
        rows.push_back(r);
    }
    return rows;
}

}  // namespace

nlohmann::json hierarchy_report(const TransitionHierarchy& h) {
    return {{"canonical_order", h.canonical_order},
            {"visual_clusters", h.visual_model.num_components()},
            {"sub_clusters", sub_clusters_json(h)},
            {"labels", h.labels()},
            {"diagnostics", diagnostics_json(h.diagnostics)}};
}

std::string serialize_bundle(const ModelBundle& b) {
    const auto& h = b.hierarchy;
    json kin = json::array();
    for (const auto& m : h.kinematic_models) kin.push_back(m ? encode_gmm(*m) : json(nullptr));
    json hier = {{"canonical_order", h.canonical_order},
                 {"visual_model", encode_gmm(h.visual_model)},
                 {"kinematic_models", kin},
                 {"sub_clusters", sub_clusters_json(h)},
                 {"standardizer",
                  {{"mean", encode_matrix(h.standardizer.mean())}, {"std", encode_matrix(h.standardizer.std())}}},
                 {"diagnostics", diagnostics_json(h.diagnostics)}};
    json ae = nullptr;
    if (h.encoder) {
        ae = {{"encoder", encode_layers(h.encoder->encoder)},
              {"decoder", encode_layers(h.encoder->decoder)},
              {"training_loss_history", encode_vector(h.encoder->training_loss_history)},
              {"validation_loss_history", encode_vector(h.encoder->validation_loss_history)}};
    }
    json j = {{"format_version", b.format_version},
              {"autoencoder", ae},
              {"hierarchy", hier},
              {"config", to_json(b.config)},
              {"dataset_fingerprint", b.dataset_fingerprint},
              {"train_ids", b.train_ids}};
    return j.dump(1) + "\n";
}

ModelBundle deserialize_bundle(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& ex) {
        fail(ErrorCode::Format, std::string("model file is not valid JSON: ") + ex.what());
    }
    if (!j.is_object() || !j.contains("format_version") || !j.at("format_version").is_number_integer())
        fail(ErrorCode::Format, "model file has no format_version");
    const int version = j.at("format_version").get<int>();
    if (version != ModelBundle::kFormatVersion)
        fail(ErrorCode::VersionMismatch, "model format_version " + std::to_string(version) + ", this build reads " +
                                             std::to_string(ModelBundle::kFormatVersion));
    try {
        ModelBundle b;
        b.format_version = version;
        b.config = train_config_from_json(j.at("config"));
        b.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
        b.train_ids = j.at("train_ids").get<std::vector<std::string>>();
        auto& h = b.hierarchy;
        const auto& hj = j.at("hierarchy");
        h.canonical_order = hj.at("canonical_order").get<std::vector<std::string>>();
        h.visual_model = decode_gmm(hj.at("visual_model"));
        for (const auto& m : hj.at("kinematic_models"))
            h.kinematic_models.push_back(m.is_null() ? std::nullopt : std::optional<GmmModel>(decode_gmm(m)));
        for (const auto& row : hj.at("sub_clusters")) {
            std::vector<SubCluster> r;
            for (const auto& s : row) {
                SubCluster c;
                c.visual = s.at("visual").get<std::size_t>();
                c.kinematic = s.at("kinematic").get<std::size_t>();
                c.members = s.at("members").get<std::size_t>();
                c.demos = s.at("demos").get<std::vector<std::string>>();
                c.mean_time = s.at("mean_time").get<double>();
                c.pruned = s.at("pruned").get<bool>();
                if (!s.at("label").is_null()) c.label = s.at("label").get<std::string>();
                c.extra = s.at("extra").get<bool>();
                r.push_back(std::move(c));
            }
            h.sub_clusters.push_back(std::move(r));
        }
        if (h.kinematic_models.size() != h.visual_model.num_components() ||
            h.sub_clusters.size() != h.visual_model.num_components())
            fail(ErrorCode::Format, "hierarchy levels disagree on the number of visual clusters");
        const Eigen::MatrixXd mean = decode_matrix(hj.at("standardizer").at("mean"));
        const Eigen::MatrixXd std = decode_matrix(hj.at("standardizer").at("std"));
        if (mean.size() != static_cast<Eigen::Index>(kKinematicDim) || std.size() != static_cast<Eigen::Index>(kKinematicDim))
            fail(ErrorCode::Format, "standardizer must have 14 entries");
        h.standardizer = Standardizer(KinVec(mean.col(0)), KinVec(std.col(0)));
        h.diagnostics = diagnostics_from_json(hj.at("diagnostics"));
        if (!j.at("autoencoder").is_null()) {
            const auto& a = j.at("autoencoder");
            AutoencoderModel ae;
            ae.encoder = decode_layers(a.at("encoder"));
            ae.decoder = decode_layers(a.at("decoder"));
            ae.training_loss_history = decode_vector(a.at("training_loss_history"));
            ae.validation_loss_history = decode_vector(a.at("validation_loss_history"));
            ae.validate();
            h.encoder = std::make_shared<const AutoencoderModel>(std::move(ae));
        }
        return b;
    } catch (const json::exception& ex) {
        fail(ErrorCode::Format, std::string("malformed model file: ") + ex.what());
    }
}

void save_bundle(const ModelBundle& bundle, const fs::path& path) { atomic_write(path, serialize_bundle(bundle)); }

ModelBundle load_bundle(const fs::path& path) {
    const std::string text = read_file(path);
    try {
        return deserialize_bundle(text);
    } catch (const Error& e) {
        throw e.with_context(path.string());
    }
}

}  // namespace tscseg
