#include "tscseg/simgen.hpp"

#include "tscseg/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

namespace tscseg {

namespace {

struct Waypoint {
    Eigen::Vector3d position;
    Eigen::Vector3d rpy;  // roll, pitch, yaw
    double gripper;
};

// C: center, LA/RA: above left/right peg, L/R: at the peg.
const std::vector<Waypoint>& base_waypoints() {
    static const std::vector<Waypoint> w{
        {{0.00, 0.00, 0.03}, {0.00, 0.20, 0.0}, 0.8},     // C
        {{-0.05, 0.02, 0.05}, {0.15, 0.25, 0.3}, 0.8},    // LA
        {{-0.05, 0.02, -0.01}, {0.25, 0.35, 0.3}, 0.1},   // L (grasped)
        {{0.05, -0.02, 0.03}, {-0.15, 0.25, -0.3}, 0.1},  // RA
        {{0.05, -0.02, -0.01}, {-0.25, 0.35, -0.3}, 0.8}, // R (released)
        {{0.00, 0.00, 0.03}, {0.00, 0.20, 0.0}, 0.8},     // C
        {{0.05, -0.03, 0.04}, {-0.10, 0.05, -0.6}, 0.8},  // RA, second visit
        {{0.05, -0.03, 0.00}, {-0.20, 0.10, -0.6}, 0.1},  // R (grasped)
        {{-0.05, 0.03, 0.04}, {0.10, 0.05, 0.6}, 0.1},    // LA, second visit
        {{-0.05, 0.03, 0.00}, {0.20, 0.10, 0.6}, 0.8},    // L (released)
    };
    return w;
}

constexpr double kPosNoise = 2e-4;
constexpr double kVelNoise = 1e-3;
constexpr double kAngVelNoise = 1e-2;
constexpr double kQuatNoise = 1e-3;
constexpr double kGripNoise = 5e-3;
constexpr std::size_t kMinSegmentFrames = 12;

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = seed ^ (0x9e3779b97f4a7c15ULL * (a + 1)) ^ (0xc2b2ae3d27d4eb4fULL * (b + 7));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

enum Stream : std::uint64_t { kScenes = 1, kLift = 2, kTrajectory = 3, kJitter = 4, kVisual = 5 };

Eigen::Quaterniond orientation_for(const Eigen::Vector3d& rpy) {
    return Eigen::AngleAxisd(rpy(2), Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(rpy(1), Eigen::Vector3d::UnitY()) *
           Eigen::AngleAxisd(rpy(0), Eigen::Vector3d::UnitX());
}

Eigen::Vector4d wxyz(const Eigen::Quaterniond& q) { return {q.w(), q.x(), q.y(), q.z()}; }

Eigen::MatrixXd lift_matrix(const SimConfig& cfg) {
    std::mt19937_64 rng(stream_seed(cfg.seed, kLift, 0));
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim)));
    Eigen::MatrixXd A(static_cast<Eigen::Index>(cfg.raw_dim), static_cast<Eigen::Index>(cfg.latent_dim));
    for (Eigen::Index c = 0; c < A.cols(); ++c)
        for (Eigen::Index r = 0; r < A.rows(); ++r) A(r, c) = n(rng);
    return A;
}

}  // namespace

void SimConfig::validate() const {
    if (num_demos == 0) fail(ErrorCode::InvalidArgument, "num_demos must be at least 1");
    if (!(sample_rate_hz > 0.0)) fail(ErrorCode::InvalidArgument, "sample_rate_hz must be positive");
    if (nominal_durations_s.size() != kSegmentCount)
        fail(ErrorCode::InvalidArgument, "segment script needs exactly 9 durations");
    for (double d : nominal_durations_s)
        if (!(d > 0.0)) fail(ErrorCode::InvalidArgument, "segment durations must be positive");
    if (!(duration_jitter >= 0.0 && duration_jitter < 1.0))
        fail(ErrorCode::InvalidArgument, "duration_jitter must be in [0, 1)");
    if (kinematic_noise < 0.0 || latent_noise_std < 0.0 || raw_noise_std < 0.0 || waypoint_spread_m < 0.0)
        fail(ErrorCode::InvalidArgument, "noise levels must be non-negative");
    if (latent_dim == 0 || raw_dim == 0) fail(ErrorCode::InvalidArgument, "visual dimensions must be positive");
    if (spurious_jitter_rate < 0.0) fail(ErrorCode::InvalidArgument, "spurious_jitter_rate must be non-negative");
    if (!(spurious_jitter_speed >= 0.0)) fail(ErrorCode::InvalidArgument, "spurious_jitter_speed must be non-negative");
}

const std::vector<std::size_t>& segment_scenes() {
    static const std::vector<std::size_t> scenes{0, 1, 2, 3, 0, 4, 3, 2, 1};
    return scenes;
}

std::vector<std::string> canonical_segment_labels() {
    std::vector<std::string> out;
    for (std::size_t i = 1; i <= kSegmentCount; ++i) out.push_back("S" + std::to_string(i));
    return out;
}

std::vector<std::string> canonical_transition_labels() {
    std::vector<std::string> out;
    for (std::size_t i = 1; i <= kTransitionCount; ++i) out.push_back("T" + std::to_string(i));
    return out;
}

std::string demo_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "demo_%03zu", index);
    return buf;
}

Eigen::MatrixXd scene_means(const SimConfig& cfg) {
    const std::size_t scenes = *std::max_element(segment_scenes().begin(), segment_scenes().end()) + 1;
    std::mt19937_64 rng(stream_seed(cfg.seed, kScenes, 0));
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd means(static_cast<Eigen::Index>(scenes), static_cast<Eigen::Index>(cfg.latent_dim));
    for (Eigen::Index c = 0; c < means.cols(); ++c)
        for (Eigen::Index r = 0; r < means.rows(); ++r) means(r, c) = n(rng);

    const double radius = cfg.latent_noise_std * std::sqrt(static_cast<double>(cfg.latent_dim));
    const double required = cfg.min_mode_separation * radius;
    double closest = std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < means.rows(); ++a)
        for (Eigen::Index b = a + 1; b < means.rows(); ++b) closest = std::min(closest, (means.row(a) - means.row(b)).norm());
    if (closest < required) means *= required / closest;
    return means;
}

SimDemo generate_demo(const SimConfig& cfg, std::size_t demo_index) {
    cfg.validate();
    const auto& base = base_waypoints();
    std::mt19937_64 rng(stream_seed(cfg.seed, kTrajectory, demo_index));
    std::normal_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> jitter(-cfg.duration_jitter, cfg.duration_jitter);

    std::vector<Waypoint> way = base;
    for (auto& w : way) {
        for (int j = 0; j < 3; ++j) w.position(j) += cfg.waypoint_spread_m * unit(rng);
        for (int j = 0; j < 3; ++j) w.rpy(j) += 0.03 * unit(rng);
        w.gripper += 0.02 * unit(rng);
    }
    std::vector<std::size_t> frames(kSegmentCount);
    for (std::size_t s = 0; s < kSegmentCount; ++s) {
        const double seconds = cfg.nominal_durations_s[s] * (1.0 + jitter(rng));
        frames[s] = std::max(kMinSegmentFrames, static_cast<std::size_t>(std::lround(seconds * cfg.sample_rate_hz)));
    }
    std::size_t total = 0;
    for (auto f : frames) total += f;

    // Noise-free trajectory.
    std::vector<KinematicFeatures> clean(total);
    std::vector<std::string> labels(total);
    std::vector<std::size_t> segment_of(total);
    std::size_t t = 0;
    for (std::size_t s = 0; s < kSegmentCount; ++s) {
        const auto& a = way[s];
        const auto& b = way[s + 1];
        const double n = static_cast<double>(frames[s]);
        const double duration = n / cfg.sample_rate_hz;
        const Eigen::Quaterniond qa = orientation_for(a.rpy);
        const Eigen::Quaterniond qb = orientation_for(b.rpy);
        const Eigen::AngleAxisd delta(qb * qa.inverse());
        const Eigen::Vector3d omega = delta.axis() * (delta.angle() / duration);
        for (std::size_t u = 0; u < frames[s]; ++u, ++t) {
            const double frac = static_cast<double>(u) / n;
            auto& k = clean[t];
            k.tip_position = a.position + frac * (b.position - a.position);
            k.linear_velocity = (b.position - a.position) / duration;
            k.angular_velocity = omega;
            k.tool_orientation = wxyz(qa.slerp(frac, qb));
            k.gripper_angle = a.gripper + frac * (b.gripper - a.gripper);
            labels[t] = "S" + std::to_string(s + 1);
            segment_of[t] = s;
        }
    }

    SimDemo out;
    // Spurious lateral bumps: out for two frames, back for two.
    {
        std::mt19937_64 jrng(stream_seed(cfg.seed, kJitter, demo_index));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::size_t count = static_cast<std::size_t>(std::floor(cfg.spurious_jitter_rate));
        if (u01(jrng) < cfg.spurious_jitter_rate - std::floor(cfg.spurious_jitter_rate)) ++count;
        const double dt = 1.0 / cfg.sample_rate_hz;
        std::size_t start = 0;
        std::vector<std::size_t> starts(kSegmentCount);
        for (std::size_t s = 0; s < kSegmentCount; ++s) {
            starts[s] = start;
            start += frames[s];
        }
        for (std::size_t j = 0; j < count; ++j) {
            std::uniform_int_distribution<std::size_t> seg_pick(0, kSegmentCount - 1);
            const std::size_t s = seg_pick(jrng);
            const std::size_t margin = std::min<std::size_t>(8, frames[s] / 3);
            std::uniform_int_distribution<std::size_t> off(margin, frames[s] - margin - 4);
            const std::size_t f0 = starts[s] + off(jrng);
            out.jitter_frames.push_back(f0);
            double offset = 0.0;
            for (std::size_t f = 0; f < 4; ++f) {
                const double vy = f < 2 ? cfg.spurious_jitter_speed : -cfg.spurious_jitter_speed;
                clean[f0 + f].linear_velocity(1) += vy;
                offset += vy * dt;
                if (f + 1 < 4) clean[f0 + f + 1].tip_position(1) += offset;
            }
        }
        std::sort(out.jitter_frames.begin(), out.jitter_frames.end());
    }

    const Eigen::MatrixXd means = scene_means(cfg);
    const Eigen::MatrixXd lift = lift_matrix(cfg);
    std::mt19937_64 vrng(stream_seed(cfg.seed, kVisual, demo_index));
    Eigen::VectorXd demo_offset(static_cast<Eigen::Index>(cfg.latent_dim));
    for (Eigen::Index j = 0; j < demo_offset.size(); ++j) demo_offset(j) = 0.03 * unit(vrng);

    Demonstration& demo = out.demo;
    demo.id = demo_id(demo_index);
    demo.sample_rate_hz = cfg.sample_rate_hz;
    demo.states.resize(total);
    const double noise = cfg.kinematic_noise;
    for (std::size_t f = 0; f < total; ++f) {
        StateVector& st = demo.states[f];
        st.time_index = f;
        KinematicFeatures k = clean[f];
        for (int j = 0; j < 3; ++j) {
            k.tip_position(j) += noise * kPosNoise * unit(rng);
            k.linear_velocity(j) += noise * kVelNoise * unit(rng);
            k.angular_velocity(j) += noise * kAngVelNoise * unit(rng);
        }
        for (int j = 0; j < 4; ++j) k.tool_orientation(j) += noise * kQuatNoise * unit(rng);
        k.tool_orientation = canonical_quaternion(k.tool_orientation);
        k.gripper_angle += noise * kGripNoise * unit(rng);
        st.kinematic = k;

        Eigen::VectorXd latent = means.row(static_cast<Eigen::Index>(segment_scenes()[segment_of[f]])).transpose() +
                                 demo_offset;
        for (Eigen::Index j = 0; j < latent.size(); ++j) latent(j) += cfg.latent_noise_std * unit(vrng);
        st.visual = lift * latent;
        for (Eigen::Index j = 0; j < st.visual.size(); ++j) st.visual(j) += cfg.raw_noise_std * unit(vrng);
    }
    out.truth = SegmentTrack::from_labels(std::move(labels));
    demo.annotations = out.truth;
    return out;
}

DirectiveMap task_directives() {
    const auto& way = base_waypoints();
    DirectiveMap m;
    for (std::size_t i = 0; i < kTransitionCount; ++i) {
        AssistanceDirective d;
        d.transition = "T" + std::to_string(i + 1);
        d.target_orientation = canonical_quaternion(wxyz(orientation_for(way[i + 2].rpy)));
        const double g0 = way[i + 1].gripper, g1 = way[i + 2].gripper;
        d.gripper = g1 < g0 ? GripperCommand::Close : g1 > g0 ? GripperCommand::Open : GripperCommand::Hold;
        m.emplace(d.transition, d);
    }
    return m;
}

std::vector<Demonstration> SimDataset::split(const std::vector<std::string>& ids) const {
    std::vector<Demonstration> out;
    for (const auto& id : ids)
        for (const auto& d : demos)
            if (d.demo.id == id) out.push_back(d.demo);
    return out;
}

std::vector<Demonstration> SimDataset::all() const {
    std::vector<Demonstration> out;
    for (const auto& d : demos) out.push_back(d.demo);
    return out;
}

SimDataset generate_dataset(const SimConfig& cfg) {
    cfg.validate();
    SimDataset ds;
    ds.demos.resize(cfg.num_demos);
    for (std::size_t i = 0; i < cfg.num_demos; ++i) ds.demos[i] = generate_demo(cfg, i);
    auto& m = ds.manifest;
    m.visual_dim = cfg.raw_dim;
    m.sample_rate_hz = cfg.sample_rate_hz;
    m.generator_seed = cfg.seed;
    m.segment_labels = canonical_segment_labels();
    const std::size_t n_train = cfg.num_demos > cfg.train_count ? cfg.train_count : cfg.num_demos;
    for (std::size_t i = 0; i < cfg.num_demos; ++i) {
        const std::string id = demo_id(i);
        m.demos.push_back({id, id + ".csv", id + "_labels.csv"});
        (i < n_train ? m.train : m.test).push_back(id);
    }
    return ds;
}

}  // namespace tscseg
