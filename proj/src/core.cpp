#include "tscseg/core.hpp"

#include "tscseg/error.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <set>

namespace tscseg {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::TooFewPoints: return "TooFewPoints";
        case ErrorCode::DegenerateComponent: return "DegenerateComponent";
        case ErrorCode::SingleCluster: return "SingleCluster";
        case ErrorCode::AllDegenerate: return "AllDegenerate";
        case ErrorCode::TooShort: return "TooShort";
        case ErrorCode::TooFewCandidates: return "TooFewCandidates";
        case ErrorCode::AllPruned: return "AllPruned";
        case ErrorCode::NoSurvivors: return "NoSurvivors";
        case ErrorCode::MissingDirective: return "MissingDirective";
        case ErrorCode::NoSamples: return "NoSamples";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::FileNotFound: return "FileNotFound";
        case ErrorCode::Io: return "Io";
        case ErrorCode::Format: return "Format";
        case ErrorCode::VersionMismatch: return "VersionMismatch";
    }
    return "Unknown";
}

KinVec KinematicFeatures::flatten() const {
    KinVec v;
    v.segment<3>(0) = tip_position;
    v.segment<3>(3) = linear_velocity;
    v.segment<3>(6) = angular_velocity;
    v.segment<4>(9) = tool_orientation;
    v(13) = gripper_angle;
    return v;
}

KinematicFeatures KinematicFeatures::unflatten(const KinVec& v) {
    KinematicFeatures k;
    k.tip_position = v.segment<3>(0);
    k.linear_velocity = v.segment<3>(3);
    k.angular_velocity = v.segment<3>(6);
    k.tool_orientation = v.segment<4>(9);
    k.gripper_angle = v(13);
    return k;
}

Eigen::Vector4d canonical_quaternion(const Eigen::Vector4d& q) {
    if (!q.allFinite()) fail(ErrorCode::NonFinite, "quaternion has non-finite components");
    const double n = q.norm();
    if (n < 1e-12) fail(ErrorCode::InvalidArgument, "quaternion has zero norm");
    Eigen::Vector4d u = std::abs(n - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon() ? q : Eigen::Vector4d(q / n);
    if (u(0) < 0.0) u = -u;
    return u;
}

namespace {

std::optional<int> segment_number(const std::string& label) {
    if (label.size() < 2 || label[0] != 'S') return std::nullopt;
    int value = 0;
    auto [ptr, ec] = std::from_chars(label.data() + 1, label.data() + label.size(), value);
    if (ec != std::errc{} || ptr != label.data() + label.size()) return std::nullopt;
    return value;
}

}  // namespace

SegmentTrack SegmentTrack::from_labels(std::vector<std::string> labels) {
    SegmentTrack track;
    track.labels = std::move(labels);
    std::size_t ordinal = 0;
    for (std::size_t t = 1; t < track.labels.size(); ++t) {
        if (track.labels[t] == track.labels[t - 1]) continue;
        ++ordinal;
        std::string label;
        if (auto k = segment_number(track.labels[t]); k && *k >= 2) {
            label = "T" + std::to_string(*k - 1);
        } else {
            label = "T" + std::to_string(ordinal);
        }
        track.transition_events.push_back({t, std::move(label)});
    }
    return track;
}

void SegmentTrack::validate(std::size_t max_segments) const {
    std::set<std::string> distinct(labels.begin(), labels.end());
    if (distinct.size() > max_segments) {
        fail(ErrorCode::InvalidArgument, "segment track has " + std::to_string(distinct.size()) +
                                             " distinct labels, more than the declared " +
                                             std::to_string(max_segments));
    }
    std::size_t change_count = 0;
    for (std::size_t t = 1; t < labels.size(); ++t) change_count += labels[t] != labels[t - 1] ? 1 : 0;
    if (change_count != transition_events.size()) {
        fail(ErrorCode::InvalidArgument, "segment track has " + std::to_string(change_count) + " label changes but " +
                                             std::to_string(transition_events.size()) + " transition events");
    }
    for (std::size_t i = 0; i < transition_events.size(); ++i) {
        const auto t = transition_events[i].time_index;
        if (i > 0 && t <= transition_events[i - 1].time_index)
            fail(ErrorCode::InvalidArgument, "transition events are not sorted by time");
        if (t == 0 || t >= labels.size() || labels[t] == labels[t - 1])
            fail(ErrorCode::InvalidArgument, "transition event at t=" + std::to_string(t) + " is not at a label change");
    }
}

void ingest(Demonstration& demo, std::size_t expected_visual_dim, std::size_t max_segments) {
    const auto where = [&](std::size_t i) {
        return "demo '" + demo.id + "' at t=" + std::to_string(demo.states[i].time_index);
    };
    if (!(demo.sample_rate_hz > 0.0) || !std::isfinite(demo.sample_rate_hz))
        fail(ErrorCode::InvalidArgument, "demo '" + demo.id + "' has a non-positive sample rate");
    if (demo.states.size() < 2)
        fail(ErrorCode::TooShort, "demo '" + demo.id + "' has fewer than 2 states");
    const std::size_t visual_dim = expected_visual_dim != 0 ? expected_visual_dim : demo.visual_dim();
    for (std::size_t i = 0; i < demo.states.size(); ++i) {
        auto& s = demo.states[i];
        if (i > 0 && s.time_index != demo.states[i - 1].time_index + 1)
            fail(ErrorCode::InvalidArgument, where(i) + ": time_index does not increase by 1");
        if (static_cast<std::size_t>(s.visual.size()) != visual_dim)
            fail(ErrorCode::DimensionMismatch, where(i) + ": visual dimension " + std::to_string(s.visual.size()) +
                                                   " != " + std::to_string(visual_dim));
        auto& k = s.kinematic;
        if (!k.tip_position.allFinite() || !k.linear_velocity.allFinite() || !k.angular_velocity.allFinite() ||
            !k.tool_orientation.allFinite() || !std::isfinite(k.gripper_angle))
            fail(ErrorCode::NonFinite, where(i) + ": non-finite kinematic feature");
        if (!s.visual.allFinite()) fail(ErrorCode::NonFinite, where(i) + ": non-finite visual feature");
        try {
            k.tool_orientation = canonical_quaternion(k.tool_orientation);
        } catch (const Error& e) {
            throw e.with_context(where(i));
        }
    }
    if (demo.annotations) {
        if (demo.annotations->labels.size() != demo.states.size())
            fail(ErrorCode::LengthMismatch, "demo '" + demo.id + "' annotation length differs from state count");
        demo.annotations->validate(max_segments);
    }
}

Standardizer::Standardizer(KinVec mean, KinVec std) : mean_(std::move(mean)), std_(std::move(std)) {
    if (!mean_.allFinite() || !std_.allFinite()) fail(ErrorCode::NonFinite, "standardizer parameters not finite");
    if ((std_.array() <= 0.0).any()) fail(ErrorCode::InvalidArgument, "standardizer std must be positive");
}

KinVec Standardizer::apply(const KinVec& raw) const {
    if (!raw.allFinite()) fail(ErrorCode::NonFinite, "kinematic input not finite");
    return ((raw - mean_).array() / std_.array()).matrix();
}

KinVec Standardizer::invert(const KinVec& z) const {
    return (z.array() * std_.array()).matrix() + mean_;
}

Standardizer standardize_fit(std::span<const KinVec> samples, double epsilon_std) {
    if (samples.empty()) fail(ErrorCode::EmptyDataset, "no kinematic samples to standardize");
    KinVec mean = KinVec::Zero();
    for (const auto& v : samples) {
        if (!v.allFinite()) fail(ErrorCode::NonFinite, "kinematic sample not finite");
        mean += v;
    }
    mean /= static_cast<double>(samples.size());
    KinVec var = KinVec::Zero();
    for (const auto& v : samples) var += (v - mean).array().square().matrix();
    var /= static_cast<double>(samples.size());
    KinVec std = var.array().sqrt().max(epsilon_std).matrix();
    return Standardizer(mean, std);
}

Standardizer standardize_fit(std::span<const Demonstration> demos, double epsilon_std) {
    std::vector<KinVec> samples;
    for (const auto& d : demos) {
        for (const auto& s : d.states) {
            KinVec v = s.kinematic.flatten();
            if (!v.allFinite())
                fail(ErrorCode::NonFinite, "demo '" + d.id + "' at t=" + std::to_string(s.time_index) +
                                               ": non-finite kinematic feature");
            samples.push_back(v);
        }
    }
    if (samples.empty()) fail(ErrorCode::EmptyDataset, "no states in the supplied demonstrations");
    return standardize_fit(std::span<const KinVec>(samples), epsilon_std);
}

KinVec standardize_apply(const Standardizer& s, const KinematicFeatures& k) { return s.apply(k); }

}  // namespace tscseg
