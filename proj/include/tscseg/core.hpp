#pragma once

// Shared domain types: kinematic/visual features, demonstrations, segment
// tracks and the kinematic z-score standardizer.

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tscseg {

inline constexpr std::size_t kKinematicDim = 14;
inline constexpr std::size_t kDefaultRawVisualDim = 512;
inline constexpr std::size_t kDefaultLatentDim = 128;

using KinVec = Eigen::Matrix<double, kKinematicDim, 1>;

/// Proprioceptive tool state for one timestep.
/// Flattened layout: px py pz | vx vy vz | wx wy wz | qw qx qy qz | gripper.
struct KinematicFeatures {
    Eigen::Vector3d tip_position = Eigen::Vector3d::Zero();
    Eigen::Vector3d linear_velocity = Eigen::Vector3d::Zero();
    Eigen::Vector3d angular_velocity = Eigen::Vector3d::Zero();
    Eigen::Vector4d tool_orientation{1.0, 0.0, 0.0, 0.0};  // w, x, y, z
    double gripper_angle = 0.0;

    KinVec flatten() const;
    static KinematicFeatures unflatten(const KinVec& v);
};

struct StateVector {
    std::size_t time_index = 0;
    KinematicFeatures kinematic;
    Eigen::VectorXd visual;

    std::size_t dimension() const { return kKinematicDim + static_cast<std::size_t>(visual.size()); }
};

struct TransitionEvent {
    std::size_t time_index = 0;
    std::string label;

    bool operator==(const TransitionEvent&) const = default;
};

/// Per-frame segment labels plus the transition events between them.
struct SegmentTrack {
    std::vector<std::string> labels;
    std::vector<TransitionEvent> transition_events;

    /// Derives events from label changes. A change into "S<k>" is labeled
    /// "T<k-1>"; labels outside that scheme are numbered by change ordinal.
    static SegmentTrack from_labels(std::vector<std::string> labels);

    /// Throws InvalidArgument when events are unsorted, fall where the label
    /// does not change, or more than `max_segments` distinct labels appear.
    void validate(std::size_t max_segments = 9) const;
};

struct Demonstration {
    std::string id;
    double sample_rate_hz = 30.0;
    std::vector<StateVector> states;
    std::optional<SegmentTrack> annotations;

    std::size_t length() const { return states.size(); }
    std::size_t visual_dim() const { return states.empty() ? 0 : static_cast<std::size_t>(states.front().visual.size()); }
};

/// Normalizes each orientation to unit norm with w >= 0 and checks every
/// type invariant. Errors name the demonstration id and time index.
/// `expected_visual_dim` of 0 accepts whatever the first state carries.
void ingest(Demonstration& demo, std::size_t expected_visual_dim = 0, std::size_t max_segments = 9);

/// Canonical unit quaternion (w >= 0). Throws NonFinite/InvalidArgument on
/// a zero or non-finite input.
Eigen::Vector4d canonical_quaternion(const Eigen::Vector4d& q);

inline constexpr double kDefaultEpsilonStd = 1e-8;

class Standardizer {
public:
    Standardizer() = default;
    Standardizer(KinVec mean, KinVec std);

    const KinVec& mean() const { return mean_; }
    const KinVec& std() const { return std_; }

    KinVec apply(const KinVec& raw) const;
    KinVec apply(const KinematicFeatures& k) const { return apply(k.flatten()); }
    KinVec invert(const KinVec& z) const;

private:
    KinVec mean_ = KinVec::Zero();
    KinVec std_ = KinVec::Ones();
};

/// Population mean/std over every kinematic vector of every demonstration.
Standardizer standardize_fit(std::span<const Demonstration> demos, double epsilon_std = kDefaultEpsilonStd);

/// Same, over raw flattened vectors.
Standardizer standardize_fit(std::span<const KinVec> samples, double epsilon_std = kDefaultEpsilonStd);

KinVec standardize_apply(const Standardizer& s, const KinematicFeatures& k);

}  // namespace tscseg
