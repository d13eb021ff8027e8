#pragma once

// Deterministic synthetic pick-and-place demonstrations with ground truth.
//
// Script (9 segments, 8 transitions):
//   S1 approach left   S2 grasp left      S3 transport right
//   S4 release right   S5 return center   S6 approach right
//   S7 grasp right     S8 transport left  S9 release left
// Each segment moves linearly between two waypoints (position, yaw, gripper)
// so velocity and gripper rate switch at every transition. Visual features
// come from a per-scene latent mode lifted to the raw dimension by a fixed
// seeded linear map; consecutive segments never share a scene.

#include "tscseg/core.hpp"
#include "tscseg/online.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tscseg {

inline constexpr std::size_t kSegmentCount = 9;
inline constexpr std::size_t kTransitionCount = 8;

struct SimConfig {
    std::size_t num_demos = 14;
    double sample_rate_hz = 30.0;
    std::vector<double> nominal_durations_s{1.5, 1.2, 2.0, 1.2, 1.5, 1.5, 1.2, 2.0, 1.2};
    double duration_jitter = 0.2;  // uniform +/- fraction
    double kinematic_noise = 1.0;  // multiplier on the per-channel noise scales
    double waypoint_spread_m = 0.003;
    std::size_t latent_dim = 128;
    std::size_t raw_dim = 512;
    double latent_noise_std = 0.1;  // per latent coordinate
    double raw_noise_std = 0.05;
    double min_mode_separation = 6.0;  // in units of the intra-mode RMS radius
    double spurious_jitter_rate = 0.0;  // expected injected jitters per demo
    double spurious_jitter_speed = 0.15;  // m/s lateral bump
    std::size_t train_count = 9;
    std::uint64_t seed = 0;

    void validate() const;
};

struct DatasetManifest {
    struct Entry {
        std::string id;
        std::string file;
        std::string annotations;
    };
    std::vector<Entry> demos;
    std::size_t visual_dim = kDefaultRawVisualDim;
    double sample_rate_hz = 30.0;
    std::vector<std::string> train;
    std::vector<std::string> test;
    std::optional<std::uint64_t> generator_seed;
    std::vector<std::string> segment_labels;
};

struct SimDemo {
    Demonstration demo;  // annotations filled with the ground truth
    SegmentTrack truth;
    std::vector<std::size_t> jitter_frames;
};

/// Scene (visual mode) shown during each of the nine segments.
const std::vector<std::size_t>& segment_scenes();

std::vector<std::string> canonical_segment_labels();
std::vector<std::string> canonical_transition_labels();

/// Deterministic in (cfg.seed, demo_index). Jitter injection draws from its
/// own stream, so the underlying trajectory does not depend on the rate.
SimDemo generate_demo(const SimConfig& cfg, std::size_t demo_index);

struct SimDataset {
    std::vector<SimDemo> demos;
    DatasetManifest manifest;

    std::vector<Demonstration> split(const std::vector<std::string>& ids) const;
    std::vector<Demonstration> train() const { return split(manifest.train); }
    std::vector<Demonstration> test() const { return split(manifest.test); }
    std::vector<Demonstration> all() const;
};

SimDataset generate_dataset(const SimConfig& cfg);

/// Latent scene means for a seed (rows are scenes).
Eigen::MatrixXd scene_means(const SimConfig& cfg);

std::string demo_id(std::size_t index);

/// Assistance for the scripted task: each transition holds the orientation
/// of the segment it enters at that segment's goal waypoint, and commands
/// the gripper for grasp (close) and release (open).
DirectiveMap task_directives();

}  // namespace tscseg
