#pragma once

// Hierarchical transition-state clustering.
//
// 1. Each demonstration's standardized kinematics are scanned with a local
//    linear predictor; frames whose one-step prediction residual exceeds a
//    threshold become transition candidates.
// 2. Candidates from all demonstrations are clustered on their visual latent
//    (first level), then on their kinematics within each visual cluster
//    (second level). Both levels choose their size by silhouette.
// 3. Sub-clusters covering too few demonstrations are pruned as spurious.
// 4. Survivors are ordered by mean normalized time and given canonical labels.

#include "tscseg/autoencoder.hpp"
#include "tscseg/core.hpp"
#include "tscseg/gmm.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tscseg {

enum class ThresholdMode { Auto, Fixed };

struct TscConfig {
    std::size_t dynamics_window = 5;
    ThresholdMode threshold_mode = ThresholdMode::Auto;
    double threshold_sigmas = 2.0;   // auto: mean + sigmas * std of the demo's residuals
    double fixed_threshold = 1.0;    // fixed mode, standardized units
    double residual_floor = 1e-3;    // no candidate below this residual in either mode
    std::size_t merge_window = 3;
    double min_demo_fraction = 0.6;
    std::size_t visual_k_min = 2;
    std::size_t visual_k_max = 12;
    std::size_t kinematic_k_min = 1;
    std::size_t kinematic_k_max = 6;
    /// A kinematic split (k >= 2) is only accepted at or above this
    /// silhouette; a visual level scoring below it is flagged as weak.
    double split_silhouette = 0.5;
    /// Each level's covariance loading is at least this fraction of the mean
    /// per-dimension variance of the points it clusters.
    double relative_regularization = 0.1;
    bool all_states = false;
    std::size_t all_states_stride = 10;
    std::vector<std::string> canonical_order{"T1", "T2", "T3", "T4", "T5", "T6", "T7", "T8"};
    GmmFitConfig visual_gmm;
    GmmFitConfig kinematic_gmm;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TransitionCandidate {
    std::string demo_id;
    std::size_t time_index = 0;
    double normalized_time = 0.0;  // time_index / T
    double residual = 0.0;
    KinVec kinematic = KinVec::Zero();  // standardized
    Eigen::VectorXd visual;             // latent (or raw when no encoder)
};

/// One-step prediction residual norm per frame (0 for the first `w` frames).
std::vector<double> prediction_residuals(const Demonstration& demo, const TscConfig& cfg, const Standardizer& standardizer);

/// Threshold actually applied to a residual sequence.
double candidate_threshold(std::span<const double> residuals, const TscConfig& cfg);

/// Candidates sorted by time. `encoder` may be null, in which case the raw
/// visual vector is carried.
std::vector<TransitionCandidate> detect_transition_candidates(const Demonstration& demo, const TscConfig& cfg,
                                                              const Standardizer& standardizer,
                                                              const AutoencoderModel* encoder = nullptr);

/// Convenience overload standardizing with the demo's own statistics.
std::vector<TransitionCandidate> detect_transition_candidates(const Demonstration& demo, const TscConfig& cfg);

/// Every `all_states_stride`-th state as a candidate (comparison mode).
std::vector<TransitionCandidate> all_state_candidates(const Demonstration& demo, const TscConfig& cfg,
                                                      const Standardizer& standardizer,
                                                      const AutoencoderModel* encoder = nullptr);

struct SubCluster {
    std::size_t visual = 0;
    std::size_t kinematic = 0;
    std::size_t members = 0;
    std::vector<std::string> demos;  // distinct, sorted
    double mean_time = 0.0;
    bool pruned = false;
    std::optional<std::string> label;
    bool extra = false;  // labeled beyond the canonical order
};

struct HierarchyDiagnostics {
    std::vector<std::pair<std::size_t, double>> visual_curve;
    double visual_score = 0.0;
    bool weak_visual_structure = false;
    std::map<std::size_t, std::vector<std::pair<std::size_t, double>>> kinematic_curves;
    std::size_t candidate_count = 0;
    std::size_t required_demos = 0;
    std::size_t pruned_count = 0;
    bool count_mismatch = false;
    std::vector<std::string> messages;
};

struct TransitionHierarchy {
    GmmModel visual_model;
    std::vector<std::optional<GmmModel>> kinematic_models;  // per visual cluster
    std::vector<std::vector<SubCluster>> sub_clusters;      // [visual][kinematic]
    std::vector<std::string> canonical_order;
    Standardizer standardizer;
    std::shared_ptr<const AutoencoderModel> encoder;  // null: visual input used as-is
    HierarchyDiagnostics diagnostics;

    const SubCluster* find(std::size_t visual, std::size_t kinematic) const;
    /// Labels of retained sub-clusters, canonical ones first in order.
    std::vector<std::string> labels() const;
    /// Position in canonical_order, nullopt for extras and unknown labels.
    std::optional<std::size_t> canonical_index(const std::string& label) const;
    std::size_t visual_dim() const { return visual_model.dim(); }
};

/// Hard (visual, kinematic) assignment of a candidate-space point.
std::pair<std::size_t, std::optional<std::size_t>> hierarchy_assign(const TransitionHierarchy& h,
                                                                    const Eigen::Ref<const Eigen::VectorXd>& visual,
                                                                    const KinVec& kinematic);

TransitionHierarchy fit_hierarchy(std::span<const TransitionCandidate> candidates, const TscConfig& cfg);

/// Marks sub-clusters that cover fewer than ceil(rho * num_demos)
/// demonstrations (or are empty) as pruned.
TransitionHierarchy prune_clusters(TransitionHierarchy h, std::size_t num_demos, const TscConfig& cfg);

TransitionHierarchy assign_transition_labels(TransitionHierarchy h);

}  // namespace tscseg
