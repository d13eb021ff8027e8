#pragma once

#include "tscseg/core.hpp"
#include "tscseg/hier_tsc.hpp"

#include <array>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tscseg {

enum class GripperCommand { Open, Close, Hold };

std::string_view to_string(GripperCommand g);
GripperCommand parse_gripper_command(std::string_view s);

struct AssistanceDirective {
    std::string transition;
    Eigen::Vector4d target_orientation{1.0, 0.0, 0.0, 0.0};  // w, x, y, z
    GripperCommand gripper = GripperCommand::Hold;

    void validate() const;
};

/// Keyed by transition label; an empty optional declares "no directive".
using DirectiveMap = std::map<std::string, std::optional<AssistanceDirective>>;

enum class OutOfOrderPolicy { Suppress, EmitWithFlag };

struct OnlineConfig {
    std::size_t hysteresis = 3;
    double posterior_floor = 0.6;
    OutOfOrderPolicy out_of_order_policy = OutOfOrderPolicy::Suppress;
    /// Canonical transitions that may be skipped by one event.
    std::size_t max_skip = 1;

    void validate() const;
};

enum class Stage : std::size_t { FeatureEncode = 0, KinematicStandardization, GmmPrediction, DirectiveEmit };
inline constexpr std::size_t kStageCount = 4;
std::string_view to_string(Stage s);

struct OnlineDecision {
    std::size_t time_index = 0;
    std::string segment_label;
    std::optional<std::string> transition_event;
    bool out_of_order = false;
    std::optional<AssistanceDirective> directive;
    std::optional<std::string> candidate_label;  // labeled sub-cluster winning this frame
    std::array<double, kStageCount> stage_latencies_us{};
};

struct StageStats {
    double min = 0.0;
    double mean = 0.0;
    double p99 = 0.0;
};

struct LatencySnapshot {
    std::size_t steps = 0;
    std::array<StageStats, kStageCount> stages{};
    StageStats total;
    bool encode_excluded = false;  // raw-feature bypass: no encoder in the loop
};

class SegmenterSession {
public:
    SegmenterSession(std::shared_ptr<const TransitionHierarchy> hierarchy, DirectiveMap directives, OnlineConfig cfg);

    OnlineDecision step(const Eigen::Ref<const Eigen::VectorXd>& visual, const KinematicFeatures& kinematic);

    const std::string& segment_label() const { return segment_label_; }
    std::size_t steps() const { return steps_; }
    const std::vector<TransitionEvent>& events() const { return events_; }
    const OnlineConfig& config() const { return cfg_; }
    LatencySnapshot latency_snapshot() const;

private:
    std::shared_ptr<const TransitionHierarchy> h_;
    DirectiveMap directives_;
    OnlineConfig cfg_;
    std::string segment_label_ = "S1";
    std::size_t steps_ = 0;
    std::optional<std::size_t> last_index_;
    std::optional<std::pair<std::size_t, std::size_t>> run_cluster_;
    std::size_t run_length_ = 0;
    std::vector<TransitionEvent> events_;
    std::array<std::vector<double>, kStageCount> latencies_;
    std::string emit_buffer_;
};

SegmenterSession stream_new(std::shared_ptr<const TransitionHierarchy> hierarchy, DirectiveMap directives,
                            OnlineConfig cfg = {});

/// Directive map declaring "none" for every label of the hierarchy.
DirectiveMap empty_directives(const TransitionHierarchy& h);

/// Compact JSON rendering used for the emitted directive record.
std::string directive_record(const AssistanceDirective& d);

/// Offline replay of the online rule over a whole demonstration.
SegmentTrack segment_demonstration(const TransitionHierarchy& h, const Demonstration& demo, const OnlineConfig& cfg = {});

}  // namespace tscseg
