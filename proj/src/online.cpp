#include "tscseg/online.hpp"

#include "tscseg/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace tscseg {

std::string_view to_string(GripperCommand g) {
    switch (g) {
        case GripperCommand::Open: return "open";
        case GripperCommand::Close: return "close";
        case GripperCommand::Hold: return "hold";
    }
    return "hold";
}

GripperCommand parse_gripper_command(std::string_view s) {
    if (s == "open") return GripperCommand::Open;
    if (s == "close") return GripperCommand::Close;
    if (s == "hold") return GripperCommand::Hold;
    fail(ErrorCode::Format, "unknown gripper command '" + std::string(s) + "'");
}

void AssistanceDirective::validate() const {
    if (!target_orientation.allFinite()) fail(ErrorCode::NonFinite, "directive " + transition + ": non-finite orientation");
    if (std::abs(target_orientation.norm() - 1.0) > 1e-6)
        fail(ErrorCode::InvalidArgument, "directive " + transition + ": orientation is not a unit quaternion");
}

void OnlineConfig::validate() const {
    if (hysteresis < 1) fail(ErrorCode::InvalidArgument, "hysteresis must be at least 1");
    if (!(posterior_floor > 0.0 && posterior_floor < 1.0))
        fail(ErrorCode::InvalidArgument, "posterior_floor must be in (0, 1)");
}

std::string_view to_string(Stage s) {
    switch (s) {
        case Stage::FeatureEncode: return "feature_encode";
        case Stage::KinematicStandardization: return "kinematic_standardization";
        case Stage::GmmPrediction: return "gmm_prediction";
        case Stage::DirectiveEmit: return "directive_emit";
    }
    return "unknown";
}

std::string directive_record(const AssistanceDirective& d) {
    nlohmann::json j;
    j["transition"] = d.transition;
    j["target_orientation"] = {d.target_orientation(0), d.target_orientation(1), d.target_orientation(2),
                               d.target_orientation(3)};
    j["gripper_command"] = to_string(d.gripper);
    return j.dump();
}

SegmenterSession::SegmenterSession(std::shared_ptr<const TransitionHierarchy> hierarchy, DirectiveMap directives,
                                   OnlineConfig cfg)
    : h_(std::move(hierarchy)), directives_(std::move(directives)), cfg_(cfg) {
    if (!h_) fail(ErrorCode::InvalidArgument, "session needs a hierarchy");
    cfg_.validate();
    for (const auto& label : h_->labels()) {
        if (!h_->canonical_index(label)) continue;  // extras are never required
        if (!directives_.contains(label)) fail(ErrorCode::MissingDirective, "no directive entry for " + label);
    }
    for (auto& [label, d] : directives_) {
        if (!d) continue;
        if (d->transition.empty()) d->transition = label;
        d->validate();
    }
}

SegmenterSession stream_new(std::shared_ptr<const TransitionHierarchy> hierarchy, DirectiveMap directives,
                            OnlineConfig cfg) {
    return SegmenterSession(std::move(hierarchy), std::move(directives), cfg);
}

DirectiveMap empty_directives(const TransitionHierarchy& h) {
    DirectiveMap m;
    for (const auto& label : h.labels()) m.emplace(label, std::nullopt);
    return m;
}

OnlineDecision SegmenterSession::step(const Eigen::Ref<const Eigen::VectorXd>& visual,
                                      const KinematicFeatures& kinematic) {
    using clock = std::chrono::steady_clock;
    auto micros = [](clock::time_point a, clock::time_point b) {
        return std::chrono::duration<double, std::micro>(b - a).count();
    };
    const TransitionHierarchy& h = *h_;
    const std::size_t expected = h.encoder ? h.encoder->input_dim() : h.visual_dim();
    if (static_cast<std::size_t>(visual.size()) != expected)
        fail(ErrorCode::DimensionMismatch, "frame " + std::to_string(steps_) + ": visual dimension " +
                                               std::to_string(visual.size()) + ", expected " + std::to_string(expected));
    const KinVec flat = kinematic.flatten();
    if (!visual.allFinite() || !flat.allFinite())
        fail(ErrorCode::NonFinite, "frame " + std::to_string(steps_) + " contains non-finite values");

    OnlineDecision d;
    d.time_index = steps_;

    const auto t0 = clock::now();
    Eigen::VectorXd latent = h.encoder ? ae_encode(*h.encoder, visual) : Eigen::VectorXd(visual);
    const auto t1 = clock::now();
    const KinVec z = h.standardizer.apply(flat);
    const auto t2 = clock::now();

    std::optional<std::pair<std::size_t, std::size_t>> winner;
    const Eigen::VectorXd pv = gmm_posterior(h.visual_model, latent);
    Eigen::Index v = 0;
    if (pv.maxCoeff(&v) > cfg_.posterior_floor) {
        const auto vi = static_cast<std::size_t>(v);
        if (vi < h.kinematic_models.size() && h.kinematic_models[vi]) {
            const Eigen::VectorXd pk = gmm_posterior(*h.kinematic_models[vi], z);
            Eigen::Index k = 0;
            if (pk.maxCoeff(&k) > cfg_.posterior_floor) {
                const SubCluster* s = h.find(vi, static_cast<std::size_t>(k));
                if (s && !s->pruned && s->label) winner.emplace(vi, static_cast<std::size_t>(k));
            }
        }
    }
    const auto t3 = clock::now();

    if (winner && run_cluster_ == winner) {
        ++run_length_;
    } else {
        run_cluster_ = winner;
        run_length_ = winner ? 1 : 0;
    }
    if (winner) d.candidate_label = h.find(winner->first, winner->second)->label;

    if (winner && run_length_ == cfg_.hysteresis) {
        const std::string& label = *d.candidate_label;
        const auto idx = h.canonical_index(label);
        const bool in_order = idx && (!last_index_ || *idx > *last_index_) &&
                              *idx <= (last_index_ ? *last_index_ + 1 : 0) + cfg_.max_skip;
        if (in_order || cfg_.out_of_order_policy == OutOfOrderPolicy::EmitWithFlag) {
            d.transition_event = label;
            d.out_of_order = !in_order;
            if (in_order) {
                last_index_ = idx;
                segment_label_ = "S" + std::to_string(*idx + 2);
                events_.push_back({steps_, label});
            }
            if (auto it = directives_.find(label); it != directives_.end() && it->second) d.directive = it->second;
        }
    }
    emit_buffer_.clear();
    if (d.directive) emit_buffer_ = directive_record(*d.directive);
    const auto t5 = clock::now();

    d.segment_label = segment_label_;
    d.stage_latencies_us = {micros(t0, t1), micros(t1, t2), micros(t2, t3), micros(t3, t5)};
    for (std::size_t s = 0; s < kStageCount; ++s) latencies_[s].push_back(d.stage_latencies_us[s]);
    ++steps_;
    return d;
}

namespace {

StageStats summarize(std::vector<double> v) {
    StageStats s;
    std::sort(v.begin(), v.end());
    s.min = v.front();
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    const auto rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(v.size())));
    s.p99 = v[std::max<std::size_t>(rank, 1) - 1];
    return s;
}

}  // namespace

LatencySnapshot SegmenterSession::latency_snapshot() const {
    if (steps_ == 0) fail(ErrorCode::NoSamples, "no steps taken yet");
    LatencySnapshot snap;
    snap.steps = steps_;
    snap.encode_excluded = !h_->encoder;
    std::vector<double> total(steps_, 0.0);
    for (std::size_t s = 0; s < kStageCount; ++s) {
        snap.stages[s] = summarize(latencies_[s]);
        if (snap.encode_excluded && s == static_cast<std::size_t>(Stage::FeatureEncode)) continue;
        for (std::size_t i = 0; i < steps_; ++i) total[i] += latencies_[s][i];
    }
    snap.total = summarize(std::move(total));
    return snap;
}

SegmentTrack segment_demonstration(const TransitionHierarchy& h, const Demonstration& demo, const OnlineConfig& cfg) {
    std::shared_ptr<const TransitionHierarchy> view(&h, [](const TransitionHierarchy*) {});
    SegmenterSession session(view, empty_directives(h), cfg);
    SegmentTrack track;
    track.labels.reserve(demo.states.size());
    for (const auto& s : demo.states) {
        const auto d = session.step(s.visual, s.kinematic);
        track.labels.push_back(d.segment_label);
    }
    track.transition_events = session.events();
    for (auto& e : track.transition_events) e.time_index = demo.states[e.time_index].time_index;
    return track;
}

}  // namespace tscseg
