#include "tscseg/eval.hpp"

#include "tscseg/error.hpp"
#include "tscseg/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <tuple>

namespace tscseg {

double frame_accuracy(const SegmentTrack& pred, const SegmentTrack& truth) {
    if (pred.labels.size() != truth.labels.size())
        fail(ErrorCode::LengthMismatch, "prediction has " + std::to_string(pred.labels.size()) + " frames, truth has " +
                                            std::to_string(truth.labels.size()));
    if (truth.labels.empty()) return 1.0;
    std::size_t same = 0;
    for (std::size_t i = 0; i < pred.labels.size(); ++i) same += pred.labels[i] == truth.labels[i];
    return static_cast<double>(same) / static_cast<double>(truth.labels.size());
}

MatchResult match_transitions(std::span<const TransitionEvent> pred, std::span<const TransitionEvent> truth,
                              std::size_t window) {
    std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> options;  // (|dt|, truth, pred)
    for (std::size_t p = 0; p < pred.size(); ++p) {
        for (std::size_t t = 0; t < truth.size(); ++t) {
            if (pred[p].label != truth[t].label) continue;
            const std::size_t dt = pred[p].time_index > truth[t].time_index ? pred[p].time_index - truth[t].time_index
                                                                            : truth[t].time_index - pred[p].time_index;
            if (dt <= window) options.emplace_back(dt, t, p);
        }
    }
    std::sort(options.begin(), options.end());
    std::vector<bool> pred_used(pred.size()), truth_used(truth.size());
    MatchResult r;
    r.predicted = pred.size();
    r.truth = truth.size();
    for (const auto& [dt, t, p] : options) {
        if (pred_used[p] || truth_used[t]) continue;
        pred_used[p] = truth_used[t] = true;
        r.pairs.emplace_back(p, t);
    }
    std::sort(r.pairs.begin(), r.pairs.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
    for (const auto& [p, t] : r.pairs)
        r.timing_errors.push_back(static_cast<long>(pred[p].time_index) - static_cast<long>(truth[t].time_index));
    r.matched = r.pairs.size();
    if (r.predicted > 0) r.precision = static_cast<double>(r.matched) / static_cast<double>(r.predicted);
    if (r.truth > 0) r.recall = static_cast<double>(r.matched) / static_cast<double>(r.truth);
    return r;
}

const LatencyRow& LatencyTable::row(std::string_view stage) const {
    for (const auto& r : rows)
        if (r.stage == stage) return r;
    fail(ErrorCode::InvalidArgument, "no latency row '" + std::string(stage) + "'");
}

std::string LatencyTable::to_text() const {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "%-28s %12s %12s %12s\n", "stage", "min [ms]", "mean [ms]", "p99 [ms]");
    out += line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-28s %12.4f %12.4f %12.4f\n", r.stage.c_str(), r.min_us / 1000.0,
                      r.mean_us / 1000.0, r.p99_us / 1000.0);
        out += line;
    }
    std::snprintf(line, sizeof line, "steps: %zu%s\n", steps, encode_excluded ? " (total excludes feature_encode)" : "");
    out += line;
    return out;
}

namespace {

LatencyRow summarize(std::string stage, std::vector<double> v) {
    LatencyRow r;
    r.stage = std::move(stage);
    std::sort(v.begin(), v.end());
    r.min_us = v.front();
    r.mean_us = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    const auto rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(v.size())));
    r.p99_us = v[std::max<std::size_t>(rank, 1) - 1];
    return r;
}

struct DemoOutcome {
    double accuracy = 0.0;
    MatchResult match;
    std::vector<TransitionEvent> pred;
    std::vector<TransitionEvent> truth;
    std::size_t order_violations = 0;
};

}  // namespace

EvalReport evaluate(const TransitionHierarchy& h, std::span<const Demonstration> demos, const OnlineConfig& cfg,
                    std::size_t window) {
    if (demos.empty()) fail(ErrorCode::EmptyDataset, "nothing to evaluate");
    for (const auto& d : demos)
        if (!d.annotations) fail(ErrorCode::InvalidArgument, "demo '" + d.id + "' has no annotations");

    std::vector<DemoOutcome> outcomes(demos.size());
    parallel_for(demos.size(), [&](std::size_t i) {
        const auto track = segment_demonstration(h, demos[i], cfg);
        auto& o = outcomes[i];
        o.accuracy = frame_accuracy(track, *demos[i].annotations);
        o.pred = track.transition_events;
        o.truth = demos[i].annotations->transition_events;
        o.match = match_transitions(o.pred, o.truth, window);
        std::optional<std::size_t> last;
        for (const auto& e : o.pred) {
            const auto idx = h.canonical_index(e.label);
            if (!idx || (last && *idx <= *last)) {
                ++o.order_violations;
                continue;
            }
            last = idx;
        }
    });

    EvalReport r;
    r.window = window;
    std::map<std::string, TransitionStats> per;
    for (std::size_t i = 0; i < demos.size(); ++i) {
        const auto& o = outcomes[i];
        r.demo_ids.push_back(demos[i].id);
        r.accuracies.push_back(o.accuracy);
        r.predicted += o.match.predicted;
        r.truth += o.match.truth;
        r.matched += o.match.matched;
        r.order_violations += o.order_violations;
        r.timing_errors.insert(r.timing_errors.end(), o.match.timing_errors.begin(), o.match.timing_errors.end());
        for (const auto& e : o.pred) ++per[e.label].predicted;
        for (const auto& e : o.truth) ++per[e.label].truth;
        for (const auto& [p, t] : o.match.pairs) ++per[o.truth[t].label].matched;
    }
    const double n = static_cast<double>(r.accuracies.size());
    r.accuracy_mean = std::accumulate(r.accuracies.begin(), r.accuracies.end(), 0.0) / n;
    double var = 0.0;
    for (double a : r.accuracies) var += (a - r.accuracy_mean) * (a - r.accuracy_mean);
    r.accuracy_std = std::sqrt(var / n);
    if (r.predicted > 0) r.precision = static_cast<double>(r.matched) / static_cast<double>(r.predicted);
    if (r.truth > 0) r.recall = static_cast<double>(r.matched) / static_cast<double>(r.truth);
    for (auto& [label, s] : per) {
        s.label = label;
        if (s.predicted > 0) s.precision = static_cast<double>(s.matched) / static_cast<double>(s.predicted);
        if (s.truth > 0) s.recall = static_cast<double>(s.matched) / static_cast<double>(s.truth);
        r.per_transition.push_back(s);
    }
    std::sort(r.per_transition.begin(), r.per_transition.end(), [&](const auto& a, const auto& b) {
        const auto ia = h.canonical_index(a.label), ib = h.canonical_index(b.label);
        const auto ka = ia ? *ia : h.canonical_order.size(), kb = ib ? *ib : h.canonical_order.size();
        return std::tie(ka, a.label) < std::tie(kb, b.label);
    });
    r.config = {{"hysteresis", cfg.hysteresis},
                {"posterior_floor", cfg.posterior_floor},
                {"out_of_order_policy", cfg.out_of_order_policy == OutOfOrderPolicy::Suppress ? "suppress" : "emit_with_flag"},
                {"max_skip", cfg.max_skip},
                {"window", window}};
    return r;
}

LatencyTable run_benchmark(const TransitionHierarchy& h, std::span<const Demonstration> demos, std::size_t repetitions,
                           const OnlineConfig& cfg) {
    if (demos.empty() || repetitions == 0) fail(ErrorCode::NoSamples, "benchmark needs at least one demo and repetition");
    std::shared_ptr<const TransitionHierarchy> view(&h, [](const TransitionHierarchy*) {});
    std::array<std::vector<double>, kStageCount> samples;
    std::vector<double> total;
    const bool bypass = !h.encoder;
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
        for (const auto& demo : demos) {
            SegmenterSession session(view, empty_directives(h), cfg);
            for (const auto& s : demo.states) {
                const auto d = session.step(s.visual, s.kinematic);
                double sum = 0.0;
                for (std::size_t k = 0; k < kStageCount; ++k) {
                    samples[k].push_back(d.stage_latencies_us[k]);
                    if (!(bypass && k == static_cast<std::size_t>(Stage::FeatureEncode))) sum += d.stage_latencies_us[k];
                }
                total.push_back(sum);
            }
        }
    }
    if (total.empty()) fail(ErrorCode::NoSamples, "demonstrations contain no frames");
    LatencyTable t;
    t.steps = total.size();
    t.encode_excluded = bypass;
    for (std::size_t k = 0; k < kStageCount; ++k)
        t.rows.push_back(summarize(std::string(to_string(static_cast<Stage>(k))), std::move(samples[k])));
    t.rows.push_back(summarize("total", std::move(total)));
    return t;
}

nlohmann::json to_json(const LatencyTable& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : t.rows)
        rows.push_back({{"stage", r.stage}, {"min_us", r.min_us}, {"mean_us", r.mean_us}, {"p99_us", r.p99_us}});
    return {{"rows", rows}, {"steps", t.steps}, {"encode_excluded", t.encode_excluded}};
}

LatencyTable latency_table_from_json(const nlohmann::json& j) {
    LatencyTable t;
    for (const auto& r : j.at("rows"))
        t.rows.push_back({r.at("stage").get<std::string>(), r.at("min_us").get<double>(), r.at("mean_us").get<double>(),
                          r.at("p99_us").get<double>()});
    t.steps = j.at("steps").get<std::size_t>();
    t.encode_excluded = j.at("encode_excluded").get<bool>();
    return t;
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& s : r.per_transition)
        per.push_back({{"label", s.label},
                       {"predicted", s.predicted},
                       {"truth", s.truth},
                       {"matched", s.matched},
                       {"precision", s.precision},
                       {"recall", s.recall}});
    nlohmann::json j = {{"demo_ids", r.demo_ids},
                        {"accuracies", r.accuracies},
                        {"frame_accuracy", {{"mean", r.accuracy_mean}, {"std", r.accuracy_std}}},
                        {"window", r.window},
                        {"events",
                         {{"predicted", r.predicted},
                          {"truth", r.truth},
                          {"matched", r.matched},
                          {"precision", r.precision},
                          {"recall", r.recall}}},
                        {"per_transition", per},
                        {"timing_errors", r.timing_errors},
                        {"order_violations", r.order_violations},
                        {"config", r.config}};
    j["latency"] = r.latency ? to_json(*r.latency) : nlohmann::json(nullptr);
    return j;
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
    try {
        EvalReport r;
        r.demo_ids = j.at("demo_ids").get<std::vector<std::string>>();
        r.accuracies = j.at("accuracies").get<std::vector<double>>();
        r.accuracy_mean = j.at("frame_accuracy").at("mean").get<double>();
        r.accuracy_std = j.at("frame_accuracy").at("std").get<double>();
        r.window = j.at("window").get<std::size_t>();
        const auto& e = j.at("events");
        r.predicted = e.at("predicted").get<std::size_t>();
        r.truth = e.at("truth").get<std::size_t>();
        r.matched = e.at("matched").get<std::size_t>();
        r.precision = e.at("precision").get<double>();
        r.recall = e.at("recall").get<double>();
        for (const auto& s : j.at("per_transition"))
            r.per_transition.push_back({s.at("label").get<std::string>(), s.at("predicted").get<std::size_t>(),
                                        s.at("truth").get<std::size_t>(), s.at("matched").get<std::size_t>(),
                                        s.at("precision").get<double>(), s.at("recall").get<double>()});
        r.timing_errors = j.at("timing_errors").get<std::vector<long>>();
        r.order_violations = j.at("order_violations").get<std::size_t>();
        if (!j.at("latency").is_null()) r.latency = latency_table_from_json(j.at("latency"));
        r.config = j.at("config");
        return r;
    } catch (const nlohmann::json::exception& ex) {
        fail(ErrorCode::Format, std::string("malformed evaluation report: ") + ex.what());
    }
}

}  // namespace tscseg
