#pragma once

#include "tscseg/core.hpp"
#include "tscseg/hier_tsc.hpp"
#include "tscseg/online.hpp"

#include <json.hpp>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tscseg {

inline constexpr std::size_t kDefaultMatchWindow = 15;

/// Fraction of frames whose labels agree.
double frame_accuracy(const SegmentTrack& pred, const SegmentTrack& truth);

struct MatchResult {
    std::size_t predicted = 0;
    std::size_t truth = 0;
    std::size_t matched = 0;
    double precision = 1.0;  // 1 when nothing was predicted
    double recall = 1.0;     // 1 when nothing was expected
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (pred index, truth index)
    std::vector<long> timing_errors;                         // pred - truth, per pair

    bool operator==(const MatchResult&) const = default;
};

/// Greedy one-to-one matching, nearest pairs first, same label, |dt| <= window.
MatchResult match_transitions(std::span<const TransitionEvent> pred, std::span<const TransitionEvent> truth,
                              std::size_t window = kDefaultMatchWindow);

struct TransitionStats {
    std::string label;
    std::size_t predicted = 0;
    std::size_t truth = 0;
    std::size_t matched = 0;
    double precision = 1.0;
    double recall = 1.0;

    bool operator==(const TransitionStats&) const = default;
};

struct LatencyRow {
    std::string stage;
    double min_us = 0.0;
    double mean_us = 0.0;
    double p99_us = 0.0;

    bool operator==(const LatencyRow&) const = default;
};

struct LatencyTable {
    std::vector<LatencyRow> rows;  // four stages, then "total"
    std::size_t steps = 0;
    bool encode_excluded = false;

    const LatencyRow& row(std::string_view stage) const;
    std::string to_text() const;
    bool operator==(const LatencyTable&) const = default;
};

struct EvalReport {
    std::vector<std::string> demo_ids;
    std::vector<double> accuracies;
    double accuracy_mean = 0.0;
    double accuracy_std = 0.0;  // population
    std::size_t window = kDefaultMatchWindow;
    std::size_t predicted = 0;
    std::size_t truth = 0;
    std::size_t matched = 0;
    double precision = 1.0;
    double recall = 1.0;
    std::vector<TransitionStats> per_transition;
    std::vector<long> timing_errors;
    std::size_t order_violations = 0;
    std::optional<LatencyTable> latency;
    nlohmann::json config;

    bool operator==(const EvalReport&) const = default;
};

/// Segments every annotated demonstration and scores it against its
/// annotations. Demonstrations are processed in parallel.
EvalReport evaluate(const TransitionHierarchy& h, std::span<const Demonstration> demos, const OnlineConfig& cfg = {},
                    std::size_t window = kDefaultMatchWindow);

/// Streams every frame of every demo `repetitions` times through fresh
/// sessions on the calling thread and pools the per-step stage latencies.
LatencyTable run_benchmark(const TransitionHierarchy& h, std::span<const Demonstration> demos, std::size_t repetitions,
                           const OnlineConfig& cfg = {});

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LatencyTable& t);
LatencyTable latency_table_from_json(const nlohmann::json& j);

}  // namespace tscseg
