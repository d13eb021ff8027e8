#pragma once

#include "tscseg/autoencoder.hpp"
#include "tscseg/hier_tsc.hpp"
#include "tscseg/online.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace tscseg {

struct TrainConfig {
    AutoencoderConfig autoencoder;
    TscConfig tsc;
    OnlineConfig online;
    /// Frames drawn (without replacement, seeded) to train the autoencoder;
    /// 0 uses every frame.
    std::size_t ae_max_train_rows = 2048;
    std::size_t ae_search_trials = 0;
    /// false clusters raw visual vectors directly (no encoder in the loop).
    bool use_encoder = true;
    std::uint64_t seed = 0;

    void validate() const;
};

struct ModelBundle {
    static constexpr int kFormatVersion = 1;

    int format_version = kFormatVersion;
    TransitionHierarchy hierarchy;  // owns the encoder and the standardizer
    TrainConfig config;
    std::string dataset_fingerprint;
    std::vector<std::string> train_ids;
};

using TrainLog = std::function<void(const std::string&)>;

/// Candidates of every demonstration, detected in parallel.
std::vector<std::vector<TransitionCandidate>> detect_all(std::span<const Demonstration> demos, const TscConfig& cfg,
                                                         const Standardizer& standardizer,
                                                         const AutoencoderModel* encoder);

/// Autoencoder, standardizer, candidates, hierarchy fit, pruning, labels.
/// Errors are rethrown with the failing stage prefixed to the message.
ModelBundle train_model(std::span<const Demonstration> train, const TrainConfig& cfg, const TrainLog& log = {});

/// FNV-1a 64 over ids and numeric content, as 16 hex digits.
std::string dataset_fingerprint(std::span<const Demonstration> demos);

}  // namespace tscseg
