#pragma once

#include "tscseg/hier_tsc.hpp"
#include "tscseg/pipeline.hpp"
#include "tscseg/simgen.hpp"

#include <random>
#include <utility>
#include <vector>

namespace tscseg::testing {

/// Same script as the defaults with a 64-d raw / 16-d latent visual stream.
inline SimConfig small_sim_config(std::uint64_t seed = 0) {
    SimConfig c;
    c.seed = seed;
    c.latent_dim = 16;
    c.raw_dim = 64;
    return c;
}

inline TrainConfig small_train_config(std::uint64_t seed = 0) {
    TrainConfig c;
    c.seed = seed;
    c.autoencoder.input_dim = 64;
    c.autoencoder.latent_dim = 8;
    c.autoencoder.encoder_hidden = {32};
    c.autoencoder.decoder_hidden = {32};
    c.autoencoder.max_epochs = 40;
    c.autoencoder.learning_rate = 3e-3;
    c.ae_max_train_rows = 1024;
    return c;
}

struct SmallModel {
    SimDataset data;
    ModelBundle bundle;
};

/// Trained once per test binary.
inline const SmallModel& small_model() {
    static const SmallModel m = [] {
        SmallModel s;
        s.data = generate_dataset(small_sim_config());
        const auto train = s.data.train();
        s.bundle = train_model(train, small_train_config());
        return s;
    }();
    return m;
}

struct Synthetic {
    std::vector<TransitionCandidate> candidates;
    std::vector<std::pair<std::size_t, std::size_t>> truth;  // (visual mode, kinematic mode)
    std::vector<Eigen::VectorXd> visual_centers;
    std::vector<std::vector<KinVec>> kinematic_centers;
};

// Candidates from `visual_modes` visual modes, each with `kin_modes` kinematic
// modes, one candidate per demo per mode pair. Mode pair (v, k) sits at
// normalized time (v * kin_modes + k + 0.5) / (visual_modes * kin_modes).
inline Synthetic synthetic_candidates(std::size_t visual_modes, std::size_t kin_modes, std::size_t demos, std::uint64_t seed,
                               double visual_spread = 20.0, double kin_spread = 8.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    const Eigen::Index dv = 6;
    std::vector<Eigen::VectorXd> vcenters;
    for (std::size_t v = 0; v < visual_modes; ++v) {
        Eigen::VectorXd c = Eigen::VectorXd::Zero(dv);
        c(static_cast<Eigen::Index>(v % dv)) = visual_spread * (1.0 + static_cast<double>(v / dv));
        vcenters.push_back(c);
    }
    std::vector<std::vector<KinVec>> kcenters(visual_modes);
    for (std::size_t v = 0; v < visual_modes; ++v)
        for (std::size_t k = 0; k < kin_modes; ++k) {
            KinVec c = KinVec::Zero();
            c(static_cast<Eigen::Index>((v + 3 * k) % kKinematicDim)) = kin_spread * (k % 2 == 0 ? 1.0 : -1.0);
            kcenters[v].push_back(c);
        }
    Synthetic s;
    s.visual_centers = vcenters;
    s.kinematic_centers = kcenters;
    const double slots = static_cast<double>(visual_modes * kin_modes);
    for (std::size_t d = 0; d < demos; ++d)
        for (std::size_t v = 0; v < visual_modes; ++v)
            for (std::size_t k = 0; k < kin_modes; ++k) {
                TransitionCandidate c;
                c.demo_id = "d" + std::to_string(d);
                c.normalized_time = (static_cast<double>(v * kin_modes + k) + 0.5) / slots + 0.01 * n(rng);
                c.time_index = static_cast<std::size_t>(c.normalized_time * 300.0);
                c.visual = vcenters[v];
                for (Eigen::Index j = 0; j < dv; ++j) c.visual(j) += 0.5 * n(rng);
                c.kinematic = kcenters[v][k];
                for (Eigen::Index j = 0; j < c.kinematic.size(); ++j) c.kinematic(j) += 0.5 * n(rng);
                s.candidates.push_back(c);
                s.truth.emplace_back(v, k);
            }
    return s;
}

}  // namespace tscseg::testing
