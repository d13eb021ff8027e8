#include "tscseg/pipeline.hpp"

#include "tscseg/error.hpp"
#include "tscseg/parallel.hpp"

#include <cstdio>
#include <cstring>
#include <numeric>
#include <random>

namespace tscseg {

void TrainConfig::validate() const {
    autoencoder.validate();
    tsc.validate();
    online.validate();
}

std::vector<std::vector<TransitionCandidate>> detect_all(std::span<const Demonstration> demos, const TscConfig& cfg,
                                                         const Standardizer& standardizer,
                                                         const AutoencoderModel* encoder) {
    std::vector<std::vector<TransitionCandidate>> out(demos.size());
    parallel_for(demos.size(), [&](std::size_t i) {
        out[i] = cfg.all_states ? all_state_candidates(demos[i], cfg, standardizer, encoder)
                                : detect_transition_candidates(demos[i], cfg, standardizer, encoder);
    });
    return out;
}

namespace {

template <typename Fn>
auto staged(const char* stage, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const Error& e) {
        throw e.with_context(stage);
    }
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Eigen::MatrixXd sample_visual_rows(std::span<const Demonstration> demos, std::size_t max_rows, std::uint64_t seed) {
    std::vector<std::pair<std::size_t, std::size_t>> index;
    for (std::size_t d = 0; d < demos.size(); ++d)
        for (std::size_t t = 0; t < demos[d].states.size(); ++t) index.emplace_back(d, t);
    if (max_rows > 0 && max_rows < index.size()) {
        std::mt19937_64 rng(seed);
        for (std::size_t i = 0; i < max_rows; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, index.size() - 1);
            std::swap(index[i], index[pick(rng)]);
        }
        index.resize(max_rows);
    }
    const auto dim = static_cast<Eigen::Index>(demos.front().visual_dim());
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(index.size()), dim);
    for (std::size_t i = 0; i < index.size(); ++i)
        rows.row(static_cast<Eigen::Index>(i)) = demos[index[i].first].states[index[i].second].visual.transpose();
    return rows;
}

}  // namespace

ModelBundle train_model(std::span<const Demonstration> train, const TrainConfig& cfg_in, const TrainLog& log) {
    auto say = [&](const std::string& s) {
        if (log) log(s);
    };
    TrainConfig cfg = cfg_in;
    if (train.size() < 2) fail(ErrorCode::EmptyDataset, "training needs at least 2 demonstrations");
    const std::size_t raw_dim = train.front().visual_dim();
    for (const auto& d : train)
        if (d.visual_dim() != raw_dim)
            fail(ErrorCode::DimensionMismatch, "demo '" + d.id + "' visual dimension differs from '" + train.front().id + "'");
    cfg.autoencoder.input_dim = raw_dim;
    cfg.validate();

    ModelBundle bundle;
    bundle.config = cfg;
    bundle.dataset_fingerprint = dataset_fingerprint(train);
    for (const auto& d : train) bundle.train_ids.push_back(d.id);

    std::shared_ptr<const AutoencoderModel> encoder;
    if (cfg.use_encoder) {
        encoder = staged("autoencoder", [&] {
            const auto rows = sample_visual_rows(train, cfg.ae_max_train_rows, mix(cfg.seed, 11));
            AutoencoderConfig ac = cfg.autoencoder;
            ac.seed = mix(cfg.seed, ac.seed);
            ac = ae_random_search(rows, ac, cfg.ae_search_trials, mix(cfg.seed, 12));
            auto model = ae_train(rows, ac);
            char buf[128];
            std::snprintf(buf, sizeof buf, "autoencoder: %zu rows, %zu epochs, best validation loss %.6g",
                          static_cast<std::size_t>(rows.rows()), model.training_loss_history.size(),
                          *std::min_element(model.validation_loss_history.begin(), model.validation_loss_history.end()));
            say(buf);
            return std::make_shared<const AutoencoderModel>(std::move(model));
        });
    }

    const Standardizer standardizer = staged("standardize", [&] { return standardize_fit(train); });

    std::vector<TransitionCandidate> pooled = staged("candidates", [&] {
        const auto per_demo = detect_all(train, cfg.tsc, standardizer, encoder.get());
        std::vector<TransitionCandidate> all;
        for (std::size_t i = 0; i < per_demo.size(); ++i) {
            say("candidates: " + train[i].id + " " + std::to_string(per_demo[i].size()));
            all.insert(all.end(), per_demo[i].begin(), per_demo[i].end());
        }
        return all;
    });

    TscConfig tc = cfg.tsc;
    tc.seed = mix(cfg.seed, tc.seed);
    TransitionHierarchy h = staged("hierarchy", [&] { return fit_hierarchy(pooled, tc); });
    h = staged("prune", [&] { return prune_clusters(std::move(h), train.size(), tc); });
    h = staged("label", [&] { return assign_transition_labels(std::move(h)); });
    h.standardizer = standardizer;
    h.encoder = encoder;

    {
        std::string curve = "visual silhouette:";
        for (const auto& [k, s] : h.diagnostics.visual_curve) curve += " k" + std::to_string(k) + "=" + std::to_string(s);
        say(curve);
        for (const auto& [v, c] : h.diagnostics.kinematic_curves) {
            std::string line = "kinematic silhouette (visual " + std::to_string(v) + "):";
            for (const auto& [k, s] : c) line += " k" + std::to_string(k) + "=" + std::to_string(s);
            say(line);
        }
        for (const auto& m : h.diagnostics.messages) say(m);
        const auto labels = h.labels();
        std::string l = "labels:";
        for (const auto& s : labels) l += " " + s;
        say(l);
    }
    bundle.hierarchy = std::move(h);
    return bundle;
}

std::string dataset_fingerprint(std::span<const Demonstration> demos) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    auto feed = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            hash ^= b[i];
            hash *= 0x100000001b3ULL;
        }
    };
    auto feed_u64 = [&](std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        feed(b, 8);
    };
    auto feed_double = [&](double d) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, sizeof bits);
        feed_u64(bits);
    };
    for (const auto& d : demos) {
        feed_u64(d.id.size());
        feed(d.id.data(), d.id.size());
        feed_u64(d.states.size());
        for (const auto& s : d.states) {
            feed_u64(s.time_index);
            const KinVec k = s.kinematic.flatten();
            for (Eigen::Index i = 0; i < k.size(); ++i) feed_double(k(i));
            for (Eigen::Index i = 0; i < s.visual.size(); ++i) feed_double(s.visual(i));
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

}  // namespace tscseg
