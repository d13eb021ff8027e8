#include "tscseg/hier_tsc.hpp"

#include "tscseg/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace tscseg {

void TscConfig::validate() const {
    if (dynamics_window < 2) fail(ErrorCode::InvalidArgument, "dynamics_window must be at least 2");
    if (!(min_demo_fraction >= 0.0 && min_demo_fraction <= 1.0))
        fail(ErrorCode::InvalidArgument, "min_demo_fraction must be in [0, 1]");
    if (visual_k_min < 2 || visual_k_min > visual_k_max)
        fail(ErrorCode::InvalidArgument, "visual k range must satisfy 2 <= min <= max");
    if (kinematic_k_min < 1 || kinematic_k_min > kinematic_k_max)
        fail(ErrorCode::InvalidArgument, "kinematic k range must satisfy 1 <= min <= max");
    if (threshold_sigmas < 0.0 || residual_floor < 0.0) fail(ErrorCode::InvalidArgument, "thresholds must be >= 0");
    if (all_states_stride == 0) fail(ErrorCode::InvalidArgument, "all_states_stride must be positive");
    if (relative_regularization < 0.0) fail(ErrorCode::InvalidArgument, "relative_regularization must be >= 0");
    if (canonical_order.empty()) fail(ErrorCode::InvalidArgument, "canonical order is empty");
    visual_gmm.validate();
    kinematic_gmm.validate();
}

std::vector<double> prediction_residuals(const Demonstration& demo, const TscConfig& cfg,
                                         const Standardizer& standardizer) {
    const std::size_t w = cfg.dynamics_window;
    const std::size_t T = demo.states.size();
    if (T <= 2 * w)
        fail(ErrorCode::TooShort, "demo '" + demo.id + "' has " + std::to_string(T) + " frames; needs more than " +
                                      std::to_string(2 * w));

    // Least-squares line through the window at times 0..w-1, evaluated at w,
    // is a fixed linear combination of the window samples.
    const double tbar = (static_cast<double>(w) - 1.0) / 2.0;
    double stt = 0.0;
    for (std::size_t j = 0; j < w; ++j) stt += (static_cast<double>(j) - tbar) * (static_cast<double>(j) - tbar);
    std::vector<double> coeff(w);
    for (std::size_t j = 0; j < w; ++j)
        coeff[j] = 1.0 / static_cast<double>(w) +
                   (static_cast<double>(w) - tbar) * (static_cast<double>(j) - tbar) / stt;

    std::vector<KinVec> z(T);
    for (std::size_t t = 0; t < T; ++t) z[t] = standardizer.apply(demo.states[t].kinematic);

    std::vector<double> r(T, 0.0);
    for (std::size_t t = w; t < T; ++t) {
        KinVec pred = KinVec::Zero();
        for (std::size_t j = 0; j < w; ++j) pred += coeff[j] * z[t - w + j];
        r[t] = (z[t] - pred).norm();
    }
    return r;
}

double candidate_threshold(std::span<const double> residuals, const TscConfig& cfg) {
    if (cfg.threshold_mode == ThresholdMode::Fixed) return std::max(cfg.fixed_threshold, cfg.residual_floor);
    const std::size_t w = cfg.dynamics_window;
    if (residuals.size() <= w) return cfg.residual_floor;
    const auto active = residuals.subspan(w);
    const double n = static_cast<double>(active.size());
    const double mean = std::accumulate(active.begin(), active.end(), 0.0) / n;
    double var = 0.0;
    for (double r : active) var += (r - mean) * (r - mean);
    const double std = std::sqrt(var / n);
    return std::max(mean + cfg.threshold_sigmas * std, cfg.residual_floor);
}

namespace {

TransitionCandidate make_candidate(const Demonstration& demo, std::size_t t, double residual,
                                   const Standardizer& standardizer, const AutoencoderModel* encoder) {
    TransitionCandidate c;
    c.demo_id = demo.id;
    c.time_index = demo.states[t].time_index;
    c.normalized_time = static_cast<double>(t) / static_cast<double>(demo.states.size());
    c.residual = residual;
    c.kinematic = standardizer.apply(demo.states[t].kinematic);
    c.visual = encoder ? ae_encode(*encoder, demo.states[t].visual) : demo.states[t].visual;
    return c;
}

}  // namespace

std::vector<TransitionCandidate> detect_transition_candidates(const Demonstration& demo, const TscConfig& cfg,
                                                              const Standardizer& standardizer,
                                                              const AutoencoderModel* encoder) {
    cfg.validate();
    const auto r = prediction_residuals(demo, cfg, standardizer);
    const double threshold = candidate_threshold(r, cfg);

    std::vector<TransitionCandidate> out;
    std::optional<std::size_t> group_best;
    std::size_t group_last = 0;
    auto flush = [&] {
        if (group_best) out.push_back(make_candidate(demo, *group_best, r[*group_best], standardizer, encoder));
        group_best.reset();
    };
    for (std::size_t t = cfg.dynamics_window; t < r.size(); ++t) {
        if (!(r[t] > threshold)) continue;
        if (group_best && t - group_last > cfg.merge_window) flush();
        if (!group_best || r[t] > r[*group_best]) group_best = t;
        group_last = t;
    }
    flush();
    return out;
}

std::vector<TransitionCandidate> detect_transition_candidates(const Demonstration& demo, const TscConfig& cfg) {
    const Demonstration* one = &demo;
    return detect_transition_candidates(demo, cfg, standardize_fit(std::span<const Demonstration>(one, 1)));
}

std::vector<TransitionCandidate> all_state_candidates(const Demonstration& demo, const TscConfig& cfg,
                                                      const Standardizer& standardizer,
                                                      const AutoencoderModel* encoder) {
    std::vector<TransitionCandidate> out;
    for (std::size_t t = 0; t < demo.states.size(); t += cfg.all_states_stride)
        out.push_back(make_candidate(demo, t, 0.0, standardizer, encoder));
    return out;
}

const SubCluster* TransitionHierarchy::find(std::size_t visual, std::size_t kinematic) const {
    if (visual >= sub_clusters.size() || kinematic >= sub_clusters[visual].size()) return nullptr;
    return &sub_clusters[visual][kinematic];
}

std::vector<std::string> TransitionHierarchy::labels() const {
    std::vector<std::pair<std::size_t, std::string>> ordered;
    for (const auto& row : sub_clusters)
        for (const auto& s : row)
            if (!s.pruned && s.label) {
                const auto idx = canonical_index(*s.label);
                ordered.emplace_back(idx ? *idx : canonical_order.size() + ordered.size(), *s.label);
            }
    std::sort(ordered.begin(), ordered.end());
    std::vector<std::string> out;
    for (auto& [i, l] : ordered) out.push_back(l);
    return out;
}

std::optional<std::size_t> TransitionHierarchy::canonical_index(const std::string& label) const {
    for (std::size_t i = 0; i < canonical_order.size(); ++i)
        if (canonical_order[i] == label) return i;
    return std::nullopt;
}

std::pair<std::size_t, std::optional<std::size_t>> hierarchy_assign(const TransitionHierarchy& h,
                                                                    const Eigen::Ref<const Eigen::VectorXd>& visual,
                                                                    const KinVec& kinematic) {
    const std::size_t v = gmm_assign(h.visual_model, visual);
    if (v >= h.kinematic_models.size() || !h.kinematic_models[v]) return {v, std::nullopt};
    return {v, gmm_assign(*h.kinematic_models[v], kinematic)};
}

namespace {

GmmFitConfig level_config(GmmFitConfig cfg, const Eigen::MatrixXd& X, double relative, std::uint64_t seed,
                          std::uint64_t salt) {
    cfg.seed = seed * 1000003ULL + salt;
    if (X.rows() > 1 && relative > 0.0) {
        const Eigen::RowVectorXd mean = X.colwise().mean();
        const double var = (X.rowwise() - mean).squaredNorm() / static_cast<double>(X.rows() * X.cols());
        cfg.covariance_regularization = std::max(cfg.covariance_regularization, relative * var);
    }
    return cfg;
}

}  // namespace

TransitionHierarchy fit_hierarchy(std::span<const TransitionCandidate> candidates, const TscConfig& cfg) {
    cfg.validate();
    std::set<std::string> demo_ids;
    for (const auto& c : candidates) demo_ids.insert(c.demo_id);
    if (demo_ids.size() < 2)
        fail(ErrorCode::TooFewCandidates, "candidates come from " + std::to_string(demo_ids.size()) +
                                              " demonstration(s); at least 2 are required");
    const std::size_t n = candidates.size();
    if (n < cfg.visual_k_min + 1)
        fail(ErrorCode::TooFewCandidates, std::to_string(n) + " candidates; need at least " +
                                              std::to_string(cfg.visual_k_min + 1));
    const auto dv = candidates.front().visual.size();
    Eigen::MatrixXd V(static_cast<Eigen::Index>(n), dv);
    Eigen::MatrixXd K(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kKinematicDim));
    for (std::size_t i = 0; i < n; ++i) {
        if (candidates[i].visual.size() != dv) fail(ErrorCode::DimensionMismatch, "candidate visual dimensions differ");
        V.row(static_cast<Eigen::Index>(i)) = candidates[i].visual.transpose();
        K.row(static_cast<Eigen::Index>(i)) = candidates[i].kinematic.transpose();
    }

    TransitionHierarchy h;
    h.canonical_order = cfg.canonical_order;
    auto& diag = h.diagnostics;
    diag.candidate_count = n;

    const std::size_t vk_max = std::min(cfg.visual_k_max, n - 1);
    auto visual = select_k(V, cfg.visual_k_min, vk_max, level_config(cfg.visual_gmm, V, cfg.relative_regularization, cfg.seed, 1));
    diag.visual_curve = visual.curve;
    diag.visual_score = visual.score;
    if (visual.score < cfg.split_silhouette) {
        diag.weak_visual_structure = true;
        diag.messages.push_back("visual level: best silhouette " + std::to_string(visual.score) + " at k=" +
                                std::to_string(visual.k) + " is below " + std::to_string(cfg.split_silhouette));
    }
    h.visual_model = std::move(visual.model);
    const std::size_t nv = h.visual_model.num_components();
    const auto vlabels = gmm_assign_all(h.visual_model, V);

    h.kinematic_models.resize(nv);
    h.sub_clusters.resize(nv);
    for (std::size_t v = 0; v < nv; ++v) {
        std::vector<Eigen::Index> rows;
        for (std::size_t i = 0; i < n; ++i)
            if (vlabels[i] == v) rows.push_back(static_cast<Eigen::Index>(i));
        if (rows.empty()) {
            diag.messages.push_back("visual cluster " + std::to_string(v) + " received no candidates");
            continue;
        }
        const Eigen::MatrixXd Kv = K(rows, Eigen::all);
        const auto m = static_cast<std::size_t>(Kv.rows());
        const auto kcfg = level_config(cfg.kinematic_gmm, Kv, cfg.relative_regularization, cfg.seed, 100 + v);
        std::optional<GmmModel> model;
        if (m >= 3) {
            const std::size_t lo = std::max<std::size_t>(2, cfg.kinematic_k_min);
            const std::size_t hi = std::min(cfg.kinematic_k_max, m - 1);
            if (lo <= hi) {
                auto sel = select_k(Kv, lo, hi, kcfg);
                diag.kinematic_curves[v] = sel.curve;
                if (cfg.kinematic_k_min >= 2 || sel.score >= cfg.split_silhouette) model = std::move(sel.model);
            }
        }
        if (!model) model = gmm_fit(Kv, 1, kcfg);
        h.kinematic_models[v] = std::move(model);
        h.sub_clusters[v].resize(h.kinematic_models[v]->num_components());
        for (std::size_t k = 0; k < h.sub_clusters[v].size(); ++k) {
            h.sub_clusters[v][k].visual = v;
            h.sub_clusters[v][k].kinematic = k;
        }
    }

    std::vector<std::vector<std::set<std::string>>> demos(nv);
    std::vector<std::vector<double>> time_sum(nv);
    for (std::size_t v = 0; v < nv; ++v) {
        demos[v].resize(h.sub_clusters[v].size());
        time_sum[v].assign(h.sub_clusters[v].size(), 0.0);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t v = vlabels[i];
        const std::size_t k = gmm_assign(*h.kinematic_models[v], candidates[i].kinematic);
        auto& s = h.sub_clusters[v][k];
        ++s.members;
        demos[v][k].insert(candidates[i].demo_id);
        time_sum[v][k] += candidates[i].normalized_time;
    }
    for (std::size_t v = 0; v < nv; ++v) {
        for (std::size_t k = 0; k < h.sub_clusters[v].size(); ++k) {
            auto& s = h.sub_clusters[v][k];
            s.demos.assign(demos[v][k].begin(), demos[v][k].end());
            s.mean_time = s.members > 0 ? time_sum[v][k] / static_cast<double>(s.members) : 0.0;
        }
    }
    return h;
}

TransitionHierarchy prune_clusters(TransitionHierarchy h, std::size_t num_demos, const TscConfig& cfg) {
    const auto required = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(cfg.min_demo_fraction * static_cast<double>(num_demos) - 1e-9)));
    h.diagnostics.required_demos = required;
    std::size_t survivors = 0, pruned = 0;
    for (auto& row : h.sub_clusters) {
        for (auto& s : row) {
            s.pruned = s.members == 0 || s.demos.size() < required;
            if (s.pruned) {
                ++pruned;
                s.label.reset();
                s.extra = false;
                h.diagnostics.messages.push_back("pruned sub-cluster (" + std::to_string(s.visual) + "," +
                                                 std::to_string(s.kinematic) + "): " + std::to_string(s.members) +
                                                 " candidates from " + std::to_string(s.demos.size()) + " demos, " +
                                                 std::to_string(required) + " required");
            } else {
                ++survivors;
            }
        }
    }
    h.diagnostics.pruned_count = pruned;
    if (survivors == 0)
        fail(ErrorCode::AllPruned, "every sub-cluster covers fewer than " + std::to_string(required) +
                                       " demonstrations");
    return h;
}

TransitionHierarchy assign_transition_labels(TransitionHierarchy h) {
    std::vector<SubCluster*> survivors;
    for (auto& row : h.sub_clusters)
        for (auto& s : row)
            if (!s.pruned) survivors.push_back(&s);
    if (survivors.empty()) fail(ErrorCode::NoSurvivors, "no sub-cluster survived pruning");
    std::stable_sort(survivors.begin(), survivors.end(), [](const SubCluster* a, const SubCluster* b) {
        if (a->mean_time != b->mean_time) return a->mean_time < b->mean_time;
        return std::pair(a->visual, a->kinematic) < std::pair(b->visual, b->kinematic);
    });
    const std::size_t canon = h.canonical_order.size();
    for (std::size_t i = 0; i < survivors.size(); ++i) {
        if (i < canon) {
            survivors[i]->label = h.canonical_order[i];
            survivors[i]->extra = false;
        } else {
            survivors[i]->label = "T" + std::to_string(i + 1);
            survivors[i]->extra = true;
        }
    }
    h.diagnostics.count_mismatch = survivors.size() != canon;
    if (h.diagnostics.count_mismatch) {
        h.diagnostics.messages.push_back(std::to_string(survivors.size()) + " surviving sub-clusters for " +
                                         std::to_string(canon) + " canonical transitions" +
                                         (survivors.size() > canon ? "; extras flagged" : "; labeled as a prefix"));
    }
    return h;
}

}  // namespace tscseg
