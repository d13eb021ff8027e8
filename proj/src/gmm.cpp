#include "tscseg/gmm.hpp"

#include "tscseg/error.hpp"
#include "tscseg/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>

namespace tscseg {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct Params {
    Eigen::VectorXd weights;
    Eigen::MatrixXd means;
    std::vector<Eigen::MatrixXd> covs;
};

struct RunResult {
    std::optional<Params> params;
    double objective = -std::numeric_limits<double>::infinity();
    std::vector<double> history;
};

// Weighted M-step. Returns nullopt when a component has no mass left.
std::optional<Params> m_step(const Eigen::MatrixXd& data, const Eigen::MatrixXd& resp, double eps) {
    const auto n = data.rows();
    const auto d = data.cols();
    const auto k = resp.cols();
    Params p;
    p.weights.resize(k);
    p.means.resize(k, d);
    p.covs.resize(static_cast<std::size_t>(k));
    for (Eigen::Index c = 0; c < k; ++c) {
        const double nk = resp.col(c).sum();
        if (!(nk > 1e-12)) return std::nullopt;
        p.weights(c) = nk / static_cast<double>(n);
        p.means.row(c) = (resp.col(c).transpose() * data) / nk;
        const Eigen::MatrixXd centered = data.rowwise() - p.means.row(c);
        Eigen::MatrixXd cov = centered.transpose() * (centered.array().colwise() * resp.col(c).array()).matrix();
        cov /= nk;
        cov = 0.5 * (cov + cov.transpose());
        cov.diagonal().array() += eps;
        p.covs[static_cast<std::size_t>(c)] = std::move(cov);
    }
    p.weights /= p.weights.sum();
    return p;
}

// Fills log_resp (n x k) with the per-component terms of the smoothed
// objective and returns the objective.
double e_step(const Eigen::MatrixXd& data, const Params& p, double eps, Eigen::MatrixXd& log_resp) {
    const auto n = data.rows();
    const auto d = data.cols();
    const auto k = p.weights.size();
    log_resp.resize(n, k);
    for (Eigen::Index c = 0; c < k; ++c) {
        const Eigen::LLT<Eigen::MatrixXd> llt(p.covs[static_cast<std::size_t>(c)]);
        if (llt.info() != Eigen::Success)
            fail(ErrorCode::DegenerateComponent, "covariance of component " + std::to_string(c) +
                                                     " is not positive definite; increase covariance_regularization");
        const Eigen::MatrixXd& L = llt.matrixLLT();
        const double log_det = 2.0 * L.diagonal().array().log().sum();
        const Eigen::MatrixXd inv_l =
            L.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(d, d));
        const double trace_inv = inv_l.squaredNorm();
        const Eigen::MatrixXd centered = (data.rowwise() - p.means.row(c)).transpose();
        const Eigen::MatrixXd z = L.triangularView<Eigen::Lower>().solve(centered);
        const double base = std::log(p.weights(c)) - 0.5 * (static_cast<double>(d) * kLog2Pi + log_det) -
                            0.5 * eps * trace_inv;
        log_resp.col(c) = (base - 0.5 * z.colwise().squaredNorm().array()).matrix().transpose();
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double lse = log_sum_exp(log_resp.row(i).transpose());
        total += lse;
        log_resp.row(i).array() -= lse;
    }
    return total;
}

std::vector<Eigen::Index> kmeanspp(const Eigen::MatrixXd& data, std::size_t k, std::mt19937_64& rng) {
    const auto n = data.rows();
    std::vector<Eigen::Index> centers;
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    centers.push_back(first(rng));
    Eigen::VectorXd d2 = (data.rowwise() - data.row(centers[0])).rowwise().squaredNorm();
    while (centers.size() < k) {
        const double total = d2.sum();
        if (!(total > 0.0))
            fail(ErrorCode::DegenerateComponent, "data has fewer distinct points than the " + std::to_string(k) +
                                                     " requested components");
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng);
        Eigen::Index pick = n - 1;
        for (Eigen::Index i = 0; i < n; ++i) {
            target -= d2(i);
            if (target < 0.0 && d2(i) > 0.0) {
                pick = i;
                break;
            }
        }
        while (d2(pick) <= 0.0) --pick;
        centers.push_back(pick);
        d2 = d2.cwiseMin((data.rowwise() - data.row(pick)).rowwise().squaredNorm());
    }
    return centers;
}

RunResult run_em(const Eigen::MatrixXd& data, std::size_t k, const GmmFitConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto centers = kmeanspp(data, k, rng);
    const auto n = data.rows();
    Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(k));
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            const double dist = (data.row(i) - data.row(centers[c])).squaredNorm();
            if (dist < best_d) {
                best_d = dist;
                best = static_cast<Eigen::Index>(c);
            }
        }
        resp(i, best) = 1.0;
    }

    RunResult result;
    auto params = m_step(data, resp, cfg.covariance_regularization);
    if (!params) return result;
    Eigen::MatrixXd log_resp;
    for (std::size_t iter = 0; iter < cfg.max_iterations; ++iter) {
        const double objective = e_step(data, *params, cfg.covariance_regularization, log_resp);
        const bool converged = !result.history.empty() &&
                               objective - result.history.back() <= cfg.ll_tolerance * std::abs(result.history.back());
        result.history.push_back(objective);
        result.objective = objective;
        result.params = *params;
        if (converged) break;
        auto next = m_step(data, log_resp.array().exp().matrix(), cfg.covariance_regularization);
        if (!next) break;
        params = std::move(next);
    }
    return result;
}

}  // namespace

void GmmFitConfig::validate() const {
    if (max_iterations == 0) fail(ErrorCode::InvalidArgument, "max_iterations must be positive");
    if (!(ll_tolerance > 0.0)) fail(ErrorCode::InvalidArgument, "ll_tolerance must be positive");
    if (!(covariance_regularization > 0.0)) fail(ErrorCode::InvalidArgument, "covariance_regularization must be positive");
    if (num_restarts == 0) fail(ErrorCode::InvalidArgument, "num_restarts must be positive");
}

GmmModel::GmmModel(Eigen::VectorXd weights, Eigen::MatrixXd means, std::vector<Eigen::MatrixXd> covariances,
                   GmmFitConfig config)
    : weights_(std::move(weights)), means_(std::move(means)), covariances_(std::move(covariances)),
      config_(config) {
    const auto k = weights_.size();
    const auto d = means_.cols();
    if (k == 0) fail(ErrorCode::InvalidArgument, "mixture needs at least one component");
    if (means_.rows() != k || static_cast<Eigen::Index>(covariances_.size()) != k)
        fail(ErrorCode::DimensionMismatch, "mixture parameter counts disagree");
    if ((weights_.array() <= 0.0).any() || std::abs(weights_.sum() - 1.0) > 1e-9)
        fail(ErrorCode::InvalidArgument, "mixture weights must be positive and sum to 1");
    if (!weights_.allFinite() || !means_.allFinite()) fail(ErrorCode::NonFinite, "mixture parameters not finite");
    chol_.reserve(static_cast<std::size_t>(k));
    log_norm_.resize(k);
    for (Eigen::Index c = 0; c < k; ++c) {
        const auto& cov = covariances_[static_cast<std::size_t>(c)];
        if (cov.rows() != d || cov.cols() != d) fail(ErrorCode::DimensionMismatch, "covariance shape mismatch");
        if (!cov.allFinite()) fail(ErrorCode::NonFinite, "covariance not finite");
        if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9)
            fail(ErrorCode::InvalidArgument, "covariance of component " + std::to_string(c) + " is not symmetric");
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success)
            fail(ErrorCode::DegenerateComponent, "covariance of component " + std::to_string(c) +
                                                     " has no Cholesky factor");
        Eigen::MatrixXd L = llt.matrixL();
        log_norm_(c) = std::log(weights_(c)) -
                       0.5 * (static_cast<double>(d) * kLog2Pi + 2.0 * L.diagonal().array().log().sum());
        chol_.push_back(std::move(L));
    }
}

Eigen::VectorXd GmmModel::log_joint(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    if (static_cast<std::size_t>(x.size()) != dim())
        fail(ErrorCode::DimensionMismatch, "expected dimension " + std::to_string(dim()) + ", got " +
                                               std::to_string(x.size()));
    if (!x.allFinite()) fail(ErrorCode::NonFinite, "mixture input not finite");
    Eigen::VectorXd out(weights_.size());
    for (Eigen::Index c = 0; c < weights_.size(); ++c) {
        Eigen::VectorXd diff = x - means_.row(c).transpose();
        chol_[static_cast<std::size_t>(c)].triangularView<Eigen::Lower>().solveInPlace(diff);
        out(c) = log_norm_(c) - 0.5 * diff.squaredNorm();
    }
    return out;
}

double GmmModel::log_density(const Eigen::Ref<const Eigen::VectorXd>& x) const { return log_sum_exp(log_joint(x)); }

GmmModel gmm_fit(const Eigen::MatrixXd& data, std::size_t k, const GmmFitConfig& cfg) {
    cfg.validate();
    if (k == 0) fail(ErrorCode::InvalidArgument, "component count must be at least 1");
    if (static_cast<std::size_t>(data.rows()) < k)
        fail(ErrorCode::TooFewPoints, std::to_string(data.rows()) + " points for " + std::to_string(k) + " components");
    if (data.cols() == 0) fail(ErrorCode::DimensionMismatch, "data has zero columns");
    if (!data.allFinite()) fail(ErrorCode::NonFinite, "mixture training data not finite");

    std::vector<RunResult> runs(cfg.num_restarts);
    parallel_for(cfg.num_restarts, [&](std::size_t r) { runs[r] = run_em(data, k, cfg, mix_seed(cfg.seed, r)); });

    const RunResult* best = nullptr;
    for (const auto& r : runs)
        if (r.params && (best == nullptr || r.objective > best->objective)) best = &r;
    if (best == nullptr)
        fail(ErrorCode::DegenerateComponent, "every restart lost a component");

    GmmModel model(best->params->weights, best->params->means, best->params->covs, cfg);
    model.fit_log_likelihood = best->objective;
    model.ll_history = best->history;
    return model;
}

Eigen::VectorXd gmm_posterior(const GmmModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
    Eigen::VectorXd lj = model.log_joint(x);
    const double lse = log_sum_exp(lj);
    return (lj.array() - lse).exp().matrix();
}

std::size_t gmm_assign(const GmmModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
    const Eigen::VectorXd post = gmm_posterior(model, x);
    std::size_t best = 0;
    for (Eigen::Index c = 1; c < post.size(); ++c)
        if (post(c) > post(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(c);
    return best;
}

std::vector<std::size_t> gmm_assign_all(const GmmModel& model, const Eigen::MatrixXd& data) {
    std::vector<std::size_t> labels(static_cast<std::size_t>(data.rows()));
    for (Eigen::Index i = 0; i < data.rows(); ++i) labels[static_cast<std::size_t>(i)] = gmm_assign(model, data.row(i).transpose());
    return labels;
}

double silhouette_score(const Eigen::MatrixXd& data, std::span<const std::size_t> labels) {
    const auto n = static_cast<std::size_t>(data.rows());
    if (labels.size() != n) fail(ErrorCode::LengthMismatch, "labels and data differ in length");
    std::map<std::size_t, std::size_t> index;
    for (auto l : labels) index.emplace(l, index.size());
    if (index.size() < 2) fail(ErrorCode::SingleCluster, "silhouette needs at least 2 distinct labels");
    const std::size_t clusters = index.size();
    std::vector<std::size_t> cluster(n);
    std::vector<double> sizes(clusters, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        cluster[i] = index[labels[i]];
        sizes[cluster[i]] += 1.0;
    }

    // sums(i, c): total distance from point i to the members of cluster c.
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(clusters));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dist = (data.row(static_cast<Eigen::Index>(i)) - data.row(static_cast<Eigen::Index>(j))).norm();
            sums(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(cluster[j])) += dist;
            sums(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(cluster[i])) += dist;
        }
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t own = cluster[i];
        if (sizes[own] <= 1.0) continue;
        const double a = sums(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(own)) / (sizes[own] - 1.0);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < clusters; ++c)
            if (c != own) b = std::min(b, sums(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) / sizes[c]);
        const double denom = std::max(a, b);
        if (denom > 0.0) total += (b - a) / denom;
    }
    return total / static_cast<double>(n);
}

KSelection select_k(const Eigen::MatrixXd& data, std::size_t k_min, std::size_t k_max, const GmmFitConfig& cfg) {
    const auto n = static_cast<std::size_t>(data.rows());
    if (k_min < 2 || k_min > k_max || k_max + 1 > n)
        fail(ErrorCode::InvalidArgument, "select_k needs 2 <= k_min <= k_max <= n-1 (got " + std::to_string(k_min) +
                                             ".." + std::to_string(k_max) + " with n=" + std::to_string(n) + ")");
    const std::size_t count = k_max - k_min + 1;
    std::vector<std::optional<GmmModel>> models(count);
    std::vector<std::optional<double>> scores(count);
    parallel_for(count, [&](std::size_t i) {
        try {
            models[i] = gmm_fit(data, k_min + i, cfg);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::DegenerateComponent) throw;
            return;
        }
        const auto labels = gmm_assign_all(*models[i], data);
        if (std::any_of(labels.begin(), labels.end(), [&](std::size_t l) { return l != labels.front(); }))
            scores[i] = silhouette_score(data, labels);
    });

    KSelection out;
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < count; ++i) {
        if (!scores[i]) continue;
        out.curve.emplace_back(k_min + i, *scores[i]);
        if (!best || *scores[i] > *scores[*best]) best = i;
    }
    if (!best) {
        if (count == 1 && models[0]) {
            out.model = std::move(*models[0]);
            out.k = k_min;
            out.score = -1.0;
            return out;
        }
        fail(ErrorCode::AllDegenerate, "no component count in [" + std::to_string(k_min) + ", " +
                                           std::to_string(k_max) + "] produced a valid partition");
    }
    out.model = std::move(*models[*best]);
    out.k = k_min + *best;
    out.score = *scores[*best];
    return out;
}

}  // namespace tscseg
