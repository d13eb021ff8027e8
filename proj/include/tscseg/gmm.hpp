#pragma once

// Full-covariance Gaussian mixture models: EM fitting with k-means++
// restarts, log-space posterior inference, silhouette scoring and
// silhouette-driven choice of the component count.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace tscseg {

struct GmmFitConfig {
    std::size_t max_iterations = 300;
    double ll_tolerance = 1e-6;               // relative
    double covariance_regularization = 1e-6;  // added to every covariance diagonal
    std::size_t num_restarts = 5;
    std::uint64_t seed = 0;

    void validate() const;
};

class GmmModel {
public:
    GmmModel() = default;

    /// Validates (simplex weights, symmetric covariances) and factorizes.
    /// Throws DegenerateComponent when a covariance has no Cholesky factor.
    GmmModel(Eigen::VectorXd weights, Eigen::MatrixXd means, std::vector<Eigen::MatrixXd> covariances,
             GmmFitConfig config = {});

    std::size_t num_components() const { return static_cast<std::size_t>(weights_.size()); }
    std::size_t dim() const { return static_cast<std::size_t>(means_.cols()); }

    const Eigen::VectorXd& weights() const { return weights_; }
    const Eigen::MatrixXd& means() const { return means_; }  // one row per component
    const std::vector<Eigen::MatrixXd>& covariances() const { return covariances_; }
    const GmmFitConfig& config() const { return config_; }

    /// Final fit objective and its per-iteration trace for the kept restart.
    double fit_log_likelihood = 0.0;
    std::vector<double> ll_history;

    /// log(weight_i) + log N(x; mu_i, Sigma_i) for every component.
    Eigen::VectorXd log_joint(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    double log_density(const Eigen::Ref<const Eigen::VectorXd>& x) const;

private:
    Eigen::VectorXd weights_;
    Eigen::MatrixXd means_;
    std::vector<Eigen::MatrixXd> covariances_;
    GmmFitConfig config_;
    std::vector<Eigen::MatrixXd> chol_;  // lower factors
    Eigen::VectorXd log_norm_;           // log weight - 0.5 (d log 2pi + log|Sigma|)
};

/// EM from k-means++ seeding; best of `num_restarts` by final objective.
/// Rows of `data` are points.
///
/// The monitored objective is the log-likelihood of the data under the
/// mixture after each point is smeared by N(0, eps*I), evaluated through the
/// expected log-density: sum_i log sum_k w_k exp(log N(x_i) - eps/2 tr(Sigma_k^-1)).
/// Its exact M-step yields Sigma_k = S_k + eps*I, so every iteration is
/// non-decreasing.
GmmModel gmm_fit(const Eigen::MatrixXd& data, std::size_t k, const GmmFitConfig& cfg);

/// Responsibilities, computed with log-sum-exp; sums to 1.
Eigen::VectorXd gmm_posterior(const GmmModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Zero-based argmax of the posterior, ties toward the lowest index.
std::size_t gmm_assign(const GmmModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);
std::vector<std::size_t> gmm_assign_all(const GmmModel& model, const Eigen::MatrixXd& data);

/// Mean silhouette over points with Euclidean distance. Singleton clusters
/// contribute 0. Throws SingleCluster on fewer than 2 distinct labels.
double silhouette_score(const Eigen::MatrixXd& data, std::span<const std::size_t> labels);

struct KSelection {
    GmmModel model;
    std::size_t k = 0;
    double score = 0.0;
    /// (k, silhouette) for every k that produced a valid partition.
    std::vector<std::pair<std::size_t, double>> curve;
};

/// Fits every k in [k_min, k_max] and keeps the silhouette maximizer,
/// ties toward the smaller k. When k_min == k_max that k is returned with its
/// score (or -1 when the fit collapsed to one cluster).
KSelection select_k(const Eigen::MatrixXd& data, std::size_t k_min, std::size_t k_max, const GmmFitConfig& cfg);

}  // namespace tscseg
