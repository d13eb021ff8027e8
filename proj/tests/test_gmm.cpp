#include "doctest.h"

#include "tscseg/error.hpp"
#include "tscseg/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

using namespace tscseg;

namespace {

Eigen::MatrixXd blobs(const std::vector<Eigen::VectorXd>& centers, std::size_t per, double std, std::mt19937_64& rng,
                      std::vector<std::size_t>* truth = nullptr) {
    std::normal_distribution<double> n(0.0, std);
    const auto d = centers.front().size();
    Eigen::MatrixXd data(static_cast<Eigen::Index>(centers.size() * per), d);
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < centers.size(); ++c) {
        for (std::size_t i = 0; i < per; ++i, ++row) {
            for (Eigen::Index j = 0; j < d; ++j) data(row, j) = centers[c](j) + n(rng);
            if (truth) truth->push_back(c);
        }
    }
    return data;
}

// Definitional silhouette: explicit loops over every pair for every point.
double silhouette_oracle(const Eigen::MatrixXd& X, const std::vector<std::size_t>& labels) {
    const auto n = static_cast<std::size_t>(X.rows());
    std::set<std::size_t> distinct(labels.begin(), labels.end());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double own_sum = 0.0;
        std::size_t own_count = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || labels[j] != labels[i]) continue;
            own_sum += (X.row(static_cast<Eigen::Index>(i)) - X.row(static_cast<Eigen::Index>(j))).norm();
            ++own_count;
        }
        if (own_count == 0) continue;
        const double a = own_sum / static_cast<double>(own_count);
        double b = std::numeric_limits<double>::infinity();
        for (auto c : distinct) {
            if (c == labels[i]) continue;
            double s = 0.0;
            std::size_t cnt = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (labels[j] != c) continue;
                s += (X.row(static_cast<Eigen::Index>(i)) - X.row(static_cast<Eigen::Index>(j))).norm();
                ++cnt;
            }
            b = std::min(b, s / static_cast<double>(cnt));
        }
        const double m = std::max(a, b);
        if (m > 0.0) total += (b - a) / m;
    }
    return total / static_cast<double>(n);
}

// Direct multivariate normal density.
double normal_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov) {
    const auto d = static_cast<double>(x.size());
    const Eigen::VectorXd diff = x - mu;
    const double q = diff.dot(cov.inverse() * diff);
    return std::exp(-0.5 * q) / std::sqrt(std::pow(2.0 * M_PI, d) * cov.determinant());
}

GmmModel symmetric_pair(double separation) {
    Eigen::MatrixXd means(2, 2);
    means << -separation / 2, 0.0, separation / 2, 0.0;
    return GmmModel(Eigen::Vector2d(0.5, 0.5), means, {Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Identity()});
}

}  // namespace

TEST_CASE("single component fit is the sample mean and covariance plus loading") {
    std::mt19937_64 rng(1);
    const Eigen::MatrixXd data = blobs({Eigen::Vector3d(1, 2, 3)}, 40, 0.7, rng);
    GmmFitConfig cfg;
    const auto m = gmm_fit(data, 1, cfg);
    const Eigen::RowVectorXd mean = data.colwise().mean();
    const Eigen::MatrixXd centered = data.rowwise() - mean;
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(data.rows());
    cov.diagonal().array() += cfg.covariance_regularization;
    CHECK(m.weights()(0) == 1.0);
    CHECK((m.means().row(0) - mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((m.covariances()[0] - cov).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two separated clusters recover their sample means") {
    std::mt19937_64 rng(2);
    std::vector<std::size_t> truth;
    const Eigen::MatrixXd data = blobs({Eigen::Vector2d(0, 0), Eigen::Vector2d(10, 10)}, 100, 0.1, rng, &truth);
    const auto m = gmm_fit(data, 2, GmmFitConfig{});
    for (std::size_t c = 0; c < 2; ++c) {
        Eigen::RowVector2d oracle = Eigen::RowVector2d::Zero();
        double count = 0;
        for (Eigen::Index i = 0; i < data.rows(); ++i) {
            if (truth[static_cast<std::size_t>(i)] != c) continue;
            oracle += data.row(i);
            count += 1;
        }
        oracle /= count;
        const double d0 = (m.means().row(0) - oracle).norm();
        const double d1 = (m.means().row(1) - oracle).norm();
        CHECK(std::min(d0, d1) < 0.05);
    }
}

TEST_CASE("one point per component saturates") {
    Eigen::MatrixXd data(3, 2);
    data << 0, 0, 5, 1, -3, 4;
    GmmFitConfig cfg;
    const auto m = gmm_fit(data, 3, cfg);
    for (Eigen::Index c = 0; c < 3; ++c) {
        bool matches_point = false;
        for (Eigen::Index i = 0; i < 3; ++i) matches_point |= (m.means().row(c) - data.row(i)).norm() < 1e-9;
        CHECK(matches_point);
        CHECK((m.covariances()[static_cast<std::size_t>(c)] -
               cfg.covariance_regularization * Eigen::Matrix2d::Identity())
                  .cwiseAbs()
                  .maxCoeff() < 1e-12);
    }
}

TEST_CASE("fit errors") {
    Eigen::MatrixXd data = Eigen::MatrixXd::Random(3, 2);
    try {
        gmm_fit(data, 4, GmmFitConfig{});
        FAIL("expected TooFewPoints");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::TooFewPoints);
    }
    data(1, 1) = std::nan("");
    CHECK_THROWS_AS(gmm_fit(data, 1, GmmFitConfig{}), Error);
}

TEST_CASE("fits are deterministic for a fixed seed") {
    std::mt19937_64 rng(3);
    const Eigen::MatrixXd data = blobs({Eigen::Vector2d(0, 0), Eigen::Vector2d(3, 0), Eigen::Vector2d(0, 3)}, 30, 0.8, rng);
    GmmFitConfig cfg;
    cfg.seed = 77;
    const auto a = gmm_fit(data, 3, cfg);
    const auto b = gmm_fit(data, 3, cfg);
    CHECK(a.means() == b.means());
    CHECK(a.ll_history == b.ll_history);
}

TEST_CASE("EM objective is monotone on randomized instances") {
    std::mt19937_64 rng(1234);
    std::uniform_int_distribution<int> dim_pick(1, 16), k_pick(1, 8), n_pick(20, 500);
    std::size_t violations = 0;
    for (int trial = 0; trial < 25; ++trial) {
        const int d = dim_pick(rng), k = k_pick(rng), n = n_pick(rng);
        std::vector<Eigen::VectorXd> centers;
        for (int c = 0; c < k; ++c) centers.push_back(Eigen::VectorXd::Random(d) * 4.0);
        const Eigen::MatrixXd data = blobs(centers, static_cast<std::size_t>(n / k + 1), 1.0, rng);
        GmmFitConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(trial);
        cfg.num_restarts = 2;
        const auto m = gmm_fit(data, static_cast<std::size_t>(k), cfg);
        for (std::size_t i = 1; i < m.ll_history.size(); ++i)
            if (m.ll_history[i] < m.ll_history[i - 1] - 1e-9) ++violations;
    }
    CHECK(violations == 0);
}

TEST_CASE("posterior normalization, separation and symmetry") {
    Eigen::MatrixXd one_mean(1, 2);
    one_mean << 3, 4;
    const GmmModel single(Eigen::VectorXd::Ones(1), one_mean, {Eigen::Matrix2d::Identity()});
    CHECK(gmm_posterior(single, Eigen::Vector2d(100, -7))(0) == 1.0);
    CHECK(gmm_assign(single, Eigen::Vector2d(-1, 1)) == 0);

    const auto pair = symmetric_pair(8.0);
    // direct density oracle
    const Eigen::Vector2d at_first = pair.means().row(0).transpose();
    const double p0 = 0.5 * normal_density(at_first, pair.means().row(0).transpose(), pair.covariances()[0]);
    const double p1 = 0.5 * normal_density(at_first, pair.means().row(1).transpose(), pair.covariances()[1]);
    const auto post = gmm_posterior(pair, at_first);
    CHECK(post(0) == doctest::Approx(p0 / (p0 + p1)).epsilon(1e-12));
    CHECK(post(0) > 0.99);
    CHECK(std::abs(post.sum() - 1.0) < 1e-9);
    CHECK(gmm_assign(pair, pair.means().row(1).transpose()) == 1);

    const auto mid = gmm_posterior(pair, Eigen::Vector2d(0, 0));
    CHECK(std::abs(mid(0) - 0.5) < 1e-9);
    CHECK(std::abs(mid(1) - 0.5) < 1e-9);
    CHECK(gmm_assign(pair, Eigen::Vector2d(0, 0)) == 0);

    CHECK_THROWS_AS(gmm_posterior(pair, Eigen::Vector3d(0, 0, 0)), Error);
}

TEST_CASE("posterior stays finite far from every component") {
    const auto pair = symmetric_pair(2.0);
    for (double far : {1e3, 1e5, 1e6, -1e6}) {
        const auto post = gmm_posterior(pair, Eigen::Vector2d(far, 0.5));
        CHECK(post.allFinite());
        CHECK(std::abs(post.sum() - 1.0) < 1e-9);
    }
}

TEST_CASE("silhouette worked example and conventions") {
    Eigen::MatrixXd X(4, 2);
    X << 0, 0, 0, 1, 10, 10, 10, 11;
    const std::vector<std::size_t> labels{0, 0, 1, 1};
    // Independent evaluation by hand of the formula (matches sklearn).
    CHECK(silhouette_score(X, labels) == doctest::Approx(0.9292895427118657).epsilon(1e-12));

    const std::vector<std::size_t> singletons{0, 1, 2, 3};
    CHECK(silhouette_score(X, singletons) == 0.0);

    const std::vector<std::size_t> same{4, 4, 4, 4};
    try {
        silhouette_score(X, same);
        FAIL("expected SingleCluster");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SingleCluster);
    }

    std::mt19937_64 rng(8);
    const Eigen::MatrixXd base = blobs({Eigen::Vector2d(0, 0)}, 12, 1.0, rng);
    Eigen::MatrixXd twice(24, 2);
    twice << base, base;
    std::vector<std::size_t> halves(24, 0);
    std::fill(halves.begin() + 12, halves.end(), 1);
    CHECK(silhouette_score(twice, halves) <= 0.0);
    CHECK(silhouette_score(twice, halves) == doctest::Approx(silhouette_oracle(twice, halves)).epsilon(1e-12));
}

TEST_CASE("silhouette equals the definitional oracle on random instances") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> n_pick(3, 50), d_pick(1, 6), c_pick(2, 5);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = n_pick(rng), d = d_pick(rng), c = std::min(c_pick(rng), n);
        Eigen::MatrixXd X(n, d);
        for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = g(rng);
        std::uniform_int_distribution<int> lab(0, c - 1);
        std::vector<std::size_t> labels(static_cast<std::size_t>(n));
        for (auto& l : labels) l = static_cast<std::size_t>(lab(rng));
        labels[0] = 0;
        labels[1] = 1;
        CHECK(std::abs(silhouette_score(X, labels) - silhouette_oracle(X, labels)) <= 1e-12);
    }
}

TEST_CASE("translation leaves assignments and silhouette unchanged") {
    std::mt19937_64 rng(12);
    const Eigen::MatrixXd data = blobs({Eigen::Vector2d(0, 0), Eigen::Vector2d(6, 1), Eigen::Vector2d(2, 7)}, 25, 0.7, rng);
    const Eigen::RowVector2d shift(123.0, -45.0);
    const Eigen::MatrixXd moved = data.rowwise() + shift;
    GmmFitConfig cfg;
    cfg.seed = 4;
    const auto a = gmm_fit(data, 3, cfg);
    const auto b = gmm_fit(moved, 3, cfg);
    const auto la = gmm_assign_all(a, data);
    const auto lb = gmm_assign_all(b, moved);
    std::map<std::size_t, std::size_t> relabel;
    bool consistent = true;
    for (std::size_t i = 0; i < la.size(); ++i) {
        auto [it, inserted] = relabel.emplace(la[i], lb[i]);
        consistent &= it->second == lb[i];
    }
    CHECK(consistent);
    CHECK(std::abs(silhouette_score(data, la) - silhouette_score(moved, lb)) < 1e-9);
}

TEST_CASE("select_k picks three well-separated clusters") {
    std::mt19937_64 rng(5);
    const std::vector<Eigen::VectorXd> centers{Eigen::Vector2d(0, 0), Eigen::Vector2d(10, 0), Eigen::Vector2d(5, 9)};
    const Eigen::MatrixXd data = blobs(centers, 40, 0.5, rng);
    GmmFitConfig cfg;
    cfg.seed = 1;
    const auto sel = select_k(data, 2, 6, cfg);

    // Oracle: silhouette curve of each fitted k computed independently.
    std::size_t oracle_k = 0;
    double oracle_best = -2.0;
    for (std::size_t k = 2; k <= 6; ++k) {
        const auto m = gmm_fit(data, k, cfg);
        const double s = silhouette_oracle(data, gmm_assign_all(m, data));
        if (s > oracle_best) {
            oracle_best = s;
            oracle_k = k;
        }
    }
    CHECK(oracle_k == 3);
    CHECK(sel.k == 3);
    CHECK(sel.score == doctest::Approx(oracle_best).epsilon(1e-9));
    CHECK(sel.curve.size() == 5);

    const auto fixed = select_k(data, 5, 5, cfg);
    CHECK(fixed.k == 5);

    Eigen::MatrixXd doubled(data.rows() * 2, data.cols());
    doubled << data, data;
    CHECK(select_k(doubled, 2, 6, cfg).k == sel.k);

    CHECK_THROWS_AS(select_k(data, 1, 3, cfg), Error);
    CHECK_THROWS_AS(select_k(data, 3, 2, cfg), Error);
}
