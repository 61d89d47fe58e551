#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace stcn;
using namespace testsupport;

namespace {

const std::vector<VariableSpec> kXY{{"X", Tier::pollutant, false}, {"Y", Tier::condition, false}};

FitConfig plain() {
    FitConfig c;
    c.kernel = KernelMode::none;
    c.group_weights = false;
    return c;
}

// Y = a + b X + noise on a complete grid, iid across everything.
PanelDataset linear_panel(std::size_t L, std::size_t W, double a, double b, double sd, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    std::vector<double> xs(L * W);
    for (auto& x : xs) x = n01(rng);
    std::vector<double> ys(L * W);
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = a + b * xs[i] + sd * n01(rng);
    return grid_panel(L, W, kXY, [&](std::size_t l, std::size_t w, std::size_t v) {
        return v == 0 ? xs[l * W + w] : ys[l * W + w];
    });
}

} // namespace

TEST(Gls, MatchesExplicitNormalEquations) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n01;
    const int n = 40, p = 3;
    Eigen::MatrixXd X(n, p), A(n, n);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = n01(rng);
        X(i, 2) = n01(rng);
        y(i) = n01(rng);
    }
    for (auto& a : A.reshaped()) a = n01(rng);
    const Eigen::MatrixXd omega = A * A.transpose() / n + Eigen::MatrixXd::Identity(n, n);
    const auto r = gls_fit(y, X, omega);
    const Eigen::MatrixXd oi = omega.inverse();
    const Eigen::MatrixXd xtx = X.transpose() * oi * X;
    const Eigen::VectorXd beta = xtx.inverse() * X.transpose() * oi * y;
    EXPECT_LT((r.beta - beta).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((r.se - xtx.inverse().diagonal().cwiseSqrt()).cwiseAbs().maxCoeff(), 1e-8);
    const Eigen::VectorXd e = y - X * beta;
    const double ll = -0.5 * (n * std::log(2 * std::numbers::pi) + std::log(omega.determinant()) + e.dot(oi * e));
    EXPECT_NEAR(r.loglik, ll, 1e-8);

    const auto scaled = gls_fit(y, X, 4.0 * omega);
    EXPECT_LT((scaled.beta - r.beta).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((scaled.se - 2.0 * r.se).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Gls, SquareSystemIsExact) {
    Eigen::MatrixXd X(3, 3);
    X << 1, 2, 0, 1, -1, 3, 1, 0.5, 0.5;
    Eigen::VectorXd y(3);
    y << 1, 2, 3;
    const auto r = gls_fit(y, X, Eigen::MatrixXd::Identity(3, 3));
    EXPECT_LT((X * r.beta - y).norm(), 1e-10);
    EXPECT_THROW(gls_fit(y, X, Eigen::MatrixXd::Zero(3, 3)), Error);
}

TEST(NodeFit, CoefficientsWithinThreeStandardErrors) {
    int hits = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto ds = linear_panel(20, 30, 1.0, -0.7, 1.5, seed);
        const auto est = fit_node(ds, "Y", {{"X", 0}}, plain());
        const double b = est.coefficient({"X", 0});
        const double se = est.std_errors.at("X@t");
        if (std::abs(b + 0.7) <= 3 * se && std::abs(est.intercept - 1.0) <= 3 * est.intercept_se) ++hits;
    }
    EXPECT_GE(hits, 19);
}

TEST(NodeFit, IdentityKernelSingleGroupIsOrdinaryLeastSquares) {
    const auto ds = linear_panel(15, 20, 0.3, 2.0, 0.8, 5);
    const auto est = fit_node(ds, "Y", {{"X", 0}}, plain());
    const int n = 300;
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd y(n);
    int i = 0;
    for (std::size_t l = 0; l < 15; ++l)
        for (std::size_t w = 0; w < 20; ++w, ++i) {
            X(i, 0) = 1.0;
            X(i, 1) = ds.value(l, w, 0);
            y(i) = ds.value(l, w, 1);
        }
    const Eigen::VectorXd beta = (X.transpose() * X).ldlt().solve(X.transpose() * y);
    const double rss = (y - X * beta).squaredNorm();
    EXPECT_NEAR(est.intercept, beta(0), 1e-9);
    EXPECT_NEAR(est.coefficient({"X", 0}), beta(1), 1e-9);
    EXPECT_NEAR(est.group_variances.at(kPooledGroup), rss / n, 1e-9);
    EXPECT_NEAR(est.loglik_avg, -0.5 * (std::log(2 * std::numbers::pi * rss / n) + 1.0), 1e-9);
    EXPECT_EQ(est.n_used, 300u);
    EXPECT_FALSE(est.kernel.has_value());
}

TEST(NodeFit, EmptyParentSetGivesSampleMean) {
    const auto ds = linear_panel(10, 12, 4.0, 1.0, 1.0, 8);
    const auto est = fit_node(ds, "Y", {}, plain());
    double mean = 0.0;
    for (std::size_t l = 0; l < 10; ++l)
        for (std::size_t w = 0; w < 12; ++w) mean += ds.value(l, w, 1);
    EXPECT_NEAR(est.intercept, mean / 120.0, 1e-10);
    EXPECT_TRUE(est.coefficients.empty());
}

TEST(NodeFit, HomoscedasticGroupVariancesAgree) {
    FitConfig cfg = plain();
    cfg.group_weights = true;
    std::vector<double> spreads;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto ds = linear_panel(30, 40, 0.0, 1.0, 1.2, 100 + seed);
        const auto est = fit_node(ds, "Y", {{"X", 0}}, cfg);
        EXPECT_EQ(est.group_variances.size(), 2u);
        double lo = 1e300, hi = 0.0;
        for (const auto& [g, v] : est.group_variances) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        spreads.push_back(hi / lo - 1.0);
    }
    std::sort(spreads.begin(), spreads.end());
    EXPECT_LE(0.5 * (spreads[9] + spreads[10]), 0.10);
}

TEST(NodeFit, HeteroscedasticGroupsAreRecovered) {
    const auto g = generate(five_node_spec(3, 40, 120, 0.0));
    const auto est = fit_node(g.data, "C1", {{"P1", 0}, {"C1", 1}});
    EXPECT_NEAR(est.group_variances.at("A"), 0.5, 0.1);
    EXPECT_NEAR(est.group_variances.at("B"), 1.0, 0.2);
    EXPECT_NEAR(est.group_variances.at("C"), 2.0, 0.4);
    ASSERT_TRUE(est.kernel.has_value());
    EXPECT_NEAR(est.coefficient({"P1", 0}), 0.6, 0.05);
    EXPECT_NEAR(est.coefficient({"C1", 1}), 0.4, 0.05);
}

TEST(NodeFit, ObjectiveTraceIsMonotone) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto g = generate(five_node_spec(seed, 30, 60, 0.1));
        for (const auto& node : g.truth.dag.nodes()) {
            const auto est = fit_node(g.data, node, g.truth.dag.parents(node));
            ASSERT_FALSE(est.objective_trace.empty());
            for (std::size_t i = 1; i < est.objective_trace.size(); ++i)
                EXPECT_LE(est.objective_trace[i], est.objective_trace[i - 1] + 1e-9 * std::abs(est.objective_trace[i - 1]));
            EXPECT_NEAR(-est.objective_trace.back() / double(est.n_used), est.loglik_avg, 1e-9);
            for (const auto& [grp, v] : est.group_variances) EXPECT_GT(v, 0.0);
            EXPECT_LE(est.iterations, 50);
        }
    }
}

TEST(NodeFit, IncompleteRowIsDropped) {
    auto ds = linear_panel(10, 15, 1.0, 0.5, 1.0, 21);
    std::vector<std::uint8_t> hide(ds.missing_mask().size(), 0);
    hide[(3 * 15 + 4) * 2 + 0] = 1; // X at (3, 4)
    const auto with_gap = ds.with_extra_missing(hide);
    // Removing the same row by hand: hide Y too, which leaves the regression unchanged.
    auto both = hide;
    both[(3 * 15 + 4) * 2 + 1] = 1;
    const auto dropped = ds.with_extra_missing(both);
    const auto a = fit_node(with_gap, "Y", {{"X", 0}}, plain());
    const auto b = fit_node(dropped, "Y", {{"X", 0}}, plain());
    EXPECT_EQ(a.n_used, 149u);
    EXPECT_EQ(b.n_used, 149u);
    EXPECT_DOUBLE_EQ(a.intercept, b.intercept);
    EXPECT_DOUBLE_EQ(a.coefficient({"X", 0}), b.coefficient({"X", 0}));
}

TEST(NodeFit, LaggedParentsLoseTheFirstWeek) {
    const auto ds = linear_panel(8, 20, 0.0, 0.0, 1.0, 2);
    const auto est = fit_node(ds, "Y", {{"Y", 1}}, plain());
    EXPECT_EQ(est.n_used, 8u * 19u);
}

TEST(NodeFit, TooFewRows) {
    const auto ds = linear_panel(2, 3, 0.0, 1.0, 1.0, 1);
    try {
        fit_node(ds, "Y", {{"X", 0}}, plain());
        ADD_FAILURE();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::TooFewRows);
    }
}

TEST(NodeFit, RankDeficientNamesTheColumn) {
    const std::vector<VariableSpec> vars{{"A", Tier::pollutant, false}, {"B", Tier::pollutant, false}, {"Y", Tier::condition, false}};
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n01;
    std::vector<double> a(200);
    for (auto& x : a) x = n01(rng);
    const auto ds = grid_panel(10, 20, vars, [&](std::size_t l, std::size_t w, std::size_t v) {
        const double x = a[l * 20 + w];
        return v == 0 ? x : v == 1 ? 2.0 * x : x + n01(rng);
    });
    try {
        fit_node(ds, "Y", {{"A", 0}, {"B", 0}}, plain());
        ADD_FAILURE();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::RankDeficient);
        const std::string msg = e.what();
        EXPECT_TRUE(msg.find("A@t") != std::string::npos || msg.find("B@t") != std::string::npos) << msg;
    }
}

TEST(NodeFit, ResidualsAreConsistent) {
    const auto g = generate(five_node_spec(9, 25, 50, 0.1));
    const auto est = fit_node(g.data, "C2", g.truth.dag.parents("C2"));
    const auto r = node_residuals(est, g.data);
    EXPECT_EQ(r.count(), est.n_used);
    const auto c2 = *g.data.find_variable("C2");
    const auto c1 = *g.data.find_variable("C1");
    const auto p2 = *g.data.find_variable("P2");
    for (std::size_t l = 0; l < 25; ++l)
        for (std::size_t w = 1; w < 50; ++w) {
            const double raw = r.raw(Eigen::Index(l), Eigen::Index(w));
            if (std::isnan(raw)) continue;
            const double fitted = est.intercept + est.coefficient({"C2", 1}) * g.data.value(l, w - 1, c2) +
                                  est.coefficient({"P2", 1}) * g.data.value(l, w - 1, p2) +
                                  est.coefficient({"C1", 0}) * g.data.value(l, w, c1);
            EXPECT_NEAR(raw, g.data.value(l, w, c2) - fitted, 1e-9);
            const double sd = std::sqrt(est.variance_for(g.data.locations()[l].group));
            EXPECT_NEAR(r.weighted(Eigen::Index(l), Eigen::Index(w)), raw / sd, 1e-9);
        }
}
