#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace stcn;
using namespace testsupport;

namespace {

struct Built {
    GeneratorSpec spec;
    CausalModel model;
    PanelDataset init;
};

// Spec -> ground-truth model over grid_panel locations, with a one-week
// initial panel filled by `x0`.
Built build(GeneratorSpec spec, std::size_t L, const std::map<std::string, double>& x0 = {}) {
    spec.groups = {"even", "odd"};
    auto init = grid_panel(L, 1, spec.variables, [&](std::size_t, std::size_t, std::size_t v) {
        auto it = x0.find(spec.variables[v].name);
        return it == x0.end() ? 0.0 : it->second;
    });
    auto model = truth_model(spec, init.locations());
    return {std::move(spec), std::move(model), std::move(init)};
}

GeneratorSpec chain_spec(double noise) {
    GeneratorSpec s;
    s.variables = {{"X", Tier::pollutant, false}, {"Y", Tier::condition, false}};
    s.dag = TwoSliceDag({"X", "Y"});
    s.dag.add({"X", "X", true});
    s.dag.add({"X", "Y", true});
    s.nodes["X"] = {1.0, {{"X@t-1", 0.5}}, std::nullopt, noise, {}};
    s.nodes["Y"] = {2.0, {{"X@t-1", 0.5}}, std::nullopt, noise, {}};
    return s;
}

double mean_of(const Eigen::MatrixXd& m) { return m.mean(); }

} // namespace

TEST(Simulate, ZeroNoiseFollowsRecursion) {
    const auto b = build(chain_spec(0.0), 4, {{"X", 3.0}, {"Y", 1.0}});
    const auto q = simulate(b.model, b.init, 6, 3, 1);
    double x = 3.0, y = 1.0;
    for (Eigen::Index s = 1; s <= 6; ++s) {
        const double nx = 1.0 + 0.5 * x, ny = 2.0 + 0.5 * x;
        x = nx;
        y = ny;
        for (Eigen::Index l = 0; l < 4; ++l) {
            EXPECT_NEAR(q.trajectories.at("X").mean(s, l), x, 1e-12);
            EXPECT_NEAR(q.trajectories.at("Y").mean(s, l), y, 1e-12);
            EXPECT_EQ(q.trajectories.at("Y").q05(s, l), q.trajectories.at("Y").q95(s, l));
        }
    }
    EXPECT_EQ(q.weeks.size(), 7u);
    EXPECT_FALSE(q.has_deltas);
}

TEST(Simulate, LongRunMeanAndStationarity) {
    const auto b = build(ar1_spec(1, 0.5, 6, 1), 6, {{"Y", 0.0}});
    const auto q = simulate(b.model, b.init, 300, 200, 7);
    const auto& m = q.trajectories.at("Y").mean;
    const double w1 = m.middleRows(100, 100).mean(), w2 = m.middleRows(201, 100).mean();
    // Mean of 200 draws x 6 sites x 100 steps of an AR(1) with variance 4/3.
    const double se = std::sqrt((4.0 / 3.0) * 3.0 / (200.0 * 6.0 * 100.0));
    EXPECT_NEAR(w1, 4.0, 4 * se);
    EXPECT_NEAR(w2, 4.0, 4 * se);
    EXPECT_NEAR(w1, w2, 4 * std::sqrt(2.0) * se);
    for (Eigen::Index s = 0; s < m.rows(); ++s)
        for (Eigen::Index l = 0; l < m.cols(); ++l) {
            EXPECT_LE(q.trajectories.at("Y").q05(s, l), q.trajectories.at("Y").q50(s, l));
            EXPECT_LE(q.trajectories.at("Y").q50(s, l), q.trajectories.at("Y").q95(s, l));
        }
}

TEST(Simulate, NoiseFollowsTheKernel) {
    const KernelParams k{100, 0.2};
    const auto b = build(ar1_spec(1, 0.0, 3, 1, k), 3);
    const int draws = 10000;
    Eigen::MatrixXd e(draws, 3);
    for (int d = 0; d < draws; ++d) {
        const auto st = simulate_draw(b.model, b.init, 1, 5, std::uint64_t(d));
        e.row(d) = st[1].row(0).array() - 2.0;
    }
    const DistanceMatrix dist(b.init.locations());
    for (Eigen::Index i = 0; i < 3; ++i)
        for (Eigen::Index j = i + 1; j < 3; ++j) {
            const double r = sample_corr(std::vector<double>(e.col(i).data(), e.col(i).data() + draws),
                                         std::vector<double>(e.col(j).data(), e.col(j).data() + draws));
            const double expect = exp_correlation(dist.km()(i, j), k);
            EXPECT_NEAR(r, expect, 0.1 * expect) << i << "," << j;
        }
}

TEST(Simulate, DeterministicAcrossThreads) {
    const auto g = generate(five_node_spec(2, 8, 10, 0.0));
    const auto a = simulate(g.truth, g.data.select_weeks({9}), 5, 40, 3, 1);
    const auto b = simulate(g.truth, g.data.select_weeks({9}), 5, 40, 3, 4);
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
    EXPECT_EQ(to_csv(a), to_csv(b));
}

TEST(Intervene, ScaleOneGivesZeroDeltas) {
    const auto g = generate(five_node_spec(3, 10, 10, 0.0));
    InterventionSpec iv;
    iv.kind = InterventionSpec::Kind::scale;
    iv.target = "P1";
    iv.value = 1.0;
    const auto q = intervene(g.truth, iv, g.data.select_weeks({9}), 8, 20, 1);
    ASSERT_TRUE(q.has_deltas);
    for (const auto& [n, t] : q.trajectories) {
        EXPECT_EQ(t.delta_mean.cwiseAbs().maxCoeff(), 0.0) << n;
        EXPECT_EQ(t.delta_q95.cwiseAbs().maxCoeff(), 0.0) << n;
    }
}

TEST(Intervene, SetOnSinkLeavesOthersUnchanged) {
    const auto g = generate(five_node_spec(4, 10, 10, 0.0));
    InterventionSpec iv;
    iv.kind = InterventionSpec::Kind::set;
    iv.target = "C2";
    iv.value = 7.0;
    const auto q = intervene(g.truth, iv, g.data.select_weeks({9}), 6, 20, 1);
    for (const auto& [n, t] : q.trajectories) {
        if (n == "C2") {
            EXPECT_NEAR(t.mean.bottomRows(6).minCoeff(), 7.0, 1e-12);
            EXPECT_NEAR(t.mean.bottomRows(6).maxCoeff(), 7.0, 1e-12);
        } else {
            EXPECT_EQ(t.delta_mean.cwiseAbs().maxCoeff(), 0.0) << n;
        }
    }
}

TEST(Intervene, ChainShiftEqualsPathCoefficient) {
    // X settles at 2 without noise; setting it to 4 shifts Y by 0.5 * 2 one step later.
    const auto b = build(chain_spec(0.0), 3, {{"X", 2.0}, {"Y", 3.0}});
    InterventionSpec iv;
    iv.kind = InterventionSpec::Kind::set;
    iv.target = "X";
    iv.value = 4.0;
    const auto q = intervene(b.model, iv, b.init, 4, 2, 1);
    const auto& dy = q.trajectories.at("Y").delta_mean;
    EXPECT_NEAR(dy.row(1).cwiseAbs().maxCoeff(), 0.0, 1e-12);
    for (Eigen::Index s = 2; s <= 4; ++s) EXPECT_NEAR(dy.row(s).mean(), 1.0, 1e-9);

    const auto noisy = build(chain_spec(1.0), 3, {{"X", 2.0}, {"Y", 3.0}});
    const auto qn = intervene(noisy.model, iv, noisy.init, 30, 400, 9);
    // Baseline X is stationary at 2 with variance 4/3; shift = 0.5 (4 - X).
    const double se = 0.5 * std::sqrt(4.0 / 3.0 / (400.0 * 3.0));
    EXPECT_NEAR(mean_of(qn.trajectories.at("Y").delta_mean.row(20)), 1.0, 4 * se);
}

TEST(Intervene, ScopeSeverAndValidation) {
    const auto g = generate(five_node_spec(5, 10, 10, 0.0));
    const auto init = g.data.select_weeks({9});
    InterventionSpec iv;
    iv.kind = InterventionSpec::Kind::clamp;
    iv.target = "P1";
    iv.value = 0.0;
    iv.scope.locations = {g.data.locations()[2].id};
    iv.scope.first_step = 2;
    iv.scope.last_step = 3;
    const auto q = intervene(g.truth, iv, init, 6, 30, 2);
    const auto& p1 = q.trajectories.at("P1");
    EXPECT_LE(p1.q95(2, 2), 0.0);
    EXPECT_LE(p1.q95(3, 2), 0.0);
    EXPECT_EQ(p1.delta_mean.row(1).cwiseAbs().maxCoeff(), 0.0);
    for (Eigen::Index l = 0; l < 10; ++l)
        if (l != 2) { EXPECT_EQ(p1.delta_mean.col(l).cwiseAbs().maxCoeff(), 0.0); }

    InterventionSpec sever;
    sever.kind = InterventionSpec::Kind::sever;
    sever.arcs = {{"W", "P1", false}};
    const auto qs = intervene(g.truth, sever, init, 4, 10, 2);
    EXPECT_GT(qs.trajectories.at("P1").delta_mean.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(qs.trajectories.at("W").delta_mean.cwiseAbs().maxCoeff(), 0.0);

    auto expect_kind = [&](InterventionSpec s, ErrorKind k) {
        try {
            intervene(g.truth, s, init, 4, 2, 1);
            ADD_FAILURE();
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), k);
        }
    };
    auto out_of_scope = iv;
    out_of_scope.scope.locations = {"nowhere"};
    expect_kind(out_of_scope, ErrorKind::ScopeDisjoint);
    auto late = iv;
    late.scope.first_step = 9;
    late.scope.last_step = 0;
    expect_kind(late, ErrorKind::ScopeDisjoint);
    auto neg = iv;
    neg.kind = InterventionSpec::Kind::scale;
    neg.value = -1.0;
    expect_kind(neg, ErrorKind::InvalidArgument);
    auto missing_arc = sever;
    missing_arc.arcs = {{"P2", "P1", false}};
    expect_kind(missing_arc, ErrorKind::InvalidArgument);

    auto partial = init;
    std::vector<std::uint8_t> hide(partial.missing_mask().size(), 0);
    hide[0] = 1;
    try {
        simulate(g.truth, partial.with_extra_missing(hide), 3, 2, 1);
        ADD_FAILURE();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::MissingInitialValues);
    }
}

namespace {

// Y = bA A + bB B + phi Y@t-1 + e, with B = rho A + sqrt(1 - rho^2) u.
Built attribution_model(double rho, double bA, double bB, double noise) {
    GeneratorSpec s;
    s.variables = {{"A", Tier::pollutant, false}, {"B", Tier::pollutant, false}, {"Y", Tier::condition, false}};
    s.dag = TwoSliceDag({"A", "B", "Y"});
    s.dag.add({"A", "Y", false});
    s.dag.add({"B", "Y", false});
    s.dag.add({"Y", "Y", true});
    s.nodes["A"] = {0.0, {}, std::nullopt, 1.0, {}};
    s.nodes["B"] = {0.0, {}, std::nullopt, 1.0 - rho * rho, {}};
    if (rho != 0.0) {
        s.dag.add({"A", "B", false});
        s.nodes["B"].coefficients["A@t"] = rho;
    }
    s.nodes["Y"] = {1.0, {{"A@t", bA}, {"B@t", bB}, {"Y@t-1", 0.4}}, std::nullopt, noise, {}};
    return build(s, 4);
}

} // namespace

TEST(Attribution, SingleParentAndSymmetry) {
    auto single = build(ar1_spec(1, 0.5, 4, 1), 4);
    EXPECT_THROW(variance_attribution(single.model, "Y"), Error);

    const auto sym = attribution_model(0.0, 0.7, 0.7, 0.0);
    MomentOptions an;
    an.method = MomentMethod::analytic;
    const auto r = variance_attribution(sym.model, "Y", an);
    EXPECT_NEAR(r.shares.at("A@t"), 0.5, 1e-3);
    EXPECT_NEAR(r.shares.at("B@t"), 0.5, 1e-3);
    EXPECT_NEAR(*r.self_coefficient, 0.4, 1e-12);

    auto one = attribution_model(0.0, 0.7, 0.7, 1.0);
    one.model.estimates["Y"].coefficients.erase("B@t");
    one.model.estimates["Y"].parents = {{"A", 0}, {"Y", 1}};
    one.model.dag.remove({"B", "Y", false});
    const auto r1 = variance_attribution(one.model, "Y", an);
    EXPECT_NEAR(r1.shares.at("A@t"), 1.0, 1e-12);
}

TEST(Attribution, CorrelatedParentsMatchCovarianceOracle) {
    const auto b = attribution_model(0.5, 1.0, 1.0, 1.0);
    std::mt19937_64 rng(99);
    std::normal_distribution<double> n01;
    const int n = 200000;
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    for (int i = 0; i < n; ++i) {
        const double a = n01(rng), bb = 0.5 * a + std::sqrt(0.75) * n01(rng);
        sa += a;
        sb += bb;
        saa += a * a;
        sbb += bb * bb;
        sab += a * bb;
    }
    const double va = saa / n - sa / n * sa / n, vb = sbb / n - sb / n * sb / n, cab = sab / n - sa / n * sb / n;
    const double vf = va + vb + 2 * cab;
    const double oracle_a = (va + cab) / vf, oracle_b = (vb + cab) / vf;

    const auto sim = variance_attribution(b.model, "Y");
    EXPECT_NEAR(sim.shares.at("A@t"), oracle_a, 0.02);
    EXPECT_NEAR(sim.shares.at("B@t"), oracle_b, 0.02);
    EXPECT_NEAR(sim.shares.at("A@t") + sim.shares.at("B@t"), 1.0, 1e-6);

    MomentOptions an;
    an.method = MomentMethod::analytic;
    const auto ana = variance_attribution(b.model, "Y", an);
    EXPECT_NEAR(ana.shares.at("A@t"), 0.5, 1e-12); // symmetric by construction: Var A = Var B = 1
    EXPECT_NEAR(ana.fitted_variance, 3.0, 1e-9);
}

TEST(Attribution, AnalyticMomentsMatchSimulation) {
    const auto g = generate(five_node_spec(1, 6, 5, 0.0));
    MomentOptions an;
    an.method = MomentMethod::analytic;
    MomentOptions sim;
    sim.chains = 1000;
    const auto a = stationary_moments(g.truth, an), s = stationary_moments(g.truth, sim);
    for (Eigen::Index i = 0; i < a.cov.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cov.cols(); ++j)
            EXPECT_NEAR(s.cov(i, j), a.cov(i, j), 0.08 * std::sqrt(a.cov(i, i) * a.cov(j, j)) + 1e-9) << i << "," << j;
    // Weather node: Var W = 1 / (1 - 0.25); lag-1 autocovariance 0.5 Var W.
    const auto w = Eigen::Index(a.index({"W", 0})), w1 = Eigen::Index(a.index({"W", 1}));
    EXPECT_NEAR(a.cov(w, w), 4.0 / 3.0, 1e-9);
    EXPECT_NEAR(a.cov(w, w1), 2.0 / 3.0, 1e-9);
    for (const auto& node : {"C1", "C2"}) {
        const auto r = variance_attribution(g.truth, node, an);
        double sum = 0;
        for (const auto& [k, v] : r.shares) {
            sum += v;
            EXPECT_GE(v, -1.0);
            EXPECT_LE(v, 2.0);
        }
        EXPECT_NEAR(sum, 1.0, 1e-6);
    }
}

namespace {

// Exposure X with a direct path to Y and a mediated path through M.
CausalModel mediation_model(double direct, double via, bool lagged_mediation) {
    GeneratorSpec s;
    s.variables = {{"X", Tier::pollutant, false}, {"M", Tier::condition, false}, {"Y", Tier::condition, false}};
    s.dag = TwoSliceDag({"X", "M", "Y"});
    s.nodes["X"] = {};
    s.nodes["M"] = {};
    s.nodes["Y"] = {};
    if (direct != 0.0) {
        s.dag.add({"X", "Y", false});
        s.nodes["Y"].coefficients["X@t"] = direct;
    }
    if (via != 0.0) {
        s.dag.add({"X", "M", false});
        s.nodes["M"].coefficients["X@t"] = 1.0;
        s.dag.add({"M", "Y", lagged_mediation});
        s.nodes["Y"].coefficients[lagged_mediation ? "M@t-1" : "M@t"] = via;
    }
    return build(s, 2).model;
}

} // namespace

TEST(Mediation, Examples) {
    const auto none = mediation_share(mediation_model(0.5, 0.0, false), "X", {"M"}, "Y", 2);
    EXPECT_FALSE(none.no_effect);
    EXPECT_NEAR(none.factor, 1.0, 1e-12);

    const auto chain = mediation_share(mediation_model(0.0, 0.5, false), "X", {"M"}, "Y", 2);
    EXPECT_LT(chain.factor, 0.05);

    const auto parallel = mediation_share(mediation_model(0.5, 0.5, true), "X", {"M"}, "Y", 1);
    EXPECT_NEAR(parallel.factor, 0.5, 0.05);
    EXPECT_NEAR(parallel.intact_explained, 0.5, 1e-12);

    const auto zero = mediation_share(mediation_model(0.0, 0.0, false), "X", {"M"}, "Y", 2);
    EXPECT_TRUE(zero.no_effect);
    EXPECT_THROW(mediation_share(mediation_model(0.5, 0.5, true), "X", {"X"}, "Y", 1), Error);
}

TEST(Mediation, ImpulseResponseOfLaggedChain) {
    const auto m = mediation_model(0.0, 0.5, true);
    const auto r = impulse_response(m, "X", "Y", 3);
    ASSERT_EQ(r.size(), 4u);
    EXPECT_EQ(r[0], 0.0);
    EXPECT_NEAR(r[1], 0.5, 1e-12);
    EXPECT_EQ(r[2], 0.0);
}

namespace {

// Lag-1 chain N0 -> N1 -> ... -> Nk with coefficients b.
GeneratedPanel lagged_chain(const std::vector<double>& b, std::uint64_t seed) {
    GeneratorSpec s;
    s.n_locations = 5;
    s.n_weeks = 30;
    s.seed = seed;
    std::vector<std::string> names;
    for (std::size_t i = 0; i <= b.size(); ++i) names.push_back("N" + std::to_string(i));
    for (const auto& n : names) s.variables.push_back({n, Tier::condition, false});
    s.dag = TwoSliceDag(names);
    s.nodes[names[0]] = {};
    for (std::size_t i = 0; i < b.size(); ++i) {
        s.dag.add({names[i], names[i + 1], true});
        s.nodes[names[i + 1]] = {0.0, {{names[i] + "@t-1", b[i]}}, std::nullopt, 1.0, {}};
    }
    return generate(s);
}

} // namespace

TEST(Counterfactual, SameValueAndPathLengthAndMagnitude) {
    const auto g = lagged_chain({0.8, -0.5, 0.6}, 4);
    const auto& ds = g.data;
    const auto id = ds.locations()[1].id;
    const Date anchor = ds.weeks()[10];
    const double factual = ds.value(1, 10, 0);

    const auto same = counterfactual(g.truth, ds, "N0", id, anchor, factual, 8);
    for (const auto& [n, d] : same.delta) EXPECT_EQ(d.cwiseAbs().maxCoeff(), 0.0) << n;

    const auto cf = counterfactual(g.truth, ds, "N0", id, anchor, factual + 2.0, 8);
    const auto& d3 = cf.delta.at("N3");
    for (Eigen::Index s = 0; s < 3; ++s) EXPECT_EQ(d3.row(s).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_NEAR(d3(3, 1), 0.8 * -0.5 * 0.6 * 2.0, 1e-12);
    EXPECT_EQ(d3.col(0).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_NEAR(cf.delta.at("N1")(1, 1), 1.6, 1e-12);
    EXPECT_EQ(cf.weeks.front(), anchor);
    EXPECT_EQ(cf.weeks.size(), 9u);

    // Factual world reproduces the data on observed cells.
    EXPECT_EQ(cf.factual.at("N2")(4, 3), ds.value(3, 14, 2));
}

TEST(Counterfactual, Errors) {
    auto spec = five_node_spec(3, 6, 20, 0.3);
    const auto g = generate(spec);
    const auto& ds = g.data;
    std::optional<std::pair<std::size_t, std::size_t>> hole;
    const auto c1 = *ds.find_variable("C1");
    for (std::size_t l = 0; l < 6 && !hole; ++l)
        for (std::size_t w = 0; w < 10 && !hole; ++w)
            if (ds.missing(l, w, c1)) hole = {{l, w}};
    ASSERT_TRUE(hole);
    try {
        counterfactual(g.truth, ds, "C1", ds.locations()[hole->first].id, ds.weeks()[hole->second], 1.0, 3);
        ADD_FAILURE();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::AnchorMissing);
    }
    EXPECT_THROW(counterfactual(g.truth, ds, "C1", ds.locations()[0].id, ds.weeks()[15], 1.0, 10), Error);
}

TEST(QueryOutput, JsonAndCsv) {
    const auto g = generate(five_node_spec(6, 4, 6, 0.0));
    InterventionSpec iv;
    iv.kind = InterventionSpec::Kind::scale;
    iv.target = "P1";
    iv.value = 0.75;
    const auto q = intervene(g.truth, iv, g.data.select_weeks({5}), 3, 5, 1);
    const auto j = to_json(q);
    EXPECT_EQ(j.at("format"), "stcn.query_result/1");
    const auto csv = to_csv(q);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 5 * 4 * 4);
}
