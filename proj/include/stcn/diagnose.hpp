#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "stcn/model.hpp"
#include "stcn/parallel.hpp"
#include "stcn/rng.hpp"
#include "stcn/spatial.hpp"

namespace stcn {

inline double chi2_sf(double x, double df) {
    if (!(x > 0.0)) return 1.0;
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), x));
}

inline double normal_two_sided(double z) {
    return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), std::abs(z))));
}

// ---------------------------------------------------------------- temporal

struct LjungBox {
    double statistic = 0.0;
    double p = 1.0;
};

// Ljung-Box tests of one series at cumulative lags 1..max_lag. Missing
// entries (NaN) are left out of every lagged product; lag k uses n_k
// observed pairs in place of n - k. Empty when the series has fewer than
// min_points observations or zero variance.
inline std::vector<LjungBox> ljung_box(const std::vector<double>& x, int max_lag, std::size_t min_points = 20) {
    std::vector<LjungBox> out;
    double mean = 0.0;
    std::size_t n = 0;
    for (double v : x)
        if (!std::isnan(v)) {
            mean += v;
            ++n;
        }
    if (n < min_points || n < 2) return out;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : x)
        if (!std::isnan(v)) ss += (v - mean) * (v - mean);
    if (!(ss > 1e-300 * static_cast<double>(n))) return out;
    const double nn = static_cast<double>(n);
    double q = 0.0;
    for (int k = 1; k <= max_lag; ++k) {
        double acc = 0.0;
        std::size_t pairs = 0;
        for (std::size_t t = static_cast<std::size_t>(k); t < x.size(); ++t) {
            const double a = x[t], b = x[t - static_cast<std::size_t>(k)];
            if (std::isnan(a) || std::isnan(b)) continue;
            acc += (a - mean) * (b - mean);
            ++pairs;
        }
        if (pairs > 0) {
            const double r = acc / ss;
            q += r * r / static_cast<double>(pairs);
        }
        const double stat = nn * (nn + 2.0) * q;
        out.push_back({stat, chi2_sf(stat, k)});
    }
    return out;
}

struct TemporalPValue {
    std::size_t location = 0;
    int lag = 0;
    double statistic = 0.0;
    double p = 1.0;
};

struct TemporalResult {
    std::vector<TemporalPValue> tests;
    std::size_t skipped_locations = 0;
};

// Ljung-Box on each location's weighted residual series.
inline TemporalResult temporal_test(const ResidualPanel& res, int max_lag = 8, std::size_t min_points = 20) {
    if (max_lag < 1) fail(ErrorKind::InvalidArgument, "max_lag must be at least 1");
    TemporalResult out;
    const auto& u = res.weighted;
    for (Eigen::Index l = 0; l < u.rows(); ++l) {
        std::vector<double> series(static_cast<std::size_t>(u.cols()));
        for (Eigen::Index w = 0; w < u.cols(); ++w) series[static_cast<std::size_t>(w)] = u(l, w);
        const auto lb = ljung_box(series, max_lag, min_points);
        if (lb.empty()) {
            ++out.skipped_locations;
            continue;
        }
        for (int k = 0; k < max_lag; ++k)
            out.tests.push_back({static_cast<std::size_t>(l), k + 1, lb[static_cast<std::size_t>(k)].statistic,
                                 lb[static_cast<std::size_t>(k)].p});
    }
    return out;
}

// ----------------------------------------------------------------- spatial

struct MoranResult {
    double statistic = 0.0;
    double expected = 0.0;
    double variance = 0.0;
    double z = 0.0;
    double p = 1.0;
    std::optional<double> p_permutation;
    std::size_t n = 0;
};

// Moran's I of values observed at `sites` with row-standardised inverse
// distance weights (pairs beyond cutoff_km, or on different replicates, get
// weight 0). The p-value is two-sided from the normal approximation under
// randomisation; `permutations` > 0 adds a seeded permutation p-value.
// Returns nullopt when fewer than min_sites are observed or no site has a
// neighbour.
inline std::optional<MoranResult> morans_i(const std::vector<double>& values, const std::vector<std::size_t>& sites,
                                           const DistanceMatrix& dist, double cutoff_km, std::size_t min_sites = 5,
                                           int permutations = 0, std::uint64_t seed = 0) {
    const std::size_t n = sites.size();
    if (n < std::max<std::size_t>(min_sites, 4)) return std::nullopt;
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j || !dist.linked(sites[i], sites[j])) continue;
            const double d = dist.km()(static_cast<Eigen::Index>(sites[i]), static_cast<Eigen::Index>(sites[j]));
            if (d <= 0.0 || d > cutoff_km) continue;
            W(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0 / d;
            row += 1.0 / d;
        }
        if (row > 0.0) W.row(static_cast<Eigen::Index>(i)) /= row;
    }
    const double S0 = W.sum();
    if (!(S0 > 0.0)) return std::nullopt;
    Eigen::VectorXd z(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) z(static_cast<Eigen::Index>(i)) = values[i];
    z.array() -= z.mean();
    const double m2 = z.squaredNorm();
    if (!(m2 > 0.0)) return std::nullopt;
    const double nn = static_cast<double>(n);

    MoranResult r;
    r.n = n;
    r.statistic = nn / S0 * z.dot(W * z) / m2;
    r.expected = -1.0 / (nn - 1.0);
    const Eigen::MatrixXd sym = W + W.transpose();
    const double S1 = 0.5 * sym.array().square().sum();
    const double S2 = (W.rowwise().sum() + W.colwise().sum().transpose()).array().square().sum();
    const double b2 = nn * z.array().pow(4).sum() / (m2 * m2);
    const double num = nn * ((nn * nn - 3.0 * nn + 3.0) * S1 - nn * S2 + 3.0 * S0 * S0) -
                       b2 * ((nn * nn - nn) * S1 - 2.0 * nn * S2 + 6.0 * S0 * S0);
    r.variance = num / ((nn - 1.0) * (nn - 2.0) * (nn - 3.0) * S0 * S0) - r.expected * r.expected;
    if (r.variance > 0.0) {
        r.z = (r.statistic - r.expected) / std::sqrt(r.variance);
        r.p = normal_two_sided(r.z);
    }
    if (permutations > 0) {
        auto engine = make_stream(seed, 0x6d6f72616eULL);
        Eigen::VectorXd perm = z;
        const double dev = std::abs(r.statistic - r.expected);
        int extreme = 0;
        for (int k = 0; k < permutations; ++k) {
            std::shuffle(perm.data(), perm.data() + perm.size(), engine);
            const double ik = nn / S0 * perm.dot(W * perm) / m2;
            if (std::abs(ik - r.expected) >= dev - 1e-12) ++extreme;
        }
        r.p_permutation = (extreme + 1.0) / (permutations + 1.0);
    }
    return r;
}

struct SpatialPValue {
    std::size_t week = 0;
    MoranResult moran;
};

struct SpatialOptions {
    double cutoff_km = 0.0; // 0: derived from the kernel range or the median distance
    double range_multiplier = 1.0;
    std::size_t min_sites = 5;
    int permutations = 0;
    std::uint64_t seed = 0;
};

inline double moran_cutoff(const std::optional<KernelParams>& kernel, const DistanceMatrix& dist, const SpatialOptions& opt) {
    if (opt.cutoff_km > 0.0) return opt.cutoff_km;
    if (kernel) return opt.range_multiplier * kernel->range_km;
    return dist.median_distance();
}

// Moran's I of the decorrelated residuals in one week.
inline std::optional<MoranResult> spatial_test(const ResidualPanel& res, const DistanceMatrix& dist, std::size_t week,
                                               double cutoff_km, const SpatialOptions& opt = {}) {
    std::vector<double> vals;
    std::vector<std::size_t> sites;
    const auto w = static_cast<Eigen::Index>(week);
    for (Eigen::Index l = 0; l < res.decorrelated.rows(); ++l)
        if (!std::isnan(res.decorrelated(l, w))) {
            vals.push_back(res.decorrelated(l, w));
            sites.push_back(static_cast<std::size_t>(l));
        }
    return morans_i(vals, sites, dist, cutoff_km, opt.min_sites, opt.permutations, splitmix64(opt.seed + week));
}

// ----------------------------------------------------------- heterogeneity

struct BartlettResult {
    double statistic = 0.0;
    double p = 1.0;
    std::size_t groups = 0;
};

// Bartlett's test for equal variances. Groups with fewer than min_size
// values are ignored; fewer than two remaining groups is NotApplicable.
inline BartlettResult bartlett_test(const std::map<std::string, std::vector<double>>& samples, std::size_t min_size = 5) {
    std::vector<std::pair<double, double>> groups; // (n_i - 1, s_i^2)
    for (const auto& [g, xs] : samples) {
        if (xs.size() < min_size) continue;
        double m = 0.0;
        for (double x : xs) m += x;
        m /= static_cast<double>(xs.size());
        double ss = 0.0;
        for (double x : xs) ss += (x - m) * (x - m);
        groups.emplace_back(static_cast<double>(xs.size() - 1), ss / static_cast<double>(xs.size() - 1));
    }
    if (groups.size() < 2) fail(ErrorKind::NotApplicable, "heterogeneity test needs at least two groups");
    const double k = static_cast<double>(groups.size());
    double dof = 0.0, pooled = 0.0, sum_log = 0.0, sum_inv = 0.0;
    for (const auto& [d, s2] : groups) {
        if (!(s2 > 0.0)) fail(ErrorKind::NotApplicable, "a group has zero residual variance");
        dof += d;
        pooled += d * s2;
        sum_log += d * std::log(s2);
        sum_inv += 1.0 / d;
    }
    pooled /= dof;
    const double corr = 1.0 + (sum_inv - 1.0 / dof) / (3.0 * (k - 1.0));
    BartlettResult r;
    r.groups = groups.size();
    r.statistic = std::max(0.0, (dof * std::log(pooled) - sum_log) / corr);
    r.p = chi2_sf(r.statistic, k - 1.0);
    return r;
}

// Bartlett's test on decorrelated residuals grouped by location group.
inline BartlettResult heterogeneity_test(const ResidualPanel& res, std::size_t min_size = 5) {
    std::map<std::string, std::vector<double>> samples;
    for (Eigen::Index l = 0; l < res.decorrelated.rows(); ++l)
        for (Eigen::Index w = 0; w < res.decorrelated.cols(); ++w)
            if (!std::isnan(res.decorrelated(l, w)))
                samples[res.location_groups[static_cast<std::size_t>(l)]].push_back(res.decorrelated(l, w));
    return bartlett_test(samples, min_size);
}

// ------------------------------------------------------------ multiplicity

// Benjamini-Yekutieli step-up adjustment.
inline std::vector<double> adjust_multiplicity(const std::vector<double>& p) {
    if (p.empty()) fail(ErrorKind::InvalidPValues, "no p-values to adjust");
    for (double v : p)
        if (!(v >= 0.0 && v <= 1.0)) fail(ErrorKind::InvalidPValues, "p-values must lie in [0, 1]");
    const std::size_t m = p.size();
    double cm = 0.0;
    for (std::size_t i = 1; i <= m; ++i) cm += 1.0 / static_cast<double>(i);
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    std::vector<double> adj(m);
    double running = 1.0;
    for (std::size_t r = m; r-- > 0;) {
        const double v = std::min(1.0, static_cast<double>(m) * cm * p[order[r]] / static_cast<double>(r + 1));
        running = std::min(running, v);
        adj[order[r]] = std::max(running, p[order[r]]);
    }
    return adj;
}

// ------------------------------------------------------------------ report

struct DiagnosticOptions {
    int max_lag = 8;
    std::size_t min_points = 20;
    double alpha = 0.05;
    SpatialOptions spatial;
    std::size_t min_group_size = 5;
    unsigned threads = 1;
};

struct FamilySummary {
    std::size_t tests = 0;
    double raw_rejection = 0.0;      // share of raw p < alpha
    double adjusted_rejection = 0.0; // share of adjusted p < alpha
};

struct NodeDiagnostics {
    std::string node;
    TemporalResult temporal;
    std::vector<SpatialPValue> spatial;
    double moran_cutoff_km = 0.0;
    std::optional<BartlettResult> heterogeneity;
    std::vector<double> temporal_adjusted, spatial_adjusted;
    std::optional<double> heterogeneity_adjusted;
};

struct DiagnosticsReport {
    std::vector<NodeDiagnostics> nodes;
    FamilySummary temporal, spatial, heterogeneity;
    double alpha = 0.05;
    std::map<std::string, double> predictive_r2;
    std::optional<double> average_r2;
};

namespace detail {

inline FamilySummary summarize(const std::vector<double>& raw, const std::vector<double>& adj, double alpha) {
    FamilySummary s;
    s.tests = raw.size();
    if (raw.empty()) return s;
    std::size_t r = 0, a = 0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        r += raw[i] < alpha;
        a += adj[i] < alpha;
    }
    s.raw_rejection = static_cast<double>(r) / static_cast<double>(raw.size());
    s.adjusted_rejection = static_cast<double>(a) / static_cast<double>(raw.size());
    return s;
}

} // namespace detail

inline NodeDiagnostics diagnose_node(const NodeEstimate& est, const PanelDataset& ds, const DistanceMatrix& dist,
                                     const DiagnosticOptions& opt) {
    NodeDiagnostics nd;
    nd.node = est.node;
    const auto res = node_residuals(est, ds);
    nd.temporal = temporal_test(res, opt.max_lag, opt.min_points);
    nd.moran_cutoff_km = moran_cutoff(est.kernel, dist, opt.spatial);
    for (std::size_t w = 0; w < ds.n_weeks(); ++w)
        if (auto m = spatial_test(res, dist, w, nd.moran_cutoff_km, opt.spatial)) nd.spatial.push_back({w, *m});
    try {
        nd.heterogeneity = heterogeneity_test(res, opt.min_group_size);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::NotApplicable) throw;
    }
    return nd;
}

// Runs the three test families on every node, adjusts each family across
// all nodes, and reports rejection shares at opt.alpha.
inline DiagnosticsReport misspecification_report(const CausalModel& model, const PanelDataset& ds,
                                                 const DiagnosticOptions& opt = {}) {
    const DistanceMatrix dist(ds.locations());
    const auto& names = model.dag.nodes();
    DiagnosticsReport rep;
    rep.alpha = opt.alpha;
    rep.nodes.resize(names.size());
    parallel_for(names.size(), opt.threads,
                 [&](std::size_t i) { rep.nodes[i] = diagnose_node(model.estimate(names[i]), ds, dist, opt); });

    std::vector<double> tp, sp, hp;
    for (const auto& nd : rep.nodes) {
        for (const auto& t : nd.temporal.tests) tp.push_back(t.p);
        for (const auto& s : nd.spatial) sp.push_back(s.moran.p);
        if (nd.heterogeneity) hp.push_back(nd.heterogeneity->p);
    }
    const auto ta = tp.empty() ? tp : adjust_multiplicity(tp);
    const auto sa = sp.empty() ? sp : adjust_multiplicity(sp);
    const auto ha = hp.empty() ? hp : adjust_multiplicity(hp);
    std::size_t ti = 0, si = 0, hi = 0;
    for (auto& nd : rep.nodes) {
        nd.temporal_adjusted.assign(ta.begin() + static_cast<std::ptrdiff_t>(ti),
                                    ta.begin() + static_cast<std::ptrdiff_t>(ti + nd.temporal.tests.size()));
        ti += nd.temporal.tests.size();
        nd.spatial_adjusted.assign(sa.begin() + static_cast<std::ptrdiff_t>(si),
                                   sa.begin() + static_cast<std::ptrdiff_t>(si + nd.spatial.size()));
        si += nd.spatial.size();
        if (nd.heterogeneity) nd.heterogeneity_adjusted = ha[hi++];
    }
    rep.temporal = detail::summarize(tp, ta, opt.alpha);
    rep.spatial = detail::summarize(sp, sa, opt.alpha);
    rep.heterogeneity = detail::summarize(hp, ha, opt.alpha);
    return rep;
}

// ------------------------------------------------------------ prediction

struct PredictiveR2 {
    std::map<std::string, double> per_node;
    double average = 0.0;
    std::vector<std::string> averaged_over;
};

// One-step-ahead R^2 of every node on the validation panel, predicting each
// locally complete cell from its observed parents. SST is taken around the
// validation mean. The average covers condition-tier nodes (all nodes if the
// model has none).
inline PredictiveR2 predictive_r2(const CausalModel& model, const PanelDataset& validation) {
    PredictiveR2 out;
    for (const auto& node : model.dag.nodes()) {
        const auto& est = model.estimate(node);
        const auto d = build_design(validation, node, est.parents, false);
        if (d.n_rows == 0) continue;
        Eigen::VectorXd beta(static_cast<Eigen::Index>(est.parents.size() + 1));
        beta(0) = est.intercept;
        for (std::size_t k = 0; k < est.parents.size(); ++k) beta(static_cast<Eigen::Index>(k + 1)) = est.coefficient(est.parents[k]);
        double mean = 0.0;
        for (const auto& b : d.blocks) mean += b.y.sum();
        mean /= static_cast<double>(d.n_rows);
        double sse = 0.0, sst = 0.0;
        for (const auto& b : d.blocks) {
            sse += (b.y - b.X * beta).squaredNorm();
            sst += (b.y.array() - mean).square().sum();
        }
        out.per_node[node] = sst > 0.0 ? 1.0 - sse / sst : (sse == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity());
    }
    if (out.per_node.empty()) fail(ErrorKind::EmptyValidation, "validation panel has no usable rows");
    for (const auto& [n, r] : out.per_node) {
        const auto* v = model.variable(n);
        if (v && v->tier == Tier::condition) out.averaged_over.push_back(n);
    }
    if (out.averaged_over.empty())
        for (const auto& [n, r] : out.per_node) out.averaged_over.push_back(n);
    double s = 0.0;
    for (const auto& n : out.averaged_over) s += out.per_node.at(n);
    out.average = s / static_cast<double>(out.averaged_over.size());
    return out;
}

// Refits the model's DAG on the training panel, then scores it on validation.
inline PredictiveR2 predictive_r2(const CausalModel& model, const PanelDataset& train, const PanelDataset& validation,
                                  const FitConfig& cfg, unsigned threads = 1) {
    auto refit = fit_model(model.dag, train, cfg, threads);
    refit.variables = model.variables;
    return predictive_r2(refit, validation);
}

// ------------------------------------------------------------------ output

inline Json to_json(const DiagnosticsReport& r, const std::vector<Location>& locs) {
    auto fam = [](const FamilySummary& f) {
        return Json{{"tests", f.tests}, {"raw_rejection", f.raw_rejection}, {"adjusted_rejection", f.adjusted_rejection}};
    };
    Json nodes = Json::array();
    for (const auto& nd : r.nodes) {
        Json t = Json::array();
        for (std::size_t i = 0; i < nd.temporal.tests.size(); ++i) {
            const auto& x = nd.temporal.tests[i];
            t.push_back({{"location", locs.at(x.location).id}, {"lag", x.lag}, {"statistic", x.statistic},
                         {"p", x.p}, {"p_adjusted", nd.temporal_adjusted[i]}});
        }
        Json s = Json::array();
        for (std::size_t i = 0; i < nd.spatial.size(); ++i) {
            const auto& x = nd.spatial[i];
            Json e{{"week", x.week}, {"moran_i", x.moran.statistic}, {"z", x.moran.z}, {"p", x.moran.p},
                   {"p_adjusted", nd.spatial_adjusted[i]}, {"sites", x.moran.n}};
            if (x.moran.p_permutation) e["p_permutation"] = *x.moran.p_permutation;
            s.push_back(std::move(e));
        }
        Json n{{"node", nd.node}, {"temporal", std::move(t)}, {"spatial", std::move(s)},
               {"moran_cutoff_km", nd.moran_cutoff_km}, {"skipped_locations", nd.temporal.skipped_locations}};
        if (nd.heterogeneity)
            n["heterogeneity"] = {{"statistic", nd.heterogeneity->statistic}, {"p", nd.heterogeneity->p},
                                  {"p_adjusted", *nd.heterogeneity_adjusted}, {"groups", nd.heterogeneity->groups}};
        else
            n["heterogeneity"] = nullptr;
        nodes.push_back(std::move(n));
    }
    Json out{{"format", "stcn.diagnostics/1"},
             {"alpha", r.alpha},
             {"families", {{"temporal", fam(r.temporal)}, {"spatial", fam(r.spatial)}, {"heterogeneity", fam(r.heterogeneity)}}},
             {"nodes", std::move(nodes)}};
    if (!r.predictive_r2.empty()) {
        out["predictive_r2"] = r.predictive_r2;
        out["average_r2"] = r.average_r2 ? Json(*r.average_r2) : Json(nullptr);
    }
    return out;
}

inline std::string text_summary(const DiagnosticsReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "family          tests   raw<" << r.alpha << "   adjusted<" << r.alpha << "\n";
    auto row = [&](const char* name, const FamilySummary& f) {
        os << std::left << std::setw(14) << name << std::right << std::setw(7) << f.tests << std::setw(12)
           << f.raw_rejection << std::setw(16) << f.adjusted_rejection << "\n";
    };
    row("temporal", r.temporal);
    row("spatial", r.spatial);
    row("heterogeneity", r.heterogeneity);
    for (const auto& [n, v] : r.predictive_r2) os << "R2 " << n << " " << v << "\n";
    if (r.average_r2) os << "R2 average " << *r.average_r2 << "\n";
    return os.str();
}

} // namespace stcn
