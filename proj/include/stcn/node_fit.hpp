#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "stcn/dag.hpp"
#include "stcn/error.hpp"
#include "stcn/gls.hpp"
#include "stcn/panel.hpp"
#include "stcn/spatial.hpp"
#include "stcn/variogram.hpp"

namespace stcn {

// Group key used when a single variance is shared by all locations.
inline const std::string kPooledGroup = "*";

enum class KernelMode { exponential, none };

struct FitConfig {
    double tolerance = 1e-6;
    int max_iterations = 50;
    KernelMode kernel = KernelMode::exponential;
    bool group_weights = true;
    std::optional<KernelParams> kernel_init; // default: nugget 0.5, median pairwise distance
    std::size_t min_rows = 0;                // 0 means parameter count + 5
    VariogramOptions variogram;
};

struct WarmStart {
    std::map<std::string, double> group_variances;
    std::optional<KernelParams> kernel;
};

struct NodeEstimate {
    std::string node;
    std::vector<ParentTerm> parents;
    double intercept = 0.0;
    double intercept_se = 0.0;
    std::map<std::string, double> coefficients; // keyed by ParentTerm::label()
    std::map<std::string, double> std_errors;
    std::optional<KernelParams> kernel;
    std::map<std::string, double> group_variances;
    std::size_t n_used = 0;
    double loglik_avg = 0.0;
    bool converged = false;
    int iterations = 0;
    std::vector<double> objective_trace; // negative log-likelihood after each iteration

    double coefficient(const ParentTerm& t) const {
        auto it = coefficients.find(t.label());
        return it == coefficients.end() ? 0.0 : it->second;
    }

    std::size_t param_count() const {
        return 1 + coefficients.size() + (kernel ? 2 : 0) + group_variances.size();
    }

    double variance_for(const std::string& group) const {
        if (auto it = group_variances.find(group); it != group_variances.end()) return it->second;
        if (auto it = group_variances.find(kPooledGroup); it != group_variances.end()) return it->second;
        fail(ErrorKind::SchemaMismatch, "no variance for group '" + group + "' in node '" + node + "'");
    }

    double mean_variance() const {
        double s = 0.0;
        for (const auto& [g, v] : group_variances) s += v;
        return group_variances.empty() ? 0.0 : s / static_cast<double>(group_variances.size());
    }
};

// Per-week rows of one node regression: locally complete cells only.
struct NodeDesign {
    struct Block {
        std::size_t week = 0;
        std::vector<Eigen::Index> locs;
        std::vector<int> group;
        Eigen::MatrixXd X; // intercept first
        Eigen::VectorXd y;
    };
    std::vector<Block> blocks;
    std::vector<std::string> group_names;
    std::vector<std::string> column_names;
    std::size_t n_rows = 0;
};

inline NodeDesign build_design(const PanelDataset& ds, const std::string& node, const std::vector<ParentTerm>& parents,
                               bool group_weights) {
    const auto yv = ds.find_variable(node);
    if (!yv) fail(ErrorKind::SchemaMismatch, "node '" + node + "' not in dataset");
    std::vector<std::size_t> pv;
    std::vector<int> lags;
    for (const auto& p : parents) {
        auto v = ds.find_variable(p.variable);
        if (!v) fail(ErrorKind::SchemaMismatch, "parent '" + p.variable + "' not in dataset");
        if (p.lag != 0 && p.lag != 1) fail(ErrorKind::InvalidArgument, "only lags 0 and 1 are supported");
        if (p.variable == node && p.lag == 0) fail(ErrorKind::InvalidArgument, "node cannot be its own lag-0 parent");
        pv.push_back(*v);
        lags.push_back(p.lag);
    }
    for (std::size_t a = 0; a < parents.size(); ++a)
        for (std::size_t b = a + 1; b < parents.size(); ++b)
            if (parents[a] == parents[b]) fail(ErrorKind::InvalidArgument, "duplicate parent " + parents[a].label());

    NodeDesign d;
    d.column_names.push_back("(intercept)");
    for (const auto& p : parents) d.column_names.push_back(p.label());
    std::map<std::string, int> gidx;
    if (group_weights) {
        d.group_names = ds.groups();
        for (std::size_t g = 0; g < d.group_names.size(); ++g) gidx[d.group_names[g]] = static_cast<int>(g);
    } else {
        d.group_names = {kPooledGroup};
    }
    std::vector<int> loc_group(ds.n_locations(), 0);
    if (group_weights)
        for (std::size_t l = 0; l < ds.n_locations(); ++l) loc_group[l] = gidx[ds.locations()[l].group];

    const auto p = static_cast<Eigen::Index>(parents.size() + 1);
    for (std::size_t w = 0; w < ds.n_weeks(); ++w) {
        NodeDesign::Block blk;
        blk.week = w;
        std::vector<double> rows;
        for (std::size_t l = 0; l < ds.n_locations(); ++l) {
            if (ds.missing(l, w, *yv)) continue;
            bool complete = true;
            for (std::size_t k = 0; k < pv.size() && complete; ++k) {
                if (lags[k] > static_cast<int>(w)) complete = false;
                else if (ds.missing(l, w - lags[k], pv[k])) complete = false;
            }
            if (!complete) continue;
            blk.locs.push_back(static_cast<Eigen::Index>(l));
            blk.group.push_back(loc_group[l]);
            rows.push_back(ds.value(l, w, *yv));
            rows.push_back(1.0);
            for (std::size_t k = 0; k < pv.size(); ++k) rows.push_back(ds.value(l, w - lags[k], pv[k]));
        }
        if (blk.locs.empty()) continue;
        const auto n = static_cast<Eigen::Index>(blk.locs.size());
        blk.X.resize(n, p);
        blk.y.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double* r = rows.data() + i * (p + 1);
            blk.y(i) = r[0];
            for (Eigen::Index j = 0; j < p; ++j) blk.X(i, j) = r[j + 1];
        }
        d.n_rows += blk.locs.size();
        d.blocks.push_back(std::move(blk));
    }
    return d;
}

namespace detail {

// Per-week Cholesky factors of the kernel correlation restricted to the
// block's locations; empty when no kernel is used.
struct KernelFactors {
    std::vector<Eigen::LLT<Eigen::MatrixXd>> llt;
    std::vector<double> log_det;
    bool identity = true;
};

inline KernelFactors factor_blocks(const NodeDesign& d, const DistanceMatrix& dist,
                                   const std::optional<KernelParams>& kernel) {
    KernelFactors f;
    f.log_det.assign(d.blocks.size(), 0.0);
    if (!kernel) return f;
    f.identity = false;
    const Eigen::MatrixXd full = kernel_correlation(dist, *kernel);
    f.llt.resize(d.blocks.size());
    for (std::size_t b = 0; b < d.blocks.size(); ++b) {
        const auto& locs = d.blocks[b].locs;
        const auto n = static_cast<Eigen::Index>(locs.size());
        Eigen::MatrixXd sub(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) sub(i, j) = full(locs[i], locs[j]);
        auto fac = factor_with_jitter(sub);
        f.log_det[b] = 2.0 * fac.llt.matrixLLT().diagonal().array().log().sum();
        f.llt[b] = std::move(fac.llt);
    }
    return f;
}

inline Eigen::VectorXd inv_sd(const NodeDesign::Block& blk, const Eigen::VectorXd& sigma2) {
    Eigen::VectorXd s(static_cast<Eigen::Index>(blk.group.size()));
    for (std::size_t i = 0; i < blk.group.size(); ++i) s(static_cast<Eigen::Index>(i)) = 1.0 / std::sqrt(sigma2(blk.group[i]));
    return s;
}

struct BetaSolve {
    Eigen::VectorXd beta;
    Eigen::MatrixXd cov;
};

inline BetaSolve solve_beta(const NodeDesign& d, const KernelFactors& f, const Eigen::VectorXd& sigma2) {
    const auto p = d.blocks.front().X.cols();
    Eigen::MatrixXd Xw(static_cast<Eigen::Index>(d.n_rows), p);
    Eigen::VectorXd yw(static_cast<Eigen::Index>(d.n_rows));
    Eigen::Index row = 0;
    for (std::size_t b = 0; b < d.blocks.size(); ++b) {
        const auto& blk = d.blocks[b];
        const auto n = blk.y.size();
        const Eigen::VectorXd s = inv_sd(blk, sigma2);
        Eigen::MatrixXd xb = s.asDiagonal() * blk.X;
        Eigen::VectorXd yb = s.asDiagonal() * blk.y;
        if (!f.identity) {
            f.llt[b].matrixL().solveInPlace(xb);
            f.llt[b].matrixL().solveInPlace(yb);
        }
        Xw.middleRows(row, n) = xb;
        yw.segment(row, n) = yb;
        row += n;
    }
    auto ls = solve_least_squares(Xw, yw, d.column_names);
    return {ls.beta, ls.cov_unscaled};
}

struct BlockResiduals {
    std::vector<Eigen::VectorXd> u; // r / sigma
    std::vector<Eigen::VectorXd> z; // L^{-1} u
};

inline BlockResiduals whiten_residuals(const NodeDesign& d, const KernelFactors& f, const Eigen::VectorXd& sigma2,
                                       const Eigen::VectorXd& beta) {
    BlockResiduals out;
    out.u.reserve(d.blocks.size());
    out.z.reserve(d.blocks.size());
    for (std::size_t b = 0; b < d.blocks.size(); ++b) {
        const auto& blk = d.blocks[b];
        Eigen::VectorXd u = inv_sd(blk, sigma2).asDiagonal() * (blk.y - blk.X * beta);
        Eigen::VectorXd z = u;
        if (!f.identity) f.llt[b].matrixL().solveInPlace(z);
        out.u.push_back(std::move(u));
        out.z.push_back(std::move(z));
    }
    return out;
}

inline double log_likelihood(const NodeDesign& d, const KernelFactors& f, const Eigen::VectorXd& sigma2,
                             const Eigen::VectorXd& beta) {
    const auto res = whiten_residuals(d, f, sigma2, beta);
    const Eigen::VectorXd log_s2 = sigma2.array().log();
    double ll = 0.0;
    for (std::size_t b = 0; b < d.blocks.size(); ++b) {
        const auto& blk = d.blocks[b];
        double ld = f.log_det[b];
        for (int g : blk.group) ld += log_s2(g);
        ll += -0.5 * (static_cast<double>(blk.y.size()) * std::log(2.0 * std::numbers::pi) + ld + res.z[b].squaredNorm());
    }
    return ll;
}

} // namespace detail

// Fits one node by GLS inside an IRLS loop: GLS for the coefficients, then a
// group-variance update from the decorrelated residuals, then a variogram
// refit of the kernel on the weighted residuals. Variance and kernel updates
// are only accepted (with step halving) when the likelihood does not drop.
inline NodeEstimate fit_node(const PanelDataset& ds, const DistanceMatrix& dist, const std::string& node,
                             std::vector<ParentTerm> parents, const FitConfig& cfg = {},
                             const WarmStart* warm = nullptr) {
    std::sort(parents.begin(), parents.end());
    if (dist.size() != ds.n_locations()) fail(ErrorKind::DimensionMismatch, "distance matrix does not match dataset");
    const NodeDesign d = build_design(ds, node, parents, cfg.group_weights);
    const std::size_t p = parents.size() + 1;
    const std::size_t min_rows = cfg.min_rows > 0 ? cfg.min_rows : p + 5;
    if (d.n_rows < min_rows)
        fail(ErrorKind::TooFewRows, "node '" + node + "' has " + std::to_string(d.n_rows) +
                                        " locally complete rows, needs " + std::to_string(min_rows));

    const auto G = static_cast<Eigen::Index>(d.group_names.size());
    double y_mean = 0.0, y_var = 0.0;
    for (const auto& blk : d.blocks) y_mean += blk.y.sum();
    y_mean /= static_cast<double>(d.n_rows);
    for (const auto& blk : d.blocks) y_var += (blk.y.array() - y_mean).square().sum();
    y_var /= static_cast<double>(d.n_rows);
    const double var_floor = 1e-12 * std::max(1.0, y_var);

    std::optional<KernelParams> kernel;
    if (cfg.kernel == KernelMode::exponential && ds.n_locations() > 1) {
        if (cfg.kernel_init) kernel = cfg.kernel_init;
        else kernel = KernelParams{std::max(dist.median_distance(), 1e-3), 0.5};
        if (warm && warm->kernel) kernel = warm->kernel;
        kernel->validate();
    }
    Eigen::VectorXd sigma2 = Eigen::VectorXd::Ones(G);
    if (warm)
        for (Eigen::Index g = 0; g < G; ++g)
            if (auto it = warm->group_variances.find(d.group_names[g]); it != warm->group_variances.end())
                sigma2(g) = std::max(it->second, var_floor);

    const bool refit_kernel = kernel.has_value() && ds.n_locations() >= cfg.variogram.min_locations;
    auto factors = detail::factor_blocks(d, dist, kernel);

    NodeEstimate est;
    est.node = node;
    est.parents = parents;

    detail::BetaSolve bs = detail::solve_beta(d, factors, sigma2);
    double ll = detail::log_likelihood(d, factors, sigma2, bs.beta);

    auto rel_change = [](double a, double b) { return std::abs(a - b) / (1.0 + std::abs(b)); };

    for (int it = 1; it <= cfg.max_iterations; ++it) {
        const Eigen::VectorXd beta_old = bs.beta;
        const Eigen::VectorXd sigma_old = sigma2;
        const auto kernel_old = kernel;

        // Variance step: fixed point of the likelihood score in log sigma_g,
        // mean over the group of u_i (R^{-1} u)_i.
        {
            const auto res = detail::whiten_residuals(d, factors, sigma2, bs.beta);
            Eigen::VectorXd acc = Eigen::VectorXd::Zero(G), cnt = Eigen::VectorXd::Zero(G);
            for (std::size_t b = 0; b < d.blocks.size(); ++b) {
                Eigen::VectorXd v = res.z[b];
                if (!factors.identity) factors.llt[b].matrixL().transpose().solveInPlace(v);
                for (std::size_t i = 0; i < d.blocks[b].group.size(); ++i) {
                    const int g = d.blocks[b].group[i];
                    acc(g) += res.u[b](static_cast<Eigen::Index>(i)) * v(static_cast<Eigen::Index>(i));
                    cnt(g) += 1.0;
                }
            }
            Eigen::VectorXd proposal = sigma2;
            for (Eigen::Index g = 0; g < G; ++g) {
                if (cnt(g) == 0.0) continue;
                const double factor = std::clamp(acc(g) / cnt(g), 1e-3, 1e3);
                proposal(g) = std::max(sigma2(g) * factor, var_floor);
            }
            for (int half = 0; half < 10; ++half) {
                const double t = std::ldexp(1.0, -half);
                Eigen::VectorXd cand = (sigma2.array().log() * (1.0 - t) + proposal.array().log() * t).exp();
                const double cand_ll = detail::log_likelihood(d, factors, cand, bs.beta);
                if (cand_ll >= ll) {
                    sigma2 = cand;
                    ll = cand_ll;
                    break;
                }
            }
        }

        // Kernel step: variogram of the weighted residuals u.
        if (refit_kernel) {
            const auto res = detail::whiten_residuals(d, factors, sigma2, bs.beta);
            Eigen::MatrixXd fields =
                Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(ds.n_locations()),
                                          static_cast<Eigen::Index>(d.blocks.size()),
                                          std::numeric_limits<double>::quiet_NaN());
            for (std::size_t b = 0; b < d.blocks.size(); ++b)
                for (std::size_t i = 0; i < d.blocks[b].locs.size(); ++i)
                    fields(d.blocks[b].locs[i], static_cast<Eigen::Index>(b)) = res.u[b](static_cast<Eigen::Index>(i));
            std::optional<KernelParams> proposal;
            try {
                proposal = fit_variogram(dist, fields, cfg.variogram).kernel;
            } catch (const Error&) {
                proposal.reset();
            }
            if (proposal && !(*proposal == *kernel)) {
                for (int half = 0; half < 10; ++half) {
                    const double t = std::ldexp(1.0, -half);
                    KernelParams cand{std::exp(std::log(kernel->range_km) * (1.0 - t) + std::log(proposal->range_km) * t),
                                      kernel->nugget * (1.0 - t) + proposal->nugget * t};
                    try {
                        auto cf = detail::factor_blocks(d, dist, cand);
                        const double cand_ll = detail::log_likelihood(d, cf, sigma2, bs.beta);
                        if (cand_ll >= ll) {
                            kernel = cand;
                            factors = std::move(cf);
                            ll = cand_ll;
                            break;
                        }
                    } catch (const Error& e) {
                        if (e.kind() != ErrorKind::SingularKernel) throw;
                    }
                }
            }
        }

        bs = detail::solve_beta(d, factors, sigma2);
        ll = detail::log_likelihood(d, factors, sigma2, bs.beta);
        est.objective_trace.push_back(-ll);
        est.iterations = it;

        double change = 0.0;
        for (Eigen::Index j = 0; j < bs.beta.size(); ++j) change = std::max(change, rel_change(bs.beta(j), beta_old(j)));
        for (Eigen::Index g = 0; g < G; ++g) change = std::max(change, rel_change(sigma2(g), sigma_old(g)));
        if (kernel) {
            change = std::max(change, rel_change(kernel->range_km, kernel_old->range_km));
            change = std::max(change, rel_change(kernel->nugget, kernel_old->nugget));
        }
        if (change < cfg.tolerance) {
            est.converged = true;
            break;
        }
    }

    est.intercept = bs.beta(0);
    est.intercept_se = std::sqrt(bs.cov(0, 0));
    for (std::size_t k = 0; k < parents.size(); ++k) {
        const auto j = static_cast<Eigen::Index>(k + 1);
        est.coefficients[parents[k].label()] = bs.beta(j);
        est.std_errors[parents[k].label()] = std::sqrt(bs.cov(j, j));
    }
    est.kernel = kernel;
    std::vector<bool> used(static_cast<std::size_t>(G), false);
    for (const auto& blk : d.blocks)
        for (int g : blk.group) used[static_cast<std::size_t>(g)] = true;
    for (Eigen::Index g = 0; g < G; ++g)
        if (used[static_cast<std::size_t>(g)]) est.group_variances[d.group_names[g]] = sigma2(g);
    est.n_used = d.n_rows;
    est.loglik_avg = ll / static_cast<double>(d.n_rows);
    return est;
}

inline NodeEstimate fit_node(const PanelDataset& ds, const std::string& node, std::vector<ParentTerm> parents,
                             const FitConfig& cfg = {}) {
    return fit_node(ds, DistanceMatrix(ds.locations()), node, std::move(parents), cfg);
}

// Residuals on locally complete cells (locations x weeks, NaN elsewhere).
struct ResidualPanel {
    std::string node;
    Eigen::MatrixXd raw;
    Eigen::MatrixXd weighted;
    Eigen::MatrixXd decorrelated;
    std::vector<std::string> location_groups;

    std::size_t count() const { return static_cast<std::size_t>((raw.array() == raw.array()).count()); }
};

inline ResidualPanel node_residuals(const NodeEstimate& est, const PanelDataset& ds) {
    const bool grouped = !est.group_variances.count(kPooledGroup);
    const NodeDesign d = build_design(ds, est.node, est.parents, grouped);
    Eigen::VectorXd sigma2(static_cast<Eigen::Index>(d.group_names.size()));
    std::vector<bool> known(d.group_names.size(), false);
    for (std::size_t g = 0; g < d.group_names.size(); ++g) {
        const bool has = est.group_variances.count(d.group_names[g]) || est.group_variances.count(kPooledGroup);
        known[g] = has;
        sigma2(static_cast<Eigen::Index>(g)) = has ? est.variance_for(d.group_names[g]) : 1.0;
    }
    for (const auto& blk : d.blocks)
        for (int g : blk.group)
            if (!known[static_cast<std::size_t>(g)])
                fail(ErrorKind::SchemaMismatch, "no variance for group '" + d.group_names[static_cast<std::size_t>(g)] +
                                                    "' in node '" + est.node + "'");
    Eigen::VectorXd beta(static_cast<Eigen::Index>(est.parents.size() + 1));
    beta(0) = est.intercept;
    for (std::size_t k = 0; k < est.parents.size(); ++k) beta(static_cast<Eigen::Index>(k + 1)) = est.coefficient(est.parents[k]);

    const DistanceMatrix dist(ds.locations());
    const auto factors = detail::factor_blocks(d, dist, est.kernel);

    ResidualPanel out;
    out.node = est.node;
    const auto L = static_cast<Eigen::Index>(ds.n_locations()), W = static_cast<Eigen::Index>(ds.n_weeks());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    out.raw = Eigen::MatrixXd::Constant(L, W, nan);
    out.weighted = out.raw;
    out.decorrelated = out.raw;
    for (const auto& l : ds.locations()) out.location_groups.push_back(l.group);
    for (std::size_t b = 0; b < d.blocks.size(); ++b) {
        const auto& blk = d.blocks[b];
        const Eigen::VectorXd r = blk.y - blk.X * beta;
        const Eigen::VectorXd u = detail::inv_sd(blk, sigma2).asDiagonal() * r;
        Eigen::VectorXd z = u;
        if (!factors.identity) factors.llt[b].matrixL().solveInPlace(z);
        const auto w = static_cast<Eigen::Index>(blk.week);
        for (std::size_t i = 0; i < blk.locs.size(); ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            out.raw(blk.locs[i], w) = r(ii);
            out.weighted(blk.locs[i], w) = u(ii);
            out.decorrelated(blk.locs[i], w) = z(ii);
        }
    }
    return out;
}

} // namespace stcn
