#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "stcn/error.hpp"
#include "stcn/spatial.hpp"

namespace stcn {

struct VariogramBin {
    double distance_km = 0.0; // pair-weighted mean distance
    double gamma = 0.0;       // mean of (z_i - z_j)^2 / 2
    std::size_t pairs = 0;
};

struct VariogramFit {
    KernelParams kernel;
    double sill = 0.0;
    double spatial_fraction = 0.0;
    bool merged_bins = false;
    std::vector<VariogramBin> bins;
};

struct VariogramOptions {
    int n_bins = 15;
    std::size_t min_pairs = 30;
    std::size_t min_locations = 10;
    int range_grid = 120;
    double max_nugget = 0.99;
};

namespace detail {

struct ExpFitAtRange {
    double c0 = 0.0, c1 = 0.0, sse = std::numeric_limits<double>::infinity();
};

// Weighted non-negative least squares for gamma = c0 + c1 (1 - exp(-h / r)).
inline ExpFitAtRange fit_exp_at_range(const std::vector<VariogramBin>& bins, const std::vector<double>& w, double r) {
    double sw = 0, sg = 0, sgg = 0, sy = 0, sgy = 0;
    std::vector<double> g(bins.size());
    for (std::size_t j = 0; j < bins.size(); ++j) {
        g[j] = 1.0 - std::exp(-bins[j].distance_km / r);
        sw += w[j];
        sg += w[j] * g[j];
        sgg += w[j] * g[j] * g[j];
        sy += w[j] * bins[j].gamma;
        sgy += w[j] * g[j] * bins[j].gamma;
    }
    auto sse_of = [&](double c0, double c1) {
        double s = 0;
        for (std::size_t j = 0; j < bins.size(); ++j) {
            const double e = bins[j].gamma - c0 - c1 * g[j];
            s += w[j] * e * e;
        }
        return s;
    };
    ExpFitAtRange best;
    auto consider = [&](double c0, double c1) {
        if (c0 < 0.0 || c1 < 0.0) return;
        const double s = sse_of(c0, c1);
        if (s < best.sse) best = {c0, c1, s};
    };
    const double det = sw * sgg - sg * sg;
    if (det > 1e-12 * sw * sgg) consider((sgg * sy - sg * sgy) / det, (sw * sgy - sg * sy) / det);
    consider(sy / sw, 0.0);
    if (sgg > 0.0) consider(0.0, sgy / sgg);
    if (!std::isfinite(best.sse)) best = {0.0, 0.0, sse_of(0.0, 0.0)};
    return best;
}

} // namespace detail

// Empirical semivariogram pooled over the columns of `fields` (locations x
// replicates, NaN = absent), then a weighted least-squares exponential fit.
inline VariogramFit fit_variogram(const DistanceMatrix& dist, const Eigen::MatrixXd& fields,
                                  const VariogramOptions& opt = {}) {
    const auto n_loc = static_cast<Eigen::Index>(dist.size());
    if (fields.rows() != n_loc) fail(ErrorKind::DimensionMismatch, "field rows must match the distance matrix");

    std::size_t with_values = 0;
    double first = std::numeric_limits<double>::quiet_NaN();
    bool constant = true;
    for (Eigen::Index i = 0; i < n_loc; ++i) {
        bool any = false;
        for (Eigen::Index t = 0; t < fields.cols(); ++t) {
            const double v = fields(i, t);
            if (std::isnan(v)) continue;
            any = true;
            if (std::isnan(first)) first = v;
            else if (v != first) constant = false;
        }
        if (any) ++with_values;
    }
    if (with_values < opt.min_locations)
        fail(ErrorKind::InvalidArgument, "variogram needs at least " + std::to_string(opt.min_locations) +
                                             " locations with values");
    if (constant) fail(ErrorKind::DegenerateVariogram, "field is constant");

    const double h_max = 0.5 * dist.max_distance();
    if (!(h_max > 0.0)) fail(ErrorKind::DegenerateVariogram, "all sites co-located");
    const double width = h_max / opt.n_bins;

    struct Pair {
        Eigen::Index i, j;
        int bin;
        double d;
    };
    std::vector<Pair> pairs;
    for (Eigen::Index i = 0; i < n_loc; ++i)
        for (Eigen::Index j = i + 1; j < n_loc; ++j) {
            if (!dist.linked(i, j)) continue;
            const double d = dist(i, j);
            if (d <= 0.0 || d > h_max) continue;
            const int b = std::min(opt.n_bins - 1, static_cast<int>(d / width));
            pairs.push_back({i, j, b, d});
        }

    std::vector<double> sum(opt.n_bins, 0.0), dsum(opt.n_bins, 0.0);
    std::vector<std::size_t> count(opt.n_bins, 0);
    for (Eigen::Index t = 0; t < fields.cols(); ++t) {
        for (const auto& p : pairs) {
            const double a = fields(p.i, t), b = fields(p.j, t);
            if (std::isnan(a) || std::isnan(b)) continue;
            const double diff = a - b;
            sum[p.bin] += 0.5 * diff * diff;
            dsum[p.bin] += p.d;
            ++count[p.bin];
        }
    }

    VariogramFit fit;
    double run_sum = 0, run_d = 0;
    std::size_t run_n = 0;
    for (int b = 0; b < opt.n_bins; ++b) {
        run_sum += sum[b];
        run_d += dsum[b];
        run_n += count[b];
        if (run_n >= opt.min_pairs) {
            if (run_n != count[b]) fit.merged_bins = true;
            fit.bins.push_back({run_d / run_n, run_sum / run_n, run_n});
            run_sum = run_d = 0;
            run_n = 0;
        }
    }
    if (run_n > 0) {
        fit.merged_bins = true;
        if (fit.bins.empty()) {
            fit.bins.push_back({run_d / run_n, run_sum / run_n, run_n});
        } else {
            auto& last = fit.bins.back();
            const std::size_t n = last.pairs + run_n;
            last.gamma = (last.gamma * last.pairs + run_sum) / n;
            last.distance_km = (last.distance_km * last.pairs + run_d) / n;
            last.pairs = n;
        }
    }
    if (fit.bins.size() < 2) fail(ErrorKind::DegenerateVariogram, "too few distance pairs to fit a variogram");

    std::vector<double> w(fit.bins.size());
    for (std::size_t j = 0; j < fit.bins.size(); ++j)
        w[j] = static_cast<double>(fit.bins[j].pairs) / (fit.bins[j].distance_km * fit.bins[j].distance_km);

    // Range search on a log grid bounded by the first bin and twice the
    // fitted span, then golden-section refinement.
    const double r_lo = fit.bins.front().distance_km;
    const double r_hi = 2.0 * h_max;
    const double lo = std::log(r_lo), hi = std::log(std::max(r_hi, r_lo * 1.0001));
    int best_k = 0;
    double best_sse = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= opt.range_grid; ++k) {
        const double r = std::exp(lo + (hi - lo) * k / opt.range_grid);
        const double s = detail::fit_exp_at_range(fit.bins, w, r).sse;
        if (s < best_sse) {
            best_sse = s;
            best_k = k;
        }
    }
    const double step = (hi - lo) / opt.range_grid;
    double a = lo + step * std::max(0, best_k - 1), c = lo + step * std::min(opt.range_grid, best_k + 1);
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = c - phi * (c - a), x2 = a + phi * (c - a);
    double f1 = detail::fit_exp_at_range(fit.bins, w, std::exp(x1)).sse;
    double f2 = detail::fit_exp_at_range(fit.bins, w, std::exp(x2)).sse;
    for (int it = 0; it < 60; ++it) {
        if (f1 < f2) {
            c = x2;
            x2 = x1;
            f2 = f1;
            x1 = c - phi * (c - a);
            f1 = detail::fit_exp_at_range(fit.bins, w, std::exp(x1)).sse;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (c - a);
            f2 = detail::fit_exp_at_range(fit.bins, w, std::exp(x2)).sse;
        }
    }
    double log_r = 0.5 * (a + c);
    auto sol = detail::fit_exp_at_range(fit.bins, w, std::exp(log_r));
    const double grid_r = lo + step * best_k;
    if (auto g = detail::fit_exp_at_range(fit.bins, w, std::exp(grid_r)); g.sse < sol.sse) {
        sol = g;
        log_r = grid_r;
    }

    fit.sill = sol.c0 + sol.c1;
    if (!(fit.sill > 0.0)) fail(ErrorKind::DegenerateVariogram, "fitted sill is zero");
    fit.kernel.range_km = std::exp(log_r);
    fit.kernel.nugget = std::min(opt.max_nugget, sol.c0 / fit.sill);
    fit.spatial_fraction = 1.0 - fit.kernel.nugget;
    return fit;
}

// Convenience overload for a single field over `locs`.
inline VariogramFit fit_variogram(const std::vector<Location>& locs, const Eigen::VectorXd& values,
                                  const VariogramOptions& opt = {}) {
    return fit_variogram(DistanceMatrix(locs), Eigen::MatrixXd(values), opt);
}

} // namespace stcn
