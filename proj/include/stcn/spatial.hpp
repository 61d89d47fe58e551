#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "stcn/error.hpp"
#include "stcn/panel.hpp"

namespace stcn {

inline constexpr double kEarthRadiusKm = 6371.0;

inline double haversine_km(double lat1, double lon1, double lat2, double lon2) {
    constexpr double rad = std::numbers::pi / 180.0;
    const double phi1 = lat1 * rad, phi2 = lat2 * rad;
    const double dphi = (lat2 - lat1) * rad;
    const double dlambda = (lon2 - lon1) * rad;
    const double s1 = std::sin(dphi / 2.0), s2 = std::sin(dlambda / 2.0);
    const double a = std::clamp(s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2, 0.0, 1.0);
    return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(a));
}

inline double haversine_km(const Location& a, const Location& b) { return haversine_km(a.lat, a.lon, b.lat, b.lon); }

struct KernelParams {
    double range_km = 100.0;
    double nugget = 0.0;

    void validate() const {
        if (!(std::isfinite(range_km) && range_km > 0.0))
            fail(ErrorKind::InvalidArgument, "kernel range must be finite and positive");
        if (!(nugget >= 0.0 && nugget < 1.0)) fail(ErrorKind::InvalidArgument, "kernel nugget must lie in [0, 1)");
    }

    friend bool operator==(const KernelParams&, const KernelParams&) = default;
};

// 1 at d = 0, (1 - nugget) exp(-d / range) beyond.
inline double exp_correlation(double d, const KernelParams& p) {
    if (d <= 0.0) return 1.0;
    return (1.0 - p.nugget) * std::exp(-d / p.range_km);
}

class DistanceMatrix {
public:
    DistanceMatrix() = default;

    explicit DistanceMatrix(const std::vector<Location>& locs) : km_(locs.size(), locs.size()) {
        replicate_.reserve(locs.size());
        for (const auto& l : locs) replicate_.push_back(l.replicate);
        for (std::size_t i = 0; i < locs.size(); ++i) {
            km_(i, i) = 0.0;
            for (std::size_t j = i + 1; j < locs.size(); ++j) {
                const double d = haversine_km(locs[i], locs[j]);
                km_(i, j) = d;
                km_(j, i) = d;
            }
        }
    }

    std::size_t size() const { return static_cast<std::size_t>(km_.rows()); }
    double operator()(std::size_t i, std::size_t j) const { return km_(i, j); }
    const Eigen::MatrixXd& km() const { return km_; }
    bool linked(std::size_t i, std::size_t j) const { return replicate_[i] == replicate_[j]; }

    // Distances over linked pairs i < j.
    std::vector<double> pair_distances() const {
        std::vector<double> out;
        for (std::size_t i = 0; i < size(); ++i)
            for (std::size_t j = i + 1; j < size(); ++j)
                if (linked(i, j)) out.push_back(km_(i, j));
        return out;
    }

    double median_distance() const {
        auto d = pair_distances();
        if (d.empty()) return 0.0;
        auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
        std::nth_element(d.begin(), mid, d.end());
        if (d.size() % 2 == 1) return *mid;
        const double upper = *mid;
        const double lower = *std::max_element(d.begin(), mid);
        return 0.5 * (lower + upper);
    }

    double max_distance() const {
        double m = 0.0;
        for (std::size_t i = 0; i < size(); ++i)
            for (std::size_t j = i + 1; j < size(); ++j)
                if (linked(i, j)) m = std::max(m, km_(i, j));
        return m;
    }

    bool has_colocated_pair() const {
        for (std::size_t i = 0; i < size(); ++i)
            for (std::size_t j = i + 1; j < size(); ++j)
                if (linked(i, j) && km_(i, j) == 0.0) return true;
        return false;
    }

private:
    Eigen::MatrixXd km_;
    std::vector<int> replicate_;
};

// Unit diagonal; distinct sites use exp_correlation even when co-located, so
// only a zero nugget makes duplicate coordinates singular.
inline Eigen::MatrixXd kernel_correlation(const DistanceMatrix& dist, const KernelParams& p) {
    const auto n = static_cast<Eigen::Index>(dist.size());
    Eigen::MatrixXd c(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        c(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            double r = 0.0;
            if (dist.linked(i, j)) {
                const double d = dist(i, j);
                r = (1.0 - p.nugget) * std::exp(-d / p.range_km);
            }
            c(i, j) = r;
            c(j, i) = r;
        }
    }
    return c;
}

struct Factorization {
    Eigen::LLT<Eigen::MatrixXd> llt;
    double jitter = 0.0;
};

// Cholesky with the bounded jitter ladder 0, 1e-10, 1e-9, 1e-8.
inline Factorization factor_with_jitter(const Eigen::MatrixXd& m) {
    Factorization f;
    const double ladder[] = {0.0, 1e-10, 1e-9, 1e-8};
    const double floor = 1e-13;
    for (double jitter : ladder) {
        Eigen::MatrixXd a = m;
        if (jitter > 0.0) a.diagonal().array() += jitter;
        f.llt.compute(a);
        if (f.llt.info() == Eigen::Success) {
            const auto diag = f.llt.matrixLLT().diagonal();
            if (diag.size() == 0 || diag.minCoeff() > floor) {
                f.jitter = jitter;
                return f;
            }
        }
    }
    fail(ErrorKind::SingularKernel, "correlation matrix is not positive definite after jitter up to 1e-8");
}

class SpatialMatrix {
public:
    SpatialMatrix() = default;

    SpatialMatrix(std::vector<std::string> order, Eigen::MatrixXd corr)
        : order_(std::move(order)), corr_(std::move(corr)) {
        if (static_cast<Eigen::Index>(order_.size()) != corr_.rows() || corr_.rows() != corr_.cols())
            fail(ErrorKind::DimensionMismatch, "correlation matrix does not match its location order");
        factor_ = factor_with_jitter(corr_);
    }

    static SpatialMatrix identity(std::vector<std::string> order) {
        const auto n = static_cast<Eigen::Index>(order.size());
        return SpatialMatrix(std::move(order), Eigen::MatrixXd::Identity(n, n));
    }

    const std::vector<std::string>& order() const { return order_; }
    const Eigen::MatrixXd& corr() const { return corr_; }
    std::size_t size() const { return order_.size(); }
    double jitter() const { return factor_.jitter; }
    Eigen::MatrixXd lower() const { return factor_.llt.matrixL(); }
    const Eigen::LLT<Eigen::MatrixXd>& llt() const { return factor_.llt; }

    // L^{-1} x, where corr = L L^T.
    Eigen::VectorXd decorrelate(const Eigen::VectorXd& x) const {
        check(x);
        return factor_.llt.matrixL().solve(x);
    }

    // L x.
    Eigen::VectorXd correlate(const Eigen::VectorXd& x) const {
        check(x);
        return factor_.llt.matrixL() * x;
    }

private:
    void check(const Eigen::VectorXd& x) const {
        if (static_cast<std::size_t>(x.size()) != order_.size())
            fail(ErrorKind::DimensionMismatch, "vector length " + std::to_string(x.size()) + " does not match matrix order " +
                                                   std::to_string(order_.size()));
    }

    std::vector<std::string> order_;
    Eigen::MatrixXd corr_;
    Factorization factor_;
};

inline SpatialMatrix correlation_matrix(const std::vector<Location>& locs, const KernelParams& p) {
    if (locs.empty()) fail(ErrorKind::InvalidArgument, "correlation matrix needs at least one location");
    p.validate();
    std::vector<std::string> order;
    for (const auto& l : locs) {
        if (std::find(order.begin(), order.end(), l.id) != order.end())
            fail(ErrorKind::DuplicateKey, "duplicate location id '" + l.id + "'");
        order.push_back(l.id);
    }
    const DistanceMatrix dist(locs);
    if (p.nugget == 0.0 && dist.has_colocated_pair())
        fail(ErrorKind::SingularKernel, "co-located sites with zero nugget");
    return SpatialMatrix(std::move(order), kernel_correlation(dist, p));
}

inline Eigen::VectorXd decorrelate(const Eigen::VectorXd& residuals, const SpatialMatrix& m) {
    return m.decorrelate(residuals);
}

} // namespace stcn
