#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/QR>

#include "stcn/error.hpp"
#include "stcn/spatial.hpp"

namespace stcn {

struct LeastSquares {
    Eigen::VectorXd beta;
    Eigen::MatrixXd cov_unscaled; // (X^T X)^{-1}
    double rss = 0.0;
};

// Least squares on an already whitened system. Columns are equilibrated
// before a column-pivoting QR so rank detection is scale free.
inline LeastSquares solve_least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                        const std::vector<std::string>& names = {}) {
    const auto p = X.cols();
    if (X.rows() != y.size()) fail(ErrorKind::DimensionMismatch, "design rows do not match response length");
    if (X.rows() < p) fail(ErrorKind::RankDeficient, "fewer rows than columns");
    Eigen::VectorXd scale(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const double n = X.col(j).norm();
        scale(j) = n > 0.0 ? n : 1.0;
    }
    const Eigen::MatrixXd Xs = X * scale.cwiseInverse().asDiagonal();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xs);
    qr.setThreshold(1e-10);
    if (qr.rank() < p) {
        std::string cols;
        for (Eigen::Index k = qr.rank(); k < p; ++k) {
            const auto j = qr.colsPermutation().indices()(k);
            if (!cols.empty()) cols += ", ";
            cols += j < static_cast<Eigen::Index>(names.size()) ? names[j] : "column " + std::to_string(j);
        }
        fail(ErrorKind::RankDeficient, "collinear design columns: " + cols);
    }
    LeastSquares out;
    out.beta = qr.solve(y).cwiseQuotient(scale);
    const Eigen::MatrixXd R = qr.matrixR().topLeftCorner(p, p).template triangularView<Eigen::Upper>();
    const Eigen::MatrixXd Rinv =
        R.template triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
    const Eigen::MatrixXd perm_cov = Rinv * Rinv.transpose();
    Eigen::MatrixXd cov(p, p);
    const auto& idx = qr.colsPermutation().indices();
    for (Eigen::Index a = 0; a < p; ++a)
        for (Eigen::Index b = 0; b < p; ++b) cov(idx(a), idx(b)) = perm_cov(a, b);
    out.cov_unscaled = scale.cwiseInverse().asDiagonal() * cov * scale.cwiseInverse().asDiagonal();
    out.rss = (y - X * out.beta).squaredNorm();
    return out;
}

struct GlsResult {
    Eigen::VectorXd beta;
    Eigen::VectorXd se;
    double loglik = 0.0;
};

// Generalised least squares with a known error covariance `omega`, computed
// by Cholesky whitening followed by ordinary least squares.
inline GlsResult gls_fit(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, const Eigen::MatrixXd& omega,
                         const std::vector<std::string>& names = {}) {
    const auto n = y.size();
    if (X.rows() != n || omega.rows() != n || omega.cols() != n)
        fail(ErrorKind::DimensionMismatch, "gls_fit: rows(X), len(y) and dim(omega) must agree");
    Eigen::LLT<Eigen::MatrixXd> llt(omega);
    if (llt.info() != Eigen::Success || llt.matrixLLT().diagonal().minCoeff() <= 0.0)
        fail(ErrorKind::SingularKernel, "gls_fit: omega is not positive definite");
    const auto L = llt.matrixL();
    const Eigen::MatrixXd Xw = L.solve(X);
    const Eigen::VectorXd yw = L.solve(y);
    const auto ls = solve_least_squares(Xw, yw, names);
    GlsResult out;
    out.beta = ls.beta;
    out.se = ls.cov_unscaled.diagonal().cwiseSqrt();
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    out.loglik = -0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi) + log_det + ls.rss);
    return out;
}

} // namespace stcn
