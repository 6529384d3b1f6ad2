// SPDX-License-Identifier: Apache-2.0
#include "wprocova/regress.hpp"

#include "wprocova/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace wprocova {

namespace {

using QR = Eigen::ColPivHouseholderQR<Matrix>;

QR factor(const Matrix& X) {
    QR qr(X);
    const auto p = X.cols();
    const auto& packed = qr.matrixQR();
    const double largest = std::abs(packed(0, 0));
    // Pivoting orders |R_jj| non-increasingly, so the last diagonal decides.
    for (Eigen::Index j = 0; j < p; ++j) {
        const double d = std::abs(packed(j, j));
        if (!(largest > 0.0) || !(d > kRankTolerance * largest)) {
            throw Error(ErrorKind::RankDeficient,
                        "design matrix is rank deficient (pivoted column " + std::to_string(j) +
                            " has |R_jj| = " + std::to_string(d) + ")");
        }
    }
    return qr;
}

Matrix thin_q(const QR& qr) {
    return qr.householderQ() * Matrix::Identity(qr.rows(), qr.cols());
}

RegressionFit fit_scaled(const DesignMatrix& X, const Vector& y, const Vector* variances) {
    const auto n = X.rows();
    const auto p = X.cols();
    if (y.size() != n) {
        throw Error(ErrorKind::DimensionMismatch,
                    "outcome length " + std::to_string(y.size()) + " does not match design rows " +
                        std::to_string(n));
    }

    Matrix Xt = X.values();
    Vector yt = y;
    Vector weights;
    if (variances != nullptr) {
        if (variances->size() != n) {
            throw Error(ErrorKind::DimensionMismatch, "variance vector length does not match design rows");
        }
        weights.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double v = (*variances)(i);
            if (!(v > 0.0) || !std::isfinite(v)) {
                throw Error(ErrorKind::NonPositiveVariance,
                            "variance at row " + std::to_string(i) + " is not strictly positive and finite");
            }
            const double scale = 1.0 / std::sqrt(v);
            Xt.row(i) *= scale;
            yt(i) *= scale;
            weights(i) = 1.0 / v;
        }
    }

    const QR qr = factor(Xt);

    RegressionFit fit;
    fit.beta_hat = qr.solve(yt);
    fit.fitted = X.values() * fit.beta_hat;
    fit.residuals = y - fit.fitted;
    // Differences within a few ulps of the operands are cancellation noise.
    constexpr double kRoundoff = 8.0 * std::numeric_limits<double>::epsilon();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::abs(fit.residuals(i)) <= kRoundoff * std::max(std::abs(y(i)), std::abs(fit.fitted(i)))) {
            fit.residuals(i) = 0.0;
        }
    }
    fit.leverages = thin_q(qr).rowwise().squaredNorm();

    double ssr = 0.0;
    if (variances != nullptr) {
        for (Eigen::Index i = 0; i < n; ++i) ssr += fit.residuals(i) * fit.residuals(i) / (*variances)(i);
        fit.weights = std::move(weights);
    } else {
        ssr = fit.residuals.squaredNorm();
    }
    fit.sigma2_hat = ssr / static_cast<double>(n - p);
    return fit;
}

}  // namespace

DesignMatrix::DesignMatrix(Matrix values) : values_(std::move(values)) {
    if (values_.cols() < 1) {
        throw Error(ErrorKind::EmptyInput, "design matrix has no columns");
    }
    if (values_.rows() <= values_.cols()) {
        throw Error(ErrorKind::DimensionMismatch,
                    "design matrix needs more rows than columns (got " + std::to_string(values_.rows()) +
                        " x " + std::to_string(values_.cols()) + ")");
    }
    if (!values_.allFinite()) {
        throw Error(ErrorKind::InvalidArgument, "design matrix contains non-finite entries");
    }
}

RegressionFit fit_ols(const DesignMatrix& X, const Vector& y) {
    return fit_scaled(X, y, nullptr);
}

RegressionFit fit_wls(const DesignMatrix& X, const Vector& y, const Vector& variances) {
    return fit_scaled(X, y, &variances);
}

SandwichCovariance hc_covariance(const RegressionFit& fit, const DesignMatrix& X, HcFlavor flavor) {
    const auto n = X.rows();
    const auto p = X.cols();
    if (fit.residuals.size() != n || fit.beta_hat.size() != p ||
        (fit.weights && fit.weights->size() != n)) {
        throw Error(ErrorKind::DimensionMismatch, "regression fit does not belong to this design");
    }

    Matrix Xt = X.values();
    Vector et = fit.residuals;
    if (fit.weights) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double root_w = std::sqrt((*fit.weights)(i));
            Xt.row(i) *= root_w;
            et(i) *= root_w;
        }
    }

    const QR qr = factor(Xt);
    const Matrix q = thin_q(qr);
    // Q' diag(e~^2) Q, then (X~'X~)^{-1} X~' = P R^{-1} Q'.
    const Matrix scaled = et.asDiagonal() * q;
    const Matrix meat = scaled.transpose() * scaled;
    const Matrix r_inv = qr.matrixR()
                             .topLeftCorner(p, p)
                             .template triangularView<Eigen::Upper>()
                             .solve(Matrix::Identity(p, p));
    const Matrix left = qr.colsPermutation() * r_inv;
    Matrix hc = left * meat * left.transpose();
    hc = 0.5 * (hc + hc.transpose()).eval();
    if (flavor == HcFlavor::HC1) {
        hc *= static_cast<double>(n) / static_cast<double>(n - p);
    }
    return SandwichCovariance{std::move(hc), flavor};
}

Matrix column_basis(const DesignMatrix& X) {
    return thin_q(factor(X.values()));
}

Matrix hat_matrix(const DesignMatrix& X) {
    const QR qr = factor(X.values());
    const Matrix q = thin_q(qr);
    return q * q.transpose();
}

}  // namespace wprocova
