// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <optional>

namespace wprocova {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Regression model matrix. Row i holds the predictor vector of participant i.
///
/// Construction enforces N > M+1 (more rows than columns). Column rank is
/// checked when a fit is attempted, since that needs a factorization anyway.
class DesignMatrix {
public:
    explicit DesignMatrix(Matrix values);

    Eigen::Index rows() const noexcept { return values_.rows(); }
    Eigen::Index cols() const noexcept { return values_.cols(); }
    const Matrix& values() const noexcept { return values_; }

private:
    Matrix values_;
};

struct RegressionFit {
    Vector beta_hat;
    Vector residuals;  // y - fitted, on the original (unweighted) scale
    Vector fitted;
    Vector leverages;  // diagonal of the (weighted) hat matrix
    double sigma2_hat = 0.0;
    std::optional<Vector> weights;  // 1 / variance, present for weighted fits
};

enum class HcFlavor { HC0, HC1 };

struct SandwichCovariance {
    Matrix matrix;
    HcFlavor flavor = HcFlavor::HC1;
};

/// Relative threshold on the pivoted R diagonal below which a design is
/// declared rank deficient.
inline constexpr double kRankTolerance = 1e-10;

RegressionFit fit_ols(const DesignMatrix& X, const Vector& y);

/// Weighted least squares with known per-row variances. Minimizes
/// sum_i (y_i - x_i' b)^2 / variances_i.
RegressionFit fit_wls(const DesignMatrix& X, const Vector& y, const Vector& variances);

/// HC0/HC1 sandwich on the weight-transformed system: rows of X and residuals
/// are divided by sqrt(variance_i) before forming bread and meat. HC1 scales
/// HC0 by N / (N - cols).
SandwichCovariance hc_covariance(const RegressionFit& fit, const DesignMatrix& X, HcFlavor flavor);

/// Orthonormal basis (N x cols) of the column space of X; rows give h_ii as
/// their squared norms and h_ik as inner products.
Matrix column_basis(const DesignMatrix& X);

/// Full N x N hat matrix X (X'X)^{-1} X'. Only the theory oracles need this;
/// fits extract leverages from the factorization.
Matrix hat_matrix(const DesignMatrix& X);

}  // namespace wprocova
