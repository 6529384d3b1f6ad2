// SPDX-License-Identifier: Apache-2.0
#include "wprocova/theory.hpp"

#include "wprocova/error.hpp"
#include "wprocova/rng.hpp"
#include "wprocova/skedastic.hpp"
#include "wprocova/stats.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <string>

namespace wprocova::theory {

namespace {

void check_sigma2(const DesignMatrix& V, const Vector& sigma2) {
    if (sigma2.size() != V.rows()) throw Error(ErrorKind::DimensionMismatch, "sigma2 length differs from design rows");
    for (Eigen::Index i = 0; i < sigma2.size(); ++i) {
        if (!(sigma2(i) > 0.0) || !std::isfinite(sigma2(i))) {
            throw Error(ErrorKind::NonPositiveVariance, "sigma2 must be positive and finite");
        }
    }
}

void check_log_s2(const DesignMatrix& V, const Vector& log_s2) {
    if (log_s2.size() != V.rows()) throw Error(ErrorKind::DimensionMismatch, "log_s2 length differs from design rows");
    if (!log_s2.allFinite()) throw Error(ErrorKind::InvalidArgument, "log_s2 must be finite");
    const double centre = log_s2.mean();
    const double sxx = (log_s2.array() - centre).square().sum();
    if (!(sxx / static_cast<double>(log_s2.size() - 1) > kMinTwinVarianceDispersion)) {
        throw Error(ErrorKind::DegenerateTwinVariance, "log twin variances are constant");
    }
}

/// Rows of (U'U)^{-1} U' for U = (1, log s^2), in centred form.
std::pair<Vector, Vector> coefficient_rows(const Vector& log_s2) {
    const auto n = log_s2.size();
    const double centre = log_s2.mean();
    const Vector dev = log_s2.array() - centre;
    const double sxx = dev.squaredNorm();
    Vector slope = dev / sxx;
    Vector intercept = Vector::Constant(n, 1.0 / static_cast<double>(n)) - centre * slope;
    return {std::move(intercept), std::move(slope)};
}

Matrix outer_mean(const JointSample& s, const std::function<double(Eigen::Index)>& scale) {
    Matrix acc = Matrix::Zero(3, 3);
    const auto n = static_cast<Eigen::Index>(s.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Vector3d v(1.0, s.w(i), s.m(i));
        acc.noalias() += scale(i) * (v * v.transpose());
    }
    return acc / static_cast<double>(n);
}

Matrix checked_inverse(const Matrix& A, const char* what) {
    Eigen::ColPivHouseholderQR<Matrix> qr(A);
    const auto& packed = qr.matrixQR();
    const double largest = std::abs(packed(0, 0));
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
        if (!(largest > 0.0) || !(std::abs(packed(j, j)) > kRankTolerance * largest)) {
            throw Error(ErrorKind::SingularBread, std::string(what) + " is not invertible");
        }
    }
    return qr.inverse();
}

void check_joint(const JointSample& s, const SkedasticLimit& G) {
    const auto n = static_cast<Eigen::Index>(s.size());
    if (s.m.size() != n || s.s2.size() != n || s.sigma2.size() != n) {
        throw Error(ErrorKind::DimensionMismatch, "joint sample columns differ in length");
    }
    if (s.size() < kMinJointSample) {
        throw Error(ErrorKind::InvalidArgument,
                    "joint sample needs at least " + std::to_string(kMinJointSample) + " draws");
    }
    if (!G) throw Error(ErrorKind::InvalidArgument, "skedastic limit function is empty");
}

Vector evaluate_limit(const JointSample& s, const SkedasticLimit& G) {
    const auto n = static_cast<Eigen::Index>(s.size());
    Vector g(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        g(i) = G(s.s2(i));
        if (!(g(i) > 0.0) || !std::isfinite(g(i))) {
            throw Error(ErrorKind::InvalidArgument, "skedastic limit must be positive and finite on the sample");
        }
    }
    return g;
}

Matrix symmetrize(const Matrix& A) {
    return 0.5 * (A + A.transpose());
}

}  // namespace

Matrix ResidualMoments::squared_covariances() const {
    return 2.0 * covariances.array().square().matrix();
}

Matrix ResidualMoments::z_correlation() const {
    const Vector inv_sd = variances.array().rsqrt();
    Matrix r = inv_sd.asDiagonal() * covariances * inv_sd.asDiagonal();
    r.diagonal().setOnes();
    return r;
}

Vector residual_variances(const DesignMatrix& V, const Vector& sigma2) {
    check_sigma2(V, sigma2);
    const Matrix q = column_basis(V);
    // sum_k h_ik^2 sigma_k^2 = q_i' (Q' Omega Q) q_i
    const Matrix middle = q.transpose() * sigma2.asDiagonal() * q;
    const Vector lev = q.rowwise().squaredNorm();
    Vector out(V.rows());
    for (Eigen::Index i = 0; i < V.rows(); ++i) {
        const double spill = q.row(i) * middle * q.row(i).transpose();
        out(i) = (1.0 - 2.0 * lev(i)) * sigma2(i) + spill;
    }
    return out;
}

ResidualMoments residual_moments(const DesignMatrix& V, const Vector& sigma2) {
    check_sigma2(V, sigma2);
    const Matrix H = hat_matrix(V);
    const auto n = V.rows();

    // Cov(e_i, e_j) = sum_{k != i,j} h_ik h_jk s_k - h_ij (1 - h_ii) s_i - h_ij (1 - h_jj) s_j,
    // which collapses to (H Omega H)_ij - h_ij (s_i + s_j) off the diagonal.
    const Matrix spread = H * sigma2.asDiagonal() * H;
    ResidualMoments rm;
    rm.covariances.resize(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) {
            rm.covariances(i, j) = i == j ? (1.0 - 2.0 * H(i, i)) * sigma2(i) + spread(i, i)
                                          : spread(i, j) - H(i, j) * (sigma2(i) + sigma2(j));
        }
    }
    rm.covariances = symmetrize(rm.covariances);
    rm.variances = rm.covariances.diagonal();
    if ((rm.variances.array() <= 0.0).any()) {
        throw Error(ErrorKind::NonPositiveVariance, "a residual has zero variance (leverage of one)");
    }
    rm.log_sq_means = rm.variances.array().log() - stats::kLogChiSqMeanShift;
    rm.log_sq_variance = stats::kLogChiSqVariance;
    return rm;
}

GammaPair expected_gamma(const DesignMatrix& V, const Vector& log_s2, const Vector& sigma2) {
    check_log_s2(V, log_s2);
    const Vector var = residual_variances(V, sigma2);
    const auto n = static_cast<double>(V.rows());
    const Vector log_h = var.array().log();

    const double mean_l = log_s2.mean();
    const double sxx = (log_s2.array() - mean_l).square().sum();
    const double sum_l2 = log_s2.squaredNorm();
    const double sum_h = log_h.sum();
    const double sum_lh = log_s2.dot(log_h);
    const double cross = (log_s2.array() - mean_l).matrix().dot(log_h);

    GammaPair g;
    g.gamma0 = (sum_l2 * sum_h - n * mean_l * sum_lh) / (n * sxx) - stats::kLogChiSqMeanShift;
    g.gamma1 = cross / sxx;
    return g;
}

GammaPair gamma_variance_mc(const DesignMatrix& V, const Vector& log_s2, const Vector& sigma2, std::size_t draws,
                            std::uint64_t seed) {
    if (draws < kMinGammaDraws) {
        throw Error(ErrorKind::InvalidArgument, "gamma variance needs at least " + std::to_string(kMinGammaDraws) +
                                                    " draws");
    }
    check_log_s2(V, log_s2);
    const ResidualMoments rm = residual_moments(V, sigma2);
    const Matrix corr = rm.z_correlation();

    Eigen::SelfAdjointEigenSolver<Matrix> eig(corr);
    Vector lambda = eig.eigenvalues();
    for (Eigen::Index k = 0; k < lambda.size(); ++k) {
        if (lambda(k) < kEigenClip) {
            throw Error(ErrorKind::NonPSDCovariance,
                        "Z correlation matrix has eigenvalue " + std::to_string(lambda(k)));
        }
        lambda(k) = std::max(lambda(k), 0.0);
    }
    const Matrix factor = eig.eigenvectors() * lambda.cwiseSqrt().asDiagonal();

    const auto [row0, row1] = coefficient_rows(log_s2);
    const auto n = V.rows();
    std::vector<double> c0(draws), c1(draws);
    Vector xi(n), z(n), lz(n);
    for (std::size_t d = 0; d < draws; ++d) {
        CounterRng rng(seed, 0, d);
        for (Eigen::Index i = 0; i < n; ++i) xi(i) = rng.normal();
        z.noalias() = factor * xi;
        for (Eigen::Index i = 0; i < n; ++i) lz(i) = std::log(std::max(z(i) * z(i), kSquaredResidualFloor));
        c0[d] = row0.dot(lz);
        c1[d] = row1.dot(lz);
    }
    return {stats::sample_variance(c0), stats::sample_variance(c1)};
}

AsymptoticSandwich asymptotic_sandwich(const JointSample& sample, const SkedasticLimit& G) {
    check_joint(sample, G);
    const Vector g = evaluate_limit(sample, G);

    AsymptoticSandwich out;
    out.omega_bread = outer_mean(sample, [&](Eigen::Index i) { return 1.0 / g(i); });
    out.omega_meat = outer_mean(sample, [&](Eigen::Index i) { return sample.sigma2(i) / (g(i) * g(i)); });
    const Matrix plain = outer_mean(sample, [](Eigen::Index) { return 1.0; });
    const Matrix plain_meat = outer_mean(sample, [&](Eigen::Index i) { return sample.sigma2(i); });

    const Matrix bread_inv = checked_inverse(out.omega_bread, "weighted bread matrix");
    const Matrix plain_inv = checked_inverse(plain, "unweighted bread matrix");
    out.wprocova_cov = symmetrize(bread_inv * out.omega_meat * bread_inv);
    out.procova_cov = symmetrize(plain_inv * plain_meat * plain_inv);
    return out;
}

double variance_reduction_eta(const JointSample& sample, const SkedasticLimit& G) {
    check_joint(sample, G);
    const Vector g = evaluate_limit(sample, G);
    const auto n = static_cast<Eigen::Index>(sample.size());
    std::vector<double> inv_g(sample.size()), ratio(sample.size()), s2(sample.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        inv_g[k] = 1.0 / g(i);
        ratio[k] = sample.sigma2(i) / (g(i) * g(i));
        s2[k] = sample.sigma2(i);
    }
    const double mean_inv_g = stats::mean(inv_g);
    const double denom = mean_inv_g * mean_inv_g * stats::mean(s2);
    if (!(denom > 0.0)) throw Error(ErrorKind::SingularBread, "degenerate weights in variance reduction");
    return 1.0 - stats::mean(ratio) / denom;
}

LimitTable limit_check(const DesignGenerator& generator, const std::vector<std::size_t>& n_grid,
                             std::size_t designs_per_n, std::size_t reference_n, std::uint64_t seed) {
    if (!generator) throw Error(ErrorKind::InvalidArgument, "design generator is empty");
    if (n_grid.empty() || designs_per_n < 2) {
        throw Error(ErrorKind::InvalidArgument, "need a nonempty N grid and at least 2 designs per N");
    }
    for (std::size_t k = 1; k < n_grid.size(); ++k) {
        if (n_grid[k] <= n_grid[k - 1]) throw Error(ErrorKind::InvalidArgument, "N grid must be increasing");
    }

    // Limit from pooled moments of (log S^2, log H) on large designs.
    std::vector<double> pooled_l, pooled_h;
    for (std::size_t d = 0; d < designs_per_n; ++d) {
        const DesignDraw draw = generator(reference_n, mix_seed(seed, 1'000'000 + d));
        const Vector var = residual_variances(draw.V, draw.sigma2);
        for (Eigen::Index i = 0; i < var.size(); ++i) {
            pooled_l.push_back(draw.log_s2(i));
            pooled_h.push_back(std::log(var(i)));
        }
    }
    const double el = stats::mean(pooled_l);
    const double eh = stats::mean(pooled_h);
    std::vector<double> l2(pooled_l.size()), lh(pooled_l.size());
    for (std::size_t i = 0; i < pooled_l.size(); ++i) {
        l2[i] = pooled_l[i] * pooled_l[i];
        lh[i] = pooled_l[i] * pooled_h[i];
    }
    const double el2 = stats::mean(l2);
    const double elh = stats::mean(lh);
    const double var_l = el2 - el * el;
    if (!(var_l > kMinTwinVarianceDispersion)) {
        throw Error(ErrorKind::DegenerateTwinVariance, "generated log twin variances are constant");
    }

    LimitTable table;
    table.limit.gamma0 = (el2 * eh - el * elh) / var_l - stats::kLogChiSqMeanShift;
    table.limit.gamma1 = (elh - el * eh) / var_l;

    for (std::size_t k = 0; k < n_grid.size(); ++k) {
        std::vector<double> g0(designs_per_n), g1(designs_per_n);
        for (std::size_t d = 0; d < designs_per_n; ++d) {
            const DesignDraw draw = generator(n_grid[k], mix_seed(seed, k * designs_per_n + d));
            const GammaPair e = expected_gamma(draw.V, draw.log_s2, draw.sigma2);
            g0[d] = e.gamma0;
            g1[d] = e.gamma1;
        }
        LimitRow row;
        row.n = n_grid[k];
        row.mean_gamma0 = stats::mean(g0);
        row.mean_gamma1 = stats::mean(g1);
        row.se_gamma1 = std::sqrt(stats::sample_variance(g1) / static_cast<double>(designs_per_n));
        row.gap_gamma1 = std::abs(row.mean_gamma1 - table.limit.gamma1);
        table.rows.push_back(row);
    }
    return table;
}

JointSample independence_sample(const IndependenceParams& params, std::size_t draws, std::uint64_t seed) {
    if (!(params.tau2_sq > 0.0) || !(params.psi_sq >= 0.0)) {
        throw Error(ErrorKind::InvalidArgument, "tau2_sq must be positive and psi_sq nonnegative");
    }
    const auto n = static_cast<Eigen::Index>(draws);
    JointSample s{Vector(n), Vector(n), Vector(n), Vector(n)};
    CounterRng rng_w(seed, 0, 0), rng_m(seed, 1, 0), rng_l(seed, 2, 0), rng_z(seed, 3, 0);
    const double tau2 = std::sqrt(params.tau2_sq);
    const double psi = std::sqrt(params.psi_sq);
    for (Eigen::Index i = 0; i < n; ++i) {
        s.w(i) = static_cast<double>(rng_w.below(2));
        s.m(i) = rng_m.normal();
        const double log_s2 = tau2 * rng_l.normal();
        s.s2(i) = std::exp(log_s2);
        s.sigma2(i) = std::exp(params.gamma0 + params.gamma1 * log_s2 + psi * rng_z.normal());
    }
    return s;
}

DesignGenerator gaussian_design_generator(const IndependenceParams& params) {
    return [params](std::size_t n, std::uint64_t seed) {
        CounterRng rng_w(seed, 0, 0), rng_m(seed, 1, 0), rng_l(seed, 2, 0), rng_z(seed, 3, 0);
        const std::vector<int> w = balanced_assignment(n, n / 2, rng_w);
        const auto ni = static_cast<Eigen::Index>(n);
        Matrix V(ni, 3);
        Vector log_s2(ni), sigma2(ni);
        const double tau2 = std::sqrt(params.tau2_sq);
        const double psi = std::sqrt(params.psi_sq);
        for (Eigen::Index i = 0; i < ni; ++i) {
            V(i, 0) = 1.0;
            V(i, 1) = w[static_cast<std::size_t>(i)];
            V(i, 2) = rng_m.normal();
            log_s2(i) = tau2 * rng_l.normal();
            sigma2(i) = std::exp(params.gamma0 + params.gamma1 * log_s2(i) + psi * rng_z.normal());
        }
        return DesignDraw{DesignMatrix(std::move(V)), std::move(log_s2), std::move(sigma2)};
    };
}

}  // namespace wprocova::theory
