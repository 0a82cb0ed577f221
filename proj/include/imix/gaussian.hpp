#pragma once

#include "core.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <string>
#include <variant>

namespace imix
{
struct Isotropic
{
    double sigma;
};

struct Diagonal
{
    Vector variances;
};

/// Lower-triangular factor L with Sigma = L * L^T.
struct FullCholesky
{
    Matrix lower;
};

using CovarianceRepr = std::variant<Isotropic, Diagonal, FullCholesky>;

/// Multivariate Gaussian search distribution.
///
/// The covariance is kept in whichever of the three representations the
/// owning strategy uses. The isotropic and diagonal paths are O(d) per
/// density evaluation and never materialize a d x d matrix; the full path
/// goes through the stored Cholesky factor (triangular solves, no inverse).
/// The log-determinant is cached at construction.
class GaussianPdf
{
public:
    GaussianPdf(Vector mean, CovarianceRepr cov) : mean_(std::move(mean)), cov_(std::move(cov))
    {
        require(mean_.size() > 0, "GaussianPdf: dimension must be positive");
        const auto d = mean_.size();
        std::visit(
            [&](const auto &c) {
                using T = std::decay_t<decltype(c)>;
                if constexpr (std::is_same_v<T, Isotropic>)
                {
                    require(c.sigma > 0.0 && std::isfinite(c.sigma), "GaussianPdf: isotropic sigma must be > 0");
                    log_det_ = 2.0 * static_cast<double>(d) * std::log(c.sigma);
                }
                else if constexpr (std::is_same_v<T, Diagonal>)
                {
                    require(c.variances.size() == d, "GaussianPdf: diagonal variance length != dim");
                    require((c.variances.array() > 0.0).all() && c.variances.allFinite(),
                            "GaussianPdf: diagonal variances must be > 0");
                    inv_variances_ = c.variances.cwiseInverse();
                    log_det_ = c.variances.array().log().sum();
                }
                else
                {
                    require(c.lower.rows() == d && c.lower.cols() == d, "GaussianPdf: Cholesky factor shape != dim");
                    require((c.lower.diagonal().array() > 0.0).all() && c.lower.allFinite(),
                            "GaussianPdf: Cholesky diagonal must be > 0");
                    log_det_ = 2.0 * c.lower.diagonal().array().log().sum();
                }
            },
            cov_);
    }

    static GaussianPdf isotropic(Vector mean, double sigma) { return {std::move(mean), Isotropic{sigma}}; }

    static GaussianPdf diagonal(Vector mean, Vector variances)
    {
        return {std::move(mean), Diagonal{std::move(variances)}};
    }

    static GaussianPdf from_cholesky(Vector mean, Matrix lower)
    {
        lower.triangularView<Eigen::StrictlyUpper>().setZero();
        return {std::move(mean), FullCholesky{std::move(lower)}};
    }

    /// Factorizes a dense covariance. If the factorization fails or is
    /// numerically singular, 1e-10 * trace / d is added to the diagonal
    /// (escalating by 10x, at most 8 times) before giving up.
    static GaussianPdf from_covariance(Vector mean, const Matrix &covariance)
    {
        const auto d = mean.size();
        require(covariance.rows() == d && covariance.cols() == d, "GaussianPdf: covariance shape != dim");
        Matrix sym = 0.5 * (covariance + covariance.transpose());
        const double trace = sym.trace();
        require(std::isfinite(trace) && trace > 0.0, "GaussianPdf: covariance trace must be positive");
        double jitter = 1e-10 * trace / static_cast<double>(d);
        for (int attempt = 0; attempt <= 8; ++attempt)
        {
            Eigen::LLT<Matrix> llt(sym);
            if (llt.info() == Eigen::Success)
            {
                Matrix lower = llt.matrixL();
                const double min_diag = lower.diagonal().minCoeff();
                if (min_diag > 0.0 && std::isfinite(min_diag) &&
                    min_diag > 1e-150 * std::sqrt(trace / static_cast<double>(d)))
                    return from_cholesky(std::move(mean), std::move(lower));
            }
            sym.diagonal().array() += jitter;
            jitter *= 10.0;
        }
        throw ContractViolation("GaussianPdf: covariance is not positive definite after jitter repair");
    }

    Eigen::Index dim() const { return mean_.size(); }
    const Vector &mean() const { return mean_; }
    const CovarianceRepr &cov() const { return cov_; }
    double log_det() const { return log_det_; }

    bool is_isotropic() const { return std::holds_alternative<Isotropic>(cov_); }
    bool is_diagonal() const { return std::holds_alternative<Diagonal>(cov_); }
    bool is_full() const { return std::holds_alternative<FullCholesky>(cov_); }

    /// (z - mu)^T Sigma^{-1} (z - mu).
    double mahalanobis_sq(const VectorRef &z) const
    {
        require(z.size() == dim(), "GaussianPdf: point dimension mismatch");
        switch (cov_.index())
        {
        case 0: {
            const double s = std::get<Isotropic>(cov_).sigma;
            return (z - mean_).squaredNorm() / (s * s);
        }
        case 1:
            return ((z - mean_).array().square() * inv_variances_.array()).sum();
        default: {
            const auto &lower = std::get<FullCholesky>(cov_).lower;
            Vector w = z - mean_;
            lower.triangularView<Eigen::Lower>().solveInPlace(w);
            return w.squaredNorm();
        }
        }
    }

    /// Dense covariance matrix. For tests and small dimensions only.
    Matrix covariance() const
    {
        const auto d = dim();
        switch (cov_.index())
        {
        case 0: {
            const double s = std::get<Isotropic>(cov_).sigma;
            return Matrix::Identity(d, d) * (s * s);
        }
        case 1:
            return std::get<Diagonal>(cov_).variances.asDiagonal();
        default: {
            const auto &lower = std::get<FullCholesky>(cov_).lower;
            return lower * lower.transpose();
        }
        }
    }

    /// Per-coordinate standard deviations (marginal spreads).
    Vector marginal_stddev() const
    {
        switch (cov_.index())
        {
        case 0:
            return Vector::Constant(dim(), std::get<Isotropic>(cov_).sigma);
        case 1:
            return std::get<Diagonal>(cov_).variances.cwiseSqrt();
        default:
            return std::get<FullCholesky>(cov_).lower.rowwise().norm();
        }
    }

    /// Exact representation equality (same alternative, same numbers).
    friend bool operator==(const GaussianPdf &a, const GaussianPdf &b)
    {
        if (a.cov_.index() != b.cov_.index() || a.mean_ != b.mean_)
            return false;
        switch (a.cov_.index())
        {
        case 0:
            return std::get<Isotropic>(a.cov_).sigma == std::get<Isotropic>(b.cov_).sigma;
        case 1:
            return std::get<Diagonal>(a.cov_).variances == std::get<Diagonal>(b.cov_).variances;
        default:
            return std::get<FullCholesky>(a.cov_).lower == std::get<FullCholesky>(b.cov_).lower;
        }
    }

private:
    Vector mean_;
    CovarianceRepr cov_;
    Vector inv_variances_;
    double log_det_ = 0.0;
};

/// ln p(z) = -1/2 [d ln(2 pi) + ln det Sigma + (z - mu)^T Sigma^{-1} (z - mu)].
inline double log_density(const GaussianPdf &pdf, const VectorRef &z)
{
    constexpr double log_two_pi = 1.8378770664093454836; // ln(2 pi)
    return -0.5 * (static_cast<double>(pdf.dim()) * log_two_pi + pdf.log_det() + pdf.mahalanobis_sq(z));
}

/// ln p_new(z) - ln p_old(z), computed from log-determinants and Mahalanobis
/// terms so nothing is exponentiated. Identical pdfs give exactly 0.
inline double log_density_ratio(const GaussianPdf &p_new, const GaussianPdf &p_old, const VectorRef &z)
{
    require(p_new.dim() == p_old.dim(), "log_density_ratio: pdf dimensions differ");
    if (&p_new == &p_old)
        return 0.0;
    return -0.5 * ((p_new.log_det() - p_old.log_det()) + (p_new.mahalanobis_sq(z) - p_old.mahalanobis_sq(z)));
}

/// Draws one point mu + L * eps into `out`, eps ~ N(0, I) taken coordinate by
/// coordinate from `rng`.
template <class Out>
void sample_into(const GaussianPdf &pdf, Rng &rng, Out &&out)
{
    const auto d = pdf.dim();
    Vector eps(d);
    for (Eigen::Index j = 0; j < d; ++j)
        eps[j] = rng.normal();
    switch (pdf.cov().index())
    {
    case 0:
        out = pdf.mean() + std::get<Isotropic>(pdf.cov()).sigma * eps;
        break;
    case 1:
        out = pdf.mean() + (std::get<Diagonal>(pdf.cov()).variances.cwiseSqrt().array() * eps.array()).matrix();
        break;
    default:
        out = pdf.mean() + std::get<FullCholesky>(pdf.cov()).lower.triangularView<Eigen::Lower>() * eps;
        break;
    }
}

/// n i.i.d. draws, one per row.
inline SampleMatrix sample(const GaussianPdf &pdf, Rng &rng, std::size_t n)
{
    require(n >= 1, "sample: n must be >= 1");
    SampleMatrix out(static_cast<Eigen::Index>(n), pdf.dim());
    Vector row(pdf.dim());
    for (Eigen::Index i = 0; i < out.rows(); ++i)
    {
        sample_into(pdf, rng, row);
        out.row(i) = row.transpose();
    }
    return out;
}

inline std::string describe(const GaussianPdf &pdf)
{
    static constexpr const char *names[] = {"isotropic", "diagonal", "full"};
    return std::string(names[pdf.cov().index()]) + " gaussian, d=" + std::to_string(pdf.dim());
}

} // namespace imix
