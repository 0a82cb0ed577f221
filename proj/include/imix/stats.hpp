#pragma once

#include "core.hpp"
#include "gaussian.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace imix
{
struct KsResult
{
    double statistic = 0.0; // sup |F_a - F_b|
    double p_value = 1.0;
    std::size_t n_a = 0;
    std::size_t n_b = 0;
};

/// Survival function of the Kolmogorov distribution,
/// Q(t) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 t^2).
inline double kolmogorov_survival(double t)
{
    if (t < 1e-3)
        return 1.0;
    if (t < 1.18)
    {
        // Jacobi-theta form converges faster for small t.
        constexpr double sqrt_two_pi = 2.5066282746310002;
        const double x = -std::numbers::pi * std::numbers::pi / (8.0 * t * t);
        double cdf = 0.0;
        for (int k = 1; k <= 9; k += 2)
            cdf += std::exp(k * k * x);
        return std::clamp(1.0 - sqrt_two_pi / t * cdf, 0.0, 1.0);
    }
    double sum = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 100; ++k)
    {
        const double term = std::exp(-2.0 * k * k * t * t);
        sum += sign * term;
        if (term < 1e-17)
            break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// Exact two-sample statistic (merge of the sorted samples, ties advanced
/// together) with the asymptotic p-value at effective size n_a n_b / (n_a + n_b).
inline KsResult ks_two_sample(std::span<const double> a, std::span<const double> b)
{
    if (a.empty() || b.empty())
        throw ContractViolation("ks_two_sample: both samples must be nonempty");
    std::vector<double> x(a.begin(), a.end());
    std::vector<double> y(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());

    const double na = static_cast<double>(x.size());
    const double nb = static_cast<double>(y.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < x.size() && j < y.size())
    {
        const double v = std::min(x[i], y[j]);
        while (i < x.size() && x[i] == v)
            ++i;
        while (j < y.size() && y[j] == v)
            ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }

    const double ne = na * nb / (na + nb);
    const double sqrt_ne = std::sqrt(ne);
    const double p = kolmogorov_survival((sqrt_ne + 0.12 + 0.11 / sqrt_ne) * d);
    return {d, p, x.size(), y.size()};
}

struct ChiSquareResult
{
    double statistic = 0.0;
    double dof = 0.0;
    double p_value = 1.0;
};

/// Pearson goodness of fit of `counts` against cell probabilities `probs`
/// (normalized internally).
inline ChiSquareResult chi_square_test(std::span<const std::size_t> counts, std::span<const double> probs)
{
    require(counts.size() == probs.size() && counts.size() >= 2, "chi_square_test: need >= 2 matching cells");
    double total = 0.0, mass = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i)
    {
        total += static_cast<double>(counts[i]);
        mass += probs[i];
    }
    require(total > 0.0 && mass > 0.0, "chi_square_test: empty counts or probabilities");
    ChiSquareResult r;
    for (std::size_t i = 0; i < counts.size(); ++i)
    {
        const double expected = total * probs[i] / mass;
        require(expected > 0.0, "chi_square_test: zero expected count");
        const double diff = static_cast<double>(counts[i]) - expected;
        r.statistic += diff * diff / expected;
    }
    r.dof = static_cast<double>(counts.size() - 1);
    r.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(r.dof), r.statistic));
    return r;
}

class DegenerateRegion : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

struct RejectionStats
{
    std::size_t trials = 0;
    std::size_t accepted = 0;

    double acceptance_rate() const { return trials ? static_cast<double>(accepted) / static_cast<double>(trials) : 0.0; }
};

/// Draws from `outer(rng)` until `inside(x)` holds, n times. Throws
/// DegenerateRegion if a window of `window` consecutive trials accepts at a
/// rate below 1e-6.
template <class Outer, class Inside>
auto rejection_sample(Outer &&outer, Inside &&inside, std::size_t n, Rng &rng, RejectionStats *stats = nullptr,
                      std::size_t window = 10'000'000)
{
    using Point = std::decay_t<decltype(outer(rng))>;
    std::vector<Point> out;
    out.reserve(n);
    RejectionStats local;
    std::size_t window_trials = 0, window_accepted = 0;
    while (out.size() < n)
    {
        Point x = outer(rng);
        ++local.trials;
        ++window_trials;
        if (inside(x))
        {
            ++window_accepted;
            out.push_back(std::move(x));
        }
        if (window_trials == window)
        {
            if (static_cast<double>(window_accepted) < 1e-6 * static_cast<double>(window))
                throw DegenerateRegion("rejection_sample: acceptance rate below 1e-6; region is degenerate");
            window_trials = window_accepted = 0;
        }
    }
    local.accepted = n;
    if (stats)
        *stats = local;
    return out;
}

struct UnderCurvePoint
{
    Vector point;
    double height = 0.0;
};

/// (z, u p(z)) with z ~ pdf and u ~ U[0, 1): uniform on the region under the
/// density graph.
inline std::vector<UnderCurvePoint> under_curve_sample(const GaussianPdf &pdf, Rng &rng, std::size_t n)
{
    require(n >= 1, "under_curve_sample: n must be >= 1");
    std::vector<UnderCurvePoint> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
    {
        UnderCurvePoint p{Vector(pdf.dim()), 0.0};
        sample_into(pdf, rng, p.point);
        p.height = rng.uniform() * std::exp(log_density(pdf, p.point));
        out.push_back(std::move(p));
    }
    return out;
}

enum class OverlapMethod
{
    Quadrature1D,
    MonteCarlo,
};

struct OverlapEstimate
{
    double lambda = 0.0;
    double standard_error = 0.0;
    OverlapMethod method = OverlapMethod::Quadrature1D;
};

struct OverlapBudget
{
    std::size_t mc_samples = 100'000;
    std::uint64_t seed = 0;
};

/// lambda = integral of min(p_old, p_new). 1D: piecewise Gauss-Kronrod
/// split at the density crossings (exactly 1 for identical pdfs). Higher
/// dimensions: Monte Carlo mean of min(1, p_new/p_old) under p_old.
inline OverlapEstimate estimate_lambda(const GaussianPdf &p_old, const GaussianPdf &p_new,
                                       const OverlapBudget &budget = {})
{
    require(p_old.dim() == p_new.dim(), "estimate_lambda: pdf dimensions differ");
    if (p_old == p_new)
        return {1.0, 0.0, p_old.dim() == 1 ? OverlapMethod::Quadrature1D : OverlapMethod::MonteCarlo};

    if (p_old.dim() == 1)
    {
        const double m0 = p_old.mean()[0], m1 = p_new.mean()[0];
        const double s0 = p_old.marginal_stddev()[0], s1 = p_new.marginal_stddev()[0];
        const double lo = std::min(m0 - 40.0 * s0, m1 - 40.0 * s1);
        const double hi = std::max(m0 + 40.0 * s0, m1 + 40.0 * s1);
        std::vector<double> cuts{lo, hi, m0, m1};
        // ln p_old - ln p_new = a z^2 + b z + c
        const double a = 0.5 / (s1 * s1) - 0.5 / (s0 * s0);
        const double b = m0 / (s0 * s0) - m1 / (s1 * s1);
        const double c = 0.5 * (m1 * m1 / (s1 * s1) - m0 * m0 / (s0 * s0)) + std::log(s1 / s0);
        if (std::abs(a) < 1e-300)
        {
            if (b != 0.0)
                cuts.push_back(-c / b);
        }
        else if (const double disc = b * b - 4.0 * a * c; disc >= 0.0)
        {
            cuts.push_back((-b + std::sqrt(disc)) / (2.0 * a));
            cuts.push_back((-b - std::sqrt(disc)) / (2.0 * a));
        }
        std::sort(cuts.begin(), cuts.end());
        cuts.erase(std::remove_if(cuts.begin(), cuts.end(),
                                  [&](double v) { return !(v >= lo && v <= hi); }),
                   cuts.end());
        cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

        auto integrand = [&](double z) {
            Vector p(1);
            p[0] = z;
            return std::exp(std::min(log_density(p_old, p), log_density(p_new, p)));
        };
        double total = 0.0, error = 0.0;
        for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
        {
            double seg_err = 0.0;
            total += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, cuts[i], cuts[i + 1],
                                                                                   15, 1e-13, &seg_err);
            error += seg_err;
        }
        return {std::clamp(total, 0.0, 1.0), error, OverlapMethod::Quadrature1D};
    }

    Rng rng(budget.seed);
    const std::size_t n = std::max<std::size_t>(2, budget.mc_samples);
    double sum = 0.0, sum_sq = 0.0;
    Vector z(p_old.dim());
    for (std::size_t i = 0; i < n; ++i)
    {
        sample_into(p_old, rng, z);
        const double v = std::exp(std::min(0.0, log_density_ratio(p_new, p_old, z)));
        sum += v;
        sum_sq += v * v;
    }
    const double nn = static_cast<double>(n);
    const double mean = sum / nn;
    const double var = std::max(0.0, (sum_sq - nn * mean * mean) / (nn - 1.0));
    return {mean, std::sqrt(var / nn), OverlapMethod::MonteCarlo};
}

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

} // namespace imix
