#pragma once

#include "adam.hpp"
#include "core.hpp"
#include "fitness.hpp"
#include "gaussian.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <optional>
#include <string>
#include <string_view>

namespace imix
{
enum class Algorithm
{
    OpenES,
    SNES,
    CEM,
    CMAES,
};

inline std::string_view to_string(Algorithm a)
{
    switch (a)
    {
    case Algorithm::OpenES:
        return "openes";
    case Algorithm::SNES:
        return "snes";
    case Algorithm::CEM:
        return "cem";
    case Algorithm::CMAES:
        return "cmaes";
    }
    return "?";
}

inline std::optional<Algorithm> parse_algorithm(std::string_view name)
{
    for (auto a : {Algorithm::OpenES, Algorithm::SNES, Algorithm::CEM, Algorithm::CMAES})
        if (name == to_string(a))
            return a;
    return std::nullopt;
}

/// Additive CEM variance: starts at `initial`, multiplied by `decay` after
/// each update, never below `floor`.
struct CemSchedule
{
    double initial = 0.01;
    double decay = 0.995;
    double floor = 1e-6;
};

struct StrategyConfig
{
    Algorithm algorithm = Algorithm::SNES;
    std::size_t population = 50;
    double sigma = 0.25;
    AdamParams adam{};
    double elite_fraction = 0.5;
    CemSchedule cem{};
};

/// Standard (mu/mu_w, lambda)-CMA-ES state. `cov` is C (unit step size);
/// the search pdf is N(mean, step^2 * C).
struct CmaesState
{
    Matrix cov;
    Matrix inv_sqrt_cov;
    double step = 1.0;
    Vector path_sigma;
    Vector path_c;

    Vector weights;
    double mu_eff = 1.0;
    double c_sigma = 0.0;
    double d_sigma = 0.0;
    double c_c = 0.0;
    double c_1 = 0.0;
    double c_mu = 0.0;
    double chi_n = 0.0;

    CmaesState(Eigen::Index dim, std::size_t elites, double step0)
        : cov(Matrix::Identity(dim, dim)), inv_sqrt_cov(Matrix::Identity(dim, dim)), step(step0),
          path_sigma(Vector::Zero(dim)), path_c(Vector::Zero(dim)), weights(static_cast<Eigen::Index>(elites))
    {
        const double n = static_cast<double>(dim);
        const double mu = static_cast<double>(elites);
        for (Eigen::Index i = 0; i < weights.size(); ++i)
            weights[i] = std::log(mu + 0.5) - std::log(static_cast<double>(i + 1));
        weights /= weights.sum();
        mu_eff = 1.0 / weights.squaredNorm();
        c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        d_sigma = 1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma;
        c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff);
        c_mu = std::min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) * (n + 2.0) + mu_eff));
        chi_n = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
    }
};

struct StrategyState
{
    Algorithm algorithm;
    GaussianPdf pdf;
    std::optional<AdamState> adam;           // OpenES mean, SNES mean
    std::optional<AdamState> adam_log_sigma; // SNES log-sigma
    std::optional<CmaesState> cmaes;
    std::size_t elite_count = 0;
    std::size_t generation_index = 0;
    double extra_variance = 0.0;
    CemSchedule cem_schedule{};
};

inline std::size_t default_elite_count(std::size_t population, double elite_fraction)
{
    const auto k = static_cast<std::size_t>(std::floor(static_cast<double>(population) * elite_fraction));
    return std::clamp<std::size_t>(k, 1, population);
}

/// Initial state: mean `initial_mean`, covariance sigma^2 I in the
/// representation the algorithm adapts.
inline StrategyState make_strategy(const StrategyConfig &config, Vector initial_mean)
{
    require(config.population >= 2, "make_strategy: population must be >= 2");
    require(config.sigma > 0.0, "make_strategy: sigma must be > 0");
    const auto d = initial_mean.size();
    const double var = config.sigma * config.sigma;
    switch (config.algorithm)
    {
    case Algorithm::OpenES:
        return {Algorithm::OpenES, GaussianPdf::isotropic(std::move(initial_mean), config.sigma),
                AdamState(d, config.adam)};
    case Algorithm::SNES:
        return {Algorithm::SNES, GaussianPdf::diagonal(std::move(initial_mean), Vector::Constant(d, var)),
                AdamState(d, config.adam), AdamState(d, config.adam)};
    case Algorithm::CEM: {
        StrategyState s{Algorithm::CEM, GaussianPdf::diagonal(std::move(initial_mean), Vector::Constant(d, var))};
        s.elite_count = default_elite_count(config.population, config.elite_fraction);
        s.extra_variance = config.cem.initial;
        s.cem_schedule = config.cem;
        return s;
    }
    case Algorithm::CMAES: {
        StrategyState s{Algorithm::CMAES,
                        GaussianPdf::from_cholesky(std::move(initial_mean), Matrix::Identity(d, d) * config.sigma)};
        s.elite_count = default_elite_count(config.population, config.elite_fraction);
        s.cmaes.emplace(d, s.elite_count, config.sigma);
        return s;
    }
    }
    throw ContractViolation("make_strategy: unknown algorithm");
}

/// Current search distribution. Pure.
inline const GaussianPdf &ask(const StrategyState &state) { return state.pdf; }

namespace detail
{
inline void check_batch(const StrategyState &state, Algorithm expected, const SampleMatrix &samples,
                        const VectorRef &values, const char *who)
{
    require(state.algorithm == expected, std::string(who) + ": algorithm mismatch");
    require(samples.cols() == state.pdf.dim(), std::string(who) + ": sample dimension mismatch");
    require(samples.rows() >= 1 && values.size() == samples.rows(),
            std::string(who) + ": one fitness/utility value per sample required");
}
} // namespace detail

/// Search-gradient estimate for the mean of an isotropic Gaussian:
/// (1 / (N sigma)) * sum_i u_i (z_i - mu) / sigma.
inline Vector openes_gradient(const GaussianPdf &pdf, const SampleMatrix &samples, const VectorRef &utilities)
{
    require(pdf.is_isotropic(), "openes_gradient: isotropic pdf required");
    const double sigma = std::get<Isotropic>(pdf.cov()).sigma;
    const double n = static_cast<double>(samples.rows());
    Vector grad = Vector::Zero(pdf.dim());
    for (Eigen::Index i = 0; i < samples.rows(); ++i)
        grad += utilities[i] * (samples.row(i).transpose() - pdf.mean()) / sigma;
    return grad / (n * sigma);
}

inline void openes_tell(StrategyState &state, const SampleMatrix &samples, const VectorRef &utilities)
{
    detail::check_batch(state, Algorithm::OpenES, samples, utilities, "openes_tell");
    const Vector grad = openes_gradient(state.pdf, samples, utilities);
    const Vector delta = adam_step(*state.adam, grad);
    const double sigma = std::get<Isotropic>(state.pdf.cov()).sigma;
    state.pdf = GaussianPdf::isotropic(state.pdf.mean() + delta, sigma);
    ++state.generation_index;
}

struct SnesGradient
{
    Vector mean;
    Vector log_sigma;
};

/// Separable natural-gradient estimates with s_i = (z_i - mu) / sigma:
/// mean: sigma * sum_i u_i s_i / N, log-sigma: sum_i u_i (s_i^2 - 1) / N.
inline SnesGradient snes_gradient(const GaussianPdf &pdf, const SampleMatrix &samples, const VectorRef &utilities)
{
    require(pdf.is_diagonal(), "snes_gradient: diagonal pdf required");
    const Vector sigma = pdf.marginal_stddev();
    const double n = static_cast<double>(samples.rows());
    SnesGradient g{Vector::Zero(pdf.dim()), Vector::Zero(pdf.dim())};
    for (Eigen::Index i = 0; i < samples.rows(); ++i)
    {
        const Vector s = ((samples.row(i).transpose() - pdf.mean()).array() / sigma.array()).matrix();
        g.mean += utilities[i] * s;
        g.log_sigma += utilities[i] * (s.array().square() - 1.0).matrix();
    }
    g.mean = (sigma.array() * g.mean.array()).matrix() / n;
    g.log_sigma /= n;
    return g;
}

inline void snes_tell(StrategyState &state, const SampleMatrix &samples, const VectorRef &utilities)
{
    detail::check_batch(state, Algorithm::SNES, samples, utilities, "snes_tell");
    const SnesGradient g = snes_gradient(state.pdf, samples, utilities);
    const Vector mean_delta = adam_step(*state.adam, g.mean);
    const Vector log_sigma_delta = adam_step(*state.adam_log_sigma, g.log_sigma);
    const Vector sigma = (state.pdf.marginal_stddev().array() * log_sigma_delta.array().exp()).matrix();
    state.pdf = GaussianPdf::diagonal(state.pdf.mean() + mean_delta, sigma.cwiseAbs2());
    ++state.generation_index;
}

/// Elite mean and per-coordinate elite variance (around the new mean, 1/K_e
/// normalization) plus the current extra variance, which then decays.
inline void cem_tell(StrategyState &state, const SampleMatrix &samples, const VectorRef &fitness)
{
    detail::check_batch(state, Algorithm::CEM, samples, fitness, "cem_tell");
    require(static_cast<Eigen::Index>(state.elite_count) <= samples.rows(), "cem_tell: fewer samples than elites");
    const auto elites = elite_indices(fitness, state.elite_count);
    const double k = static_cast<double>(elites.size());

    Vector mean = Vector::Zero(state.pdf.dim());
    for (const auto i : elites)
        mean += samples.row(static_cast<Eigen::Index>(i)).transpose();
    mean /= k;

    Vector var = Vector::Zero(state.pdf.dim());
    for (const auto i : elites)
        var += (samples.row(static_cast<Eigen::Index>(i)).transpose() - mean).cwiseAbs2();
    var /= k;
    var.array() += state.extra_variance;

    state.pdf = GaussianPdf::diagonal(std::move(mean), std::move(var));
    state.extra_variance = std::max(state.cem_schedule.floor, state.extra_variance * state.cem_schedule.decay);
    ++state.generation_index;
}

/// Weighted recombination of the top K_e, cumulation of both evolution
/// paths, cumulative step-size adaptation and rank-one + rank-mu covariance
/// update, followed by refactorization of step^2 * C.
inline void cmaes_tell(StrategyState &state, const SampleMatrix &samples, const VectorRef &fitness)
{
    detail::check_batch(state, Algorithm::CMAES, samples, fitness, "cmaes_tell");
    auto &cma = *state.cmaes;
    const auto mu = static_cast<Eigen::Index>(state.elite_count);
    require(mu <= samples.rows(), "cmaes_tell: fewer samples than elites");
    const auto d = state.pdf.dim();
    const double n = static_cast<double>(d);
    const auto elites = elite_indices(fitness, state.elite_count);

    Matrix y(d, mu);
    for (Eigen::Index j = 0; j < mu; ++j)
        y.col(j) = (samples.row(static_cast<Eigen::Index>(elites[static_cast<std::size_t>(j)])).transpose() -
                    state.pdf.mean()) /
                   cma.step;
    const Vector y_w = y * cma.weights;
    const Vector mean = state.pdf.mean() + cma.step * y_w;

    cma.path_sigma = (1.0 - cma.c_sigma) * cma.path_sigma +
                     std::sqrt(cma.c_sigma * (2.0 - cma.c_sigma) * cma.mu_eff) * (cma.inv_sqrt_cov * y_w);
    const double g = static_cast<double>(state.generation_index + 1);
    const double ps_norm = cma.path_sigma.norm();
    const bool h_sigma = ps_norm / std::sqrt(1.0 - std::pow(1.0 - cma.c_sigma, 2.0 * g)) / cma.chi_n <
                         1.4 + 2.0 / (n + 1.0);
    cma.path_c = (1.0 - cma.c_c) * cma.path_c +
                 (h_sigma ? std::sqrt(cma.c_c * (2.0 - cma.c_c) * cma.mu_eff) : 0.0) * y_w;

    const double delta_h = h_sigma ? 0.0 : cma.c_c * (2.0 - cma.c_c);
    Matrix rank_mu = y * cma.weights.asDiagonal() * y.transpose();
    cma.cov = (1.0 - cma.c_1 - cma.c_mu + cma.c_1 * delta_h) * cma.cov +
              cma.c_1 * cma.path_c * cma.path_c.transpose() + cma.c_mu * rank_mu;
    cma.cov = cma.cov.selfadjointView<Eigen::Upper>();
    cma.step *= std::exp((cma.c_sigma / cma.d_sigma) * (ps_norm / cma.chi_n - 1.0));

    Eigen::SelfAdjointEigenSolver<Matrix> eig(cma.cov);
    const Vector eigenvalues = eig.eigenvalues().cwiseMax(1e-300);
    cma.inv_sqrt_cov = eig.eigenvectors() * eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal() *
                       eig.eigenvectors().transpose();

    state.pdf = GaussianPdf::from_covariance(mean, cma.step * cma.step * cma.cov);
    ++state.generation_index;
}

/// Ranks `fitness` (higher is better) and applies the algorithm's update.
/// Only the ordering of `fitness` matters.
inline void tell(StrategyState &state, const SampleMatrix &samples, const VectorRef &fitness)
{
    switch (state.algorithm)
    {
    case Algorithm::OpenES:
        openes_tell(state, samples, rank_transform(fitness));
        break;
    case Algorithm::SNES:
        snes_tell(state, samples, rank_transform(fitness));
        break;
    case Algorithm::CEM:
        cem_tell(state, samples, fitness);
        break;
    case Algorithm::CMAES:
        cmaes_tell(state, samples, fitness);
        break;
    }
}

} // namespace imix
