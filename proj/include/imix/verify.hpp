#pragma once

#include "core.hpp"
#include "gaussian.hpp"
#include "mixing.hpp"
#include "stats.hpp"

#include <fmt/core.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

namespace imix::verify
{
constexpr double alpha = 0.01;

struct PropertyResult
{
    std::string name;
    bool passed = false;
    std::string detail;
    std::uint64_t seed = 0;
};

struct TestPair
{
    GaussianPdf p_old;
    GaussianPdf p_new;
};

inline TestPair shifted_1d(double shift)
{
    return {GaussianPdf::isotropic(Vector::Zero(1), 1.0), GaussianPdf::isotropic(Vector::Constant(1, shift), 1.0)};
}

inline TestPair diagonal_2d()
{
    Vector m_new(2), v_old(2), v_new(2);
    m_new << 0.4, -0.3;
    v_old << 1.0, 0.5;
    v_new << 1.3, 0.4;
    return {GaussianPdf::diagonal(Vector::Zero(2), v_old), GaussianPdf::diagonal(m_new, v_new)};
}

/// An evaluated generation drawn from `pdf` (fitness values are irrelevant
/// to the distributional checks, so they are set to zero).
inline Generation evaluated_generation(const GaussianPdf &pdf, Rng &rng, std::size_t n)
{
    Generation g = Generation::sampled(pdf, rng, n);
    g.fitness.setZero();
    return g;
}

/// Column j of a list of sample matrices, concatenated.
inline std::vector<double> pooled_marginal(const std::vector<SampleMatrix> &blocks, Eigen::Index j)
{
    std::vector<double> out;
    for (const auto &b : blocks)
        for (Eigen::Index i = 0; i < b.rows(); ++i)
            out.push_back(b(i, j));
    return out;
}

/// KS of every marginal (up to 5) of the pooled blocks against direct draws
/// from `pdf`, Bonferroni-corrected at `alpha`.
inline PropertyResult marginal_ks(std::string name, const std::vector<SampleMatrix> &blocks, const GaussianPdf &pdf,
                                  Rng &rng, std::uint64_t seed)
{
    std::size_t total = 0;
    for (const auto &b : blocks)
        total += static_cast<std::size_t>(b.rows());
    const SampleMatrix direct = sample(pdf, rng, total);
    const Eigen::Index marginals = std::min<Eigen::Index>(pdf.dim(), 5);
    const double threshold = alpha / static_cast<double>(marginals);

    PropertyResult r{std::move(name), true, {}, seed};
    for (Eigen::Index j = 0; j < marginals; ++j)
    {
        const auto a = pooled_marginal(blocks, j);
        std::vector<double> b(direct.rows());
        for (Eigen::Index i = 0; i < direct.rows(); ++i)
            b[static_cast<std::size_t>(i)] = direct(i, j);
        const KsResult ks = ks_two_sample(a, b);
        r.passed = r.passed && ks.p_value >= threshold;
        r.detail += fmt::format("{}dim{} D={:.4f} p={:.3g}", j ? "; " : "", j, ks.statistic, ks.p_value);
    }
    r.detail += fmt::format(" (threshold {:.3g}, n={})", threshold, total);
    return r;
}

/// Empirical Rule 1 rate under z ~ p_old and Rule 2 rate under z ~ p_new
/// against lambda and 1 - lambda, within 3 standard errors.
inline PropertyResult rule_consistency(const TestPair &pair, std::size_t draws, std::uint64_t seed)
{
    const OverlapEstimate lambda = estimate_lambda(pair.p_old, pair.p_new, {200'000, derive_seed(seed, {1})});
    Rng rng(seed);
    Vector z(pair.p_old.dim());
    std::size_t acc1 = 0, acc2 = 0;
    for (std::size_t i = 0; i < draws; ++i)
    {
        sample_into(pair.p_old, rng, z);
        acc1 += rule1_accept(z, pair.p_new, pair.p_old, rng.uniform());
        sample_into(pair.p_new, rng, z);
        acc2 += rule2_accept(z, pair.p_new, pair.p_old, rng.uniform());
    }
    const double n = static_cast<double>(draws);
    const double r1 = static_cast<double>(acc1) / n;
    const double r2 = static_cast<double>(acc2) / n;
    const double l = lambda.lambda;
    const double se = std::sqrt(l * (1.0 - l) / n + lambda.standard_error * lambda.standard_error);
    const bool ok = std::abs(r1 - l) <= 3.0 * se && std::abs(r2 - (1.0 - l)) <= 3.0 * se;
    return {fmt::format("rule consistency (d={})", pair.p_old.dim()), ok,
            fmt::format("lambda={:.5f} rule1={:.5f} rule2={:.5f} 3se={:.5f}", l, r1, r2, 3.0 * se), seed};
}

enum class Mixer
{
    Mix,
    MixExtended,
    SunVariant,
};

inline std::string_view to_string(Mixer m)
{
    switch (m)
    {
    case Mixer::Mix:
        return "mix";
    case Mixer::MixExtended:
        return "mix_extended";
    case Mixer::SunVariant:
        return "mix_sun_variant";
    }
    return "?";
}

/// Archive whose entries drift in mean towards p_new: entry k is p_old
/// shifted by (1 - k) * step (so entry 1 is p_old itself).
inline Archive drifting_archive(const TestPair &pair, std::size_t entries, const Vector &step, Rng &rng,
                                std::size_t n)
{
    Archive archive(entries);
    for (std::size_t k = entries; k >= 1; --k)
    {
        const Vector mean = pair.p_old.mean() - static_cast<double>(k - 1) * step;
        const GaussianPdf pdf(mean, pair.p_old.cov());
        archive.push(evaluated_generation(pdf, rng, n));
    }
    return archive;
}

/// One mixing call on freshly drawn old generations.
inline MixOutcome run_mixer(Mixer mixer, const TestPair &pair, Rng &rng, std::size_t n,
                            std::size_t archive_entries = 3)
{
    if (mixer == Mixer::MixExtended)
    {
        const Vector step = pair.p_new.mean() - pair.p_old.mean();
        const Archive archive = drifting_archive(pair, archive_entries, step, rng, n);
        return mix_extended(pair.p_new, archive, rng, n);
    }
    const Generation g_old = evaluated_generation(pair.p_old, rng, n);
    if (mixer == Mixer::Mix)
        return mix(pair.p_new, pair.p_old, g_old, rng, n);
    return mix_sun_variant(pair.p_new, pair.p_old, g_old, rng, n);
}

/// Pools `calls` mixing outputs and tests every marginal against direct
/// sampling from p_new.
inline PropertyResult mixing_unbiased(Mixer mixer, const TestPair &pair, std::string label, std::size_t calls,
                                      std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<SampleMatrix> blocks;
    blocks.reserve(calls);
    for (std::size_t c = 0; c < calls; ++c)
        blocks.push_back(run_mixer(mixer, pair, rng, n).generation.samples);
    return marginal_ks(fmt::format("{} unbiased ({})", to_string(mixer), label), blocks, pair.p_new, rng, seed);
}

/// Mean reused fraction of `mix` on the pair over `repetitions` calls.
inline double mean_reuse_fraction(Mixer mixer, const TestPair &pair, std::size_t repetitions, std::size_t n,
                                  std::uint64_t seed)
{
    Rng rng(seed);
    double total = 0.0;
    for (std::size_t r = 0; r < repetitions; ++r)
        total += static_cast<double>(run_mixer(mixer, pair, rng, n).reused_count) / static_cast<double>(n);
    return total / static_cast<double>(repetitions);
}

inline PropertyResult reuse_matches_lambda(const TestPair &pair, std::size_t repetitions, std::size_t n,
                                           double tolerance, std::uint64_t seed)
{
    const double lambda = estimate_lambda(pair.p_old, pair.p_new).lambda;
    const double reuse = mean_reuse_fraction(Mixer::Mix, pair, repetitions, n, seed);
    return {"mix reuse fraction vs lambda", std::abs(reuse - lambda) <= tolerance,
            fmt::format("reuse={:.4f} lambda={:.4f} |diff|={:.4f} tol={}", reuse, lambda, std::abs(reuse - lambda),
                        tolerance),
            seed};
}

struct PairedKs
{
    double mean_mix = 0.0;
    double mean_sun = 0.0;
};

/// Mean KS statistic of single mixing outputs against an independent direct
/// sample, paired: repetition r uses the same old generation and reference
/// sample for both mixers.
inline PairedKs paired_ks(const TestPair &pair, std::size_t repetitions, std::size_t n, std::uint64_t seed)
{
    PairedKs out;
    for (std::size_t r = 0; r < repetitions; ++r)
    {
        Rng setup(derive_seed(seed, {r, 0}));
        const Generation g_old = evaluated_generation(pair.p_old, setup, n);
        const SampleMatrix reference = sample(pair.p_new, setup, n);
        std::vector<double> ref(reference.data(), reference.data() + reference.size());

        auto ks_of = [&](const MixOutcome &m) {
            std::vector<double> a(m.generation.samples.data(),
                                  m.generation.samples.data() + m.generation.samples.size());
            return ks_two_sample(a, ref).statistic;
        };
        Rng rng_mix(derive_seed(seed, {r, 1}));
        Rng rng_sun(derive_seed(seed, {r, 1}));
        out.mean_mix += ks_of(mix(pair.p_new, pair.p_old, g_old, rng_mix, n));
        out.mean_sun += ks_of(mix_sun_variant(pair.p_new, pair.p_old, g_old, rng_sun, n));
    }
    out.mean_mix /= static_cast<double>(repetitions);
    out.mean_sun /= static_cast<double>(repetitions);
    return out;
}

inline PropertyResult sun_variant_more_biased(const TestPair &pair, std::size_t repetitions, std::size_t n,
                                              std::uint64_t seed)
{
    const PairedKs ks = paired_ks(pair, repetitions, n, seed);
    return {"mix_sun_variant mean KS exceeds mix", ks.mean_sun > ks.mean_mix,
            fmt::format("mean D: sun={:.5f} mix={:.5f}", ks.mean_sun, ks.mean_mix), seed};
}

using Point2 = std::array<double, 2>;

inline Point2 uniform_square(Rng &rng) { return {2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0}; }
inline bool in_unit_disk(const Point2 &p) { return p[0] * p[0] + p[1] * p[1] <= 1.0; }

inline PropertyResult disk_acceptance(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    RejectionStats stats;
    rejection_sample(uniform_square, in_unit_disk, n, rng, &stats);
    const double rate = static_cast<double>(stats.accepted) / static_cast<double>(stats.trials);
    const double target = std::numbers::pi / 4.0;
    return {"disk-in-square acceptance rate", std::abs(rate - target) <= 0.005,
            fmt::format("rate={:.5f} pi/4={:.5f} trials={}", rate, target, stats.trials), seed};
}

/// Area of [x0,x1]x[y0,y1] intersected with the unit disk.
inline double cell_disk_area(double x0, double x1, double y0, double y1)
{
    auto height = [&](double x) {
        const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
        return std::max(0.0, std::min(y1, s) - std::max(y0, -s));
    };
    return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(height, x0, x1, 20, 1e-12);
}

inline PropertyResult disk_uniformity(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    const auto points = rejection_sample(uniform_square, in_unit_disk, n, rng);
    constexpr int grid = 10;
    auto cell = [](double v) { return std::clamp(static_cast<int>((v + 1.0) / 2.0 * grid), 0, grid - 1); };
    std::array<std::size_t, grid * grid> counts{};
    for (const auto &p : points)
        ++counts[static_cast<std::size_t>(cell(p[0]) * grid + cell(p[1]))];

    std::vector<std::size_t> observed;
    std::vector<double> area;
    for (int i = 0; i < grid; ++i)
        for (int j = 0; j < grid; ++j)
        {
            const double a = cell_disk_area(-1.0 + 0.2 * i, -0.8 + 0.2 * i, -1.0 + 0.2 * j, -0.8 + 0.2 * j);
            if (a <= 0.0)
                continue;
            observed.push_back(counts[static_cast<std::size_t>(i * grid + j)]);
            area.push_back(a);
        }
    const ChiSquareResult chi = chi_square_test(observed, area);
    return {"disk rejection sample uniformity (chi-square)", chi.p_value >= alpha,
            fmt::format("chi2={:.2f} dof={} p={:.3g}", chi.statistic, chi.dof, chi.p_value), seed};
}

inline PropertyResult under_curve_marginal(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    const GaussianPdf pdf = GaussianPdf::isotropic(Vector::Zero(1), 1.0);
    const auto points = under_curve_sample(pdf, rng, n);
    bool heights_ok = true;
    std::vector<double> xs;
    xs.reserve(n);
    for (const auto &p : points)
    {
        xs.push_back(p.point[0]);
        heights_ok = heights_ok && p.height <= std::exp(log_density(pdf, p.point));
    }
    const SampleMatrix direct = sample(pdf, rng, n);
    std::vector<double> ys(direct.data(), direct.data() + direct.size());
    const KsResult ks = ks_two_sample(xs, ys);
    return {"under-curve sample marginal", heights_ok && ks.p_value >= alpha,
            fmt::format("D={:.4f} p={:.3g} heights_ok={}", ks.statistic, ks.p_value, heights_ok), seed};
}

/// The full property suite with its standard budgets.
inline std::vector<PropertyResult> run_suite(std::uint64_t seed, const std::function<void(const PropertyResult &)> &on_result = {})
{
    std::vector<PropertyResult> results;
    auto record = [&](PropertyResult r) {
        if (on_result)
            on_result(r);
        results.push_back(std::move(r));
    };
    const TestPair one = shifted_1d(0.5);
    const TestPair two = diagonal_2d();
    record(rule_consistency(one, 1'000'000, derive_seed(seed, {1})));
    record(rule_consistency(two, 1'000'000, derive_seed(seed, {2})));
    for (const Mixer m : {Mixer::Mix, Mixer::MixExtended})
    {
        record(mixing_unbiased(m, one, "1D", 1000, 100, derive_seed(seed, {3, static_cast<std::uint64_t>(m)})));
        record(mixing_unbiased(m, two, "2D diagonal", 1000, 100, derive_seed(seed, {4, static_cast<std::uint64_t>(m)})));
    }
    record(reuse_matches_lambda(one, 10'000, 100, 0.01, derive_seed(seed, {5})));
    record(sun_variant_more_biased(shifted_1d(1.0), 1000, 100, derive_seed(seed, {6})));
    record(disk_acceptance(100'000, derive_seed(seed, {7})));
    record(disk_uniformity(100'000, derive_seed(seed, {8})));
    record(under_curve_marginal(100'000, derive_seed(seed, {9})));
    return results;
}

} // namespace imix::verify
