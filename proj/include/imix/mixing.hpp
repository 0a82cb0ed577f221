#pragma once

#include "core.hpp"
#include "gaussian.hpp"

#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

namespace imix
{
enum class Origin : std::uint8_t
{
    Fresh,
    ReusedIM,
    ReusedEIM,
};

/// Where a member of a generation came from. For reused samples,
/// `archive_entry` is the 1-based archive position k (1 = previous
/// generation) and `source_row` the row in that archived generation.
struct Provenance
{
    Origin origin = Origin::Fresh;
    std::size_t archive_entry = 0;
    std::size_t source_row = 0;

    bool reused() const { return origin != Origin::Fresh; }
};

/// A population of parameter vectors together with the pdf it is
/// distributed as. Fitness entries are NaN until evaluated.
struct Generation
{
    SampleMatrix samples;
    Vector fitness;
    std::vector<Provenance> provenance;
    GaussianPdf pdf;

    std::size_t size() const { return static_cast<std::size_t>(samples.rows()); }

    /// Indices of samples whose fitness still has to be computed.
    std::vector<std::size_t> fresh_indices() const
    {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < provenance.size(); ++i)
            if (!provenance[i].reused())
                out.push_back(i);
        return out;
    }

    bool fully_evaluated() const { return fitness.size() == samples.rows() && fitness.allFinite(); }

    /// A generation drawn directly from `pdf`; all members fresh.
    static Generation sampled(const GaussianPdf &pdf, Rng &rng, std::size_t n)
    {
        Generation g{sample(pdf, rng, n), Vector::Constant(static_cast<Eigen::Index>(n), unset_fitness()),
                     std::vector<Provenance>(n), pdf};
        return g;
    }

    static constexpr double unset_fitness() { return std::numeric_limits<double>::quiet_NaN(); }
};

/// Last K evaluated generations, most recent first.
class Archive
{
public:
    explicit Archive(std::size_t capacity) : capacity_(capacity)
    {
        require(capacity >= 1, "Archive: capacity must be >= 1");
    }

    void push(Generation generation)
    {
        require(generation.fully_evaluated(), "Archive: generation must be fully evaluated before archiving");
        entries_.push_front(std::move(generation));
        while (entries_.size() > capacity_)
            entries_.pop_back();
    }

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    /// 0-based; entry 0 is the previous generation (k = 1).
    const Generation &operator[](std::size_t i) const { return entries_.at(i); }

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::size_t capacity_;
    std::deque<Generation> entries_;
};

struct MixOutcome
{
    Generation generation;
    std::size_t reused_count = 0;
    std::size_t reused_im = 0;
    std::size_t reused_eim = 0;
    std::size_t fresh_count = 0;
};

/// Acceptance probability of Rule 1, min(1, p_new/p_old), from the log-ratio.
inline double rule1_probability(double log_ratio_new_old) { return std::exp(std::min(0.0, log_ratio_new_old)); }

/// Acceptance probability of Rule 2, max(0, 1 - p_old/p_new), from the same
/// log-ratio ln p_new - ln p_old.
inline double rule2_probability(double log_ratio_new_old)
{
    return log_ratio_new_old > 0.0 ? -std::expm1(-log_ratio_new_old) : 0.0;
}

/// Rule 1: keep z (drawn from p_old) iff u < min(1, p_new(z)/p_old(z)).
inline bool rule1_accept(const VectorRef &z, const GaussianPdf &p_new, const GaussianPdf &p_old, double u)
{
    return u < rule1_probability(log_density_ratio(p_new, p_old, z));
}

/// Rule 2: keep z (drawn from p_new) iff u < max(0, 1 - p_old(z)/p_new(z)).
inline bool rule2_accept(const VectorRef &z, const GaussianPdf &p_new, const GaussianPdf &p_old, double u)
{
    return u < rule2_probability(log_density_ratio(p_new, p_old, z));
}

namespace detail
{
class GenerationBuilder
{
public:
    GenerationBuilder(const GaussianPdf &pdf, std::size_t target) : pdf_(pdf), target_(target)
    {
        rows_.reserve(target + 1);
        fitness_.reserve(target + 1);
        provenance_.reserve(target + 1);
    }

    std::size_t size() const { return rows_.size(); }
    bool full() const { return rows_.size() >= target_; }

    void add(const VectorRef &z, double fitness, Provenance provenance)
    {
        rows_.emplace_back(z);
        fitness_.push_back(fitness);
        provenance_.push_back(provenance);
    }

    void remove(std::size_t i)
    {
        rows_.erase(rows_.begin() + static_cast<std::ptrdiff_t>(i));
        fitness_.erase(fitness_.begin() + static_cast<std::ptrdiff_t>(i));
        provenance_.erase(provenance_.begin() + static_cast<std::ptrdiff_t>(i));
    }

    void fill_fresh(Rng &rng)
    {
        Vector z(pdf_.dim());
        while (!full())
        {
            sample_into(pdf_, rng, z);
            add(z, Generation::unset_fitness(), {});
        }
    }

    MixOutcome finish()
    {
        const auto n = static_cast<Eigen::Index>(rows_.size());
        MixOutcome out{Generation{SampleMatrix(n, pdf_.dim()), Vector(n), std::move(provenance_), pdf_}};
        for (Eigen::Index i = 0; i < n; ++i)
        {
            out.generation.samples.row(i) = rows_[static_cast<std::size_t>(i)].transpose();
            out.generation.fitness[i] = fitness_[static_cast<std::size_t>(i)];
        }
        for (const auto &p : out.generation.provenance)
        {
            switch (p.origin)
            {
            case Origin::Fresh:
                ++out.fresh_count;
                break;
            case Origin::ReusedIM:
                ++out.reused_im;
                break;
            case Origin::ReusedEIM:
                ++out.reused_eim;
                break;
            }
        }
        out.reused_count = out.reused_im + out.reused_eim;
        return out;
    }

private:
    const GaussianPdf &pdf_;
    std::size_t target_;
    std::vector<Vector> rows_;
    std::vector<double> fitness_;
    std::vector<Provenance> provenance_;
};

inline void check_old_generation(const GaussianPdf &p_new, const GaussianPdf &p_old, const Generation &g_old,
                                 std::size_t n)
{
    require(n >= 1, "mix: target size must be >= 1");
    require(p_new.dim() == p_old.dim(), "mix: pdf dimensions differ");
    require(g_old.size() == n, "mix: old generation size differs from target size N");
    require(static_cast<Eigen::Index>(g_old.samples.cols()) == p_new.dim(), "mix: old generation dimension mismatch");
    require(g_old.fully_evaluated(), "mix: old generation has unevaluated samples");
}

/// One pass of the alternating Rule 1 / Rule 2 loop against a single old
/// (pdf, generation) pair. Returns once the builder holds >= N samples or
/// every old sample has been tried.
inline void alternate_rules(const GaussianPdf &p_new, const GaussianPdf &p_old, const Generation &g_old,
                            std::size_t archive_entry, Rng &rng, GenerationBuilder &builder)
{
    const std::size_t n = g_old.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i)
        order[i] = i;
    rng.shuffle(order);

    const Provenance reused{archive_entry == 1 ? Origin::ReusedIM : Origin::ReusedEIM, archive_entry, 0};
    Vector candidate(p_new.dim());
    for (std::size_t i = 0; i < n; ++i)
    {
        const double rand1 = rng.uniform();
        const double rand2 = rng.uniform();

        const std::size_t row = order[i];
        const auto z = g_old.samples.row(static_cast<Eigen::Index>(row)).transpose();
        if (rule1_accept(z, p_new, p_old, rand1))
        {
            Provenance p = reused;
            p.source_row = row;
            builder.add(z, g_old.fitness[static_cast<Eigen::Index>(row)], p);
        }

        sample_into(p_new, rng, candidate);
        if (rule2_accept(candidate, p_new, p_old, rand2))
            builder.add(candidate, Generation::unset_fitness(), {});

        if (builder.full())
            return;
    }
}

inline void trim_overshoot(GenerationBuilder &builder, std::size_t n, Rng &rng)
{
    if (builder.size() > n)
        builder.remove(rng.index(builder.size()));
}
} // namespace detail

/// Importance mixing against the previous generation.
///
/// Old rows are visited in a random order (one shuffle per call). Each
/// iteration tries one old sample under Rule 1 and one fresh draw from p_new
/// under Rule 2, stopping as soon as N samples are held. An overshoot to N+1
/// drops one uniformly chosen member; a shortfall after N iterations is
/// filled with direct draws from p_new. Reused members carry their archived
/// fitness; fresh members have NaN fitness.
inline MixOutcome mix(const GaussianPdf &p_new, const GaussianPdf &p_old, const Generation &g_old, Rng &rng,
                      std::size_t n)
{
    detail::check_old_generation(p_new, p_old, g_old, n);
    detail::GenerationBuilder builder(p_new, n);
    detail::alternate_rules(p_new, p_old, g_old, 1, rng, builder);
    detail::trim_overshoot(builder, n, rng);
    builder.fill_fresh(rng);
    return builder.finish();
}

/// Extended importance mixing over the archive, most recent entry first.
/// With a single-entry archive this is `mix` exactly, draw for draw.
inline MixOutcome mix_extended(const GaussianPdf &p_new, const Archive &archive, Rng &rng, std::size_t n)
{
    require(!archive.empty(), "mix_extended: archive is empty");
    for (const auto &entry : archive)
        detail::check_old_generation(p_new, entry.pdf, entry, n);

    detail::GenerationBuilder builder(p_new, n);
    std::size_t k = 1;
    for (const auto &entry : archive)
    {
        detail::alternate_rules(p_new, entry.pdf, entry, k, rng, builder);
        if (builder.full())
            break;
        ++k;
    }
    detail::trim_overshoot(builder, n, rng);
    builder.fill_fresh(rng);
    return builder.finish();
}

/// Exhaust-then-refill schedule: every old sample is tried under Rule 1,
/// then Rule 2 is repeated until the generation holds N samples. Kept as a
/// comparison mode for the statistical suite.
inline MixOutcome mix_sun_variant(const GaussianPdf &p_new, const GaussianPdf &p_old, const Generation &g_old,
                                  Rng &rng, std::size_t n, std::size_t max_rule2_trials = 100'000'000)
{
    detail::check_old_generation(p_new, p_old, g_old, n);
    detail::GenerationBuilder builder(p_new, n);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i)
        order[i] = i;
    rng.shuffle(order);
    for (const std::size_t row : order)
    {
        const auto z = g_old.samples.row(static_cast<Eigen::Index>(row)).transpose();
        if (rule1_accept(z, p_new, p_old, rng.uniform()))
            builder.add(z, g_old.fitness[static_cast<Eigen::Index>(row)], {Origin::ReusedIM, 1, row});
    }

    Vector candidate(p_new.dim());
    std::size_t trials = 0;
    while (!builder.full())
    {
        if (++trials > max_rule2_trials)
            throw std::runtime_error("mix_sun_variant: Rule 2 acceptance rate too low to refill the generation");
        const double u = rng.uniform();
        sample_into(p_new, rng, candidate);
        if (rule2_accept(candidate, p_new, p_old, u))
            builder.add(candidate, Generation::unset_fitness(), {});
    }
    return builder.finish();
}

} // namespace imix
