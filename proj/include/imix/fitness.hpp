#pragma once

#include "core.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace imix
{
/// Indices ordered by ascending fitness; ties keep input order.
inline std::vector<std::size_t> ascending_order(const VectorRef &fitness)
{
    std::vector<std::size_t> order(static_cast<std::size_t>(fitness.size()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return fitness[static_cast<Eigen::Index>(a)] < fitness[static_cast<Eigen::Index>(b)];
    });
    return order;
}

/// Centered ranks: the i-th smallest entry gets i / (N - 1) - 0.5.
inline Vector rank_transform(const VectorRef &fitness)
{
    const auto n = fitness.size();
    require(n >= 2, "rank_transform: need at least two individuals");
    const auto order = ascending_order(fitness);
    Vector utilities(n);
    const double denom = static_cast<double>(n - 1);
    for (std::size_t rank = 0; rank < order.size(); ++rank)
        utilities[static_cast<Eigen::Index>(order[rank])] = static_cast<double>(rank) / denom - 0.5;
    return utilities;
}

/// Top `count` indices, best first. Consistent with rank_transform: the
/// best individual is the one with the highest centered rank.
inline std::vector<std::size_t> elite_indices(const VectorRef &fitness, std::size_t count)
{
    require(count >= 1 && count <= static_cast<std::size_t>(fitness.size()), "elite_indices: bad elite count");
    auto order = ascending_order(fitness);
    std::reverse(order.begin(), order.end());
    order.resize(count);
    return order;
}

constexpr double default_weight_decay = 0.05;

/// -coefficient * ||theta||^2, added to the raw return before ranking.
inline double weight_decay_penalty(const VectorRef &theta, double coefficient = default_weight_decay)
{
    return -coefficient * theta.squaredNorm();
}

/// raw + penalty(row) for every row of `samples`.
inline Vector penalized_fitness(const SampleMatrix &samples, const VectorRef &raw,
                                double coefficient = default_weight_decay)
{
    require(raw.size() == samples.rows(), "penalized_fitness: fitness length != sample count");
    Vector out(raw.size());
    for (Eigen::Index i = 0; i < raw.size(); ++i)
        out[i] = raw[i] + weight_decay_penalty(samples.row(i).transpose(), coefficient);
    return out;
}

} // namespace imix
