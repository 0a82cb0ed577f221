#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace imix
{
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// One sample per row; row-major so a row is a contiguous parameter vector.
using SampleMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VectorRef = Eigen::Ref<const Vector>;

/// Raised when a caller breaks a documented precondition (dimension
/// mismatches, wrong algorithm tag, empty inputs).
class ContractViolation : public std::logic_error
{
public:
    using std::logic_error::logic_error;
};

inline void require(bool condition, const std::string &message)
{
    if (!condition)
        throw ContractViolation(message);
}

/// SplitMix64 finalizer. Used to derive independent stream seeds from
/// (master seed, counters) without any sequential state.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) noexcept
{
    std::uint64_t h = splitmix64(master);
    for (const auto counter : path)
        h = splitmix64(h ^ splitmix64(counter + 0x632be59bd9b4e019ULL));
    return h;
}

/// Seeded random stream. Every stochastic operation in the library takes one
/// of these explicitly; nothing reads global state.
class Rng
{
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double normal() { return normal_(engine_); }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n)
    {
        std::uniform_int_distribution<std::size_t> dist(0, n - 1);
        return dist(engine_);
    }

    template <class T>
    void shuffle(std::vector<T> &values)
    {
        for (std::size_t i = values.size(); i > 1; --i)
            std::swap(values[i - 1], values[index(i)]);
    }

    std::mt19937_64 &engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Runs body(i) for i in [0, count) on up to `threads` workers. Work is split
/// into contiguous blocks, so results must not depend on scheduling.
template <class Body>
void parallel_for(std::size_t count, unsigned threads, Body &&body)
{
    threads = std::max(1u, threads);
    if (threads == 1 || count < 2)
    {
        for (std::size_t i = 0; i < count; ++i)
            body(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(threads, count);
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
    {
        const std::size_t begin = count * w / workers;
        const std::size_t end = count * (w + 1) / workers;
        pool.emplace_back([begin, end, &body] {
            for (std::size_t i = begin; i < end; ++i)
                body(i);
        });
    }
}

} // namespace imix
