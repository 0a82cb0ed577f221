#include <imix/strategies.hpp>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace imix;

namespace
{
StrategyConfig config_for(Algorithm a, std::size_t n = 50, double sigma = 0.25)
{
    StrategyConfig c;
    c.algorithm = a;
    c.population = n;
    c.sigma = sigma;
    return c;
}

Vector sphere_fitness(const SampleMatrix &s)
{
    Vector f(s.rows());
    for (Eigen::Index i = 0; i < s.rows(); ++i)
        f[i] = -s.row(i).squaredNorm();
    return f;
}

double angle_degrees(const Vector &a, const Vector &b)
{
    const double c = std::clamp(a.dot(b) / (a.norm() * b.norm()), -1.0, 1.0);
    return std::acos(c) * 180.0 / std::numbers::pi;
}

void expect_same_state(const StrategyState &a, const StrategyState &b)
{
    EXPECT_TRUE(a.pdf == b.pdf);
    EXPECT_EQ(a.extra_variance, b.extra_variance);
    EXPECT_EQ(a.generation_index, b.generation_index);
    if (a.cmaes)
    {
        EXPECT_TRUE(a.cmaes->cov == b.cmaes->cov);
        EXPECT_TRUE(a.cmaes->path_sigma == b.cmaes->path_sigma);
        EXPECT_TRUE(a.cmaes->path_c == b.cmaes->path_c);
        EXPECT_EQ(a.cmaes->step, b.cmaes->step);
    }
}

// Independent transcription of the textbook CMA-ES update with default
// constants and log weights over the mu best.
struct ReferenceCma
{
    int n, mu;
    Vector m;
    double sigma;
    Matrix C;
    Vector ps, pc;
    int g = 0;

    void update(const std::vector<Vector> &xs, const std::vector<double> &f)
    {
        std::vector<int> idx(xs.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return f[a] < f[b]; });
        std::reverse(idx.begin(), idx.end());

        std::vector<double> w(mu);
        double wsum = 0;
        for (int i = 0; i < mu; ++i)
            wsum += (w[i] = std::log(mu + 0.5) - std::log(i + 1.0));
        double w2 = 0;
        for (auto &x : w)
        {
            x /= wsum;
            w2 += x * x;
        }
        const double mueff = 1.0 / w2;
        const double cs = (mueff + 2) / (n + mueff + 5);
        const double ds = 1 + 2 * std::max(0.0, std::sqrt((mueff - 1) / (n + 1)) - 1) + cs;
        const double cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n);
        const double c1 = 2 / ((n + 1.3) * (n + 1.3) + mueff);
        const double cmu = std::min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) * (n + 2) + mueff));
        const double chin = std::sqrt(static_cast<double>(n)) * (1 - 1.0 / (4 * n) + 1.0 / (21.0 * n * n));

        Eigen::SelfAdjointEigenSolver<Matrix> es(C);
        const Matrix B = es.eigenvectors();
        const Vector D = es.eigenvalues().cwiseSqrt();
        const Matrix invsqrtC = B * D.cwiseInverse().asDiagonal() * B.transpose();

        const Vector m_old = m;
        Vector mnew = Vector::Zero(n);
        for (int i = 0; i < mu; ++i)
            mnew += w[i] * xs[idx[i]];
        m = mnew;
        const Vector step = (m - m_old) / sigma;
        ps = (1 - cs) * ps + std::sqrt(cs * (2 - cs) * mueff) * invsqrtC * step;
        ++g;
        const double hsig =
            ps.norm() / std::sqrt(1 - std::pow(1 - cs, 2.0 * g)) / chin < 1.4 + 2.0 / (n + 1) ? 1.0 : 0.0;
        pc = (1 - cc) * pc + hsig * std::sqrt(cc * (2 - cc) * mueff) * step;
        Matrix artmp(n, mu);
        for (int i = 0; i < mu; ++i)
            artmp.col(i) = (xs[idx[i]] - m_old) / sigma;
        C = (1 - c1 - cmu) * C + c1 * (pc * pc.transpose() + (1 - hsig) * cc * (2 - cc) * C) +
            cmu * artmp * Vector::Map(w.data(), mu).asDiagonal() * artmp.transpose();
        sigma *= std::exp((cs / ds) * (ps.norm() / chin - 1));
    }
};
} // namespace

TEST(Algorithms, ParseAndPrint)
{
    for (auto a : {Algorithm::OpenES, Algorithm::SNES, Algorithm::CEM, Algorithm::CMAES})
        EXPECT_EQ(parse_algorithm(to_string(a)), a);
    EXPECT_FALSE(parse_algorithm("xnes"));
}

TEST(Ask, FreshOpenEsIsIsotropicAtInitialSigma)
{
    const auto s = make_strategy(config_for(Algorithm::OpenES), Vector::Zero(130));
    ASSERT_TRUE(ask(s).is_isotropic());
    EXPECT_EQ(std::get<Isotropic>(ask(s).cov()).sigma, 0.25);
    EXPECT_EQ(ask(s).mean(), Vector::Zero(130));
}

TEST(Ask, RepresentationPerAlgorithm)
{
    EXPECT_TRUE(ask(make_strategy(config_for(Algorithm::SNES), Vector::Zero(5))).is_diagonal());
    EXPECT_TRUE(ask(make_strategy(config_for(Algorithm::CEM), Vector::Zero(5))).is_diagonal());
    EXPECT_TRUE(ask(make_strategy(config_for(Algorithm::CMAES), Vector::Zero(5))).is_full());
    EXPECT_EQ(make_strategy(config_for(Algorithm::CEM, 50), Vector::Zero(5)).elite_count, 25u);
    EXPECT_EQ(make_strategy(config_for(Algorithm::CMAES, 51), Vector::Zero(5)).elite_count, 25u);
}

TEST(Ask, SideEffectFreeAndReflectsTell)
{
    auto s = make_strategy(config_for(Algorithm::SNES, 20), Vector::Zero(4));
    const GaussianPdf before = ask(s);
    EXPECT_TRUE(ask(s) == ask(s));
    Rng rng(1);
    const SampleMatrix x = sample(ask(s), rng, 20);
    tell(s, x, sphere_fitness(x + SampleMatrix::Constant(20, 4, 1.0)));
    EXPECT_FALSE(ask(s) == before);
}

TEST(Tell, AlgorithmMismatch)
{
    auto s = make_strategy(config_for(Algorithm::SNES, 4), Vector::Zero(2));
    const SampleMatrix x = SampleMatrix::Zero(4, 2);
    const Vector u = Vector::Zero(4);
    EXPECT_THROW(openes_tell(s, x, u), ContractViolation);
    EXPECT_THROW(cem_tell(s, x, u), ContractViolation);
    EXPECT_THROW(cmaes_tell(s, x, u), ContractViolation);
    auto o = make_strategy(config_for(Algorithm::OpenES, 4), Vector::Zero(2));
    EXPECT_THROW(snes_tell(o, x, u), ContractViolation);
    EXPECT_THROW(openes_tell(o, SampleMatrix::Zero(4, 3), u), ContractViolation);
}

TEST(OpenEs, ZeroUtilitiesLeaveMeanUnchanged)
{
    auto s = make_strategy(config_for(Algorithm::OpenES, 10), Vector::Ones(3));
    Rng rng(2);
    openes_tell(s, sample(ask(s), rng, 10), Vector::Zero(10));
    EXPECT_EQ(ask(s).mean(), Vector::Ones(3));
}

TEST(OpenEs, AntitheticPairClosedForm)
{
    const double sigma = 0.5, u = 0.3;
    const auto pdf = GaussianPdf::isotropic(Vector::Zero(3), sigma);
    Vector eps(3);
    eps << 0.2, -0.1, 0.4;
    SampleMatrix x(2, 3);
    x.row(0) = eps.transpose();
    x.row(1) = -eps.transpose();
    Vector util(2);
    util << u, -u;
    const Vector g = openes_gradient(pdf, x, util);
    EXPECT_LT((g - eps * 2.0 * u / (2.0 * sigma * sigma)).norm(), 1e-14);
}

TEST(OpenEs, GradientWithinFifteenDegreesOfSphereGradient)
{
    Vector mu(2);
    mu << 1.0, 1.0;
    const Vector truth = -2.0 * mu;
    const auto pdf = GaussianPdf::isotropic(mu, 0.25);
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed)
    {
        Rng rng(seed);
        const SampleMatrix x = sample(pdf, rng, 10'000);
        total += angle_degrees(openes_gradient(pdf, x, rank_transform(sphere_fitness(x))), truth);
    }
    EXPECT_LT(total / 100.0, 15.0);
}

TEST(OpenEs, CovarianceNeverChanges)
{
    auto s = make_strategy(config_for(Algorithm::OpenES, 20), Vector::Constant(5, 2.0));
    Rng rng(3);
    for (int g = 0; g < 30; ++g)
    {
        const SampleMatrix x = sample(ask(s), rng, 20);
        tell(s, x, sphere_fitness(x));
        ASSERT_TRUE(ask(s).is_isotropic());
        EXPECT_EQ(std::get<Isotropic>(ask(s).cov()).sigma, 0.25);
    }
}

TEST(Snes, ZeroUtilitiesLeaveStateUnchanged)
{
    auto s = make_strategy(config_for(Algorithm::SNES, 10), Vector::Ones(3));
    const GaussianPdf before = ask(s);
    Rng rng(4);
    snes_tell(s, sample(ask(s), rng, 10), Vector::Zero(10));
    EXPECT_TRUE(ask(s) == before);
}

TEST(Snes, FavoringOutliersWidensEveryCoordinate)
{
    auto s = make_strategy(config_for(Algorithm::SNES, 40, 1.0), Vector::Zero(3));
    Rng rng(5);
    const SampleMatrix x = sample(ask(s), rng, 40);
    Vector u(40);
    for (Eigen::Index i = 0; i < 40; ++i)
    {
        const auto r = x.row(i).array();
        u[i] = (r.abs() > 1.0).all() ? 1.0 : ((r.abs() < 1.0).all() ? -1.0 : 0.0);
    }
    const Vector before = ask(s).marginal_stddev();
    const auto g = snes_gradient(ask(s), x, u);
    ASSERT_TRUE((g.log_sigma.array() > 0.0).all());
    snes_tell(s, x, u);
    EXPECT_TRUE((ask(s).marginal_stddev().array() > before.array()).all());
}

TEST(Snes, NaturalGradientMatchesFiniteDifference)
{
    // f(z) = -sum a_j (z_j - c_j)^2 has J(mu, sigma) = -sum a_j ((mu_j - c_j)^2 + sigma_j^2).
    Vector a(2), c(2), mu(2), sigma(2);
    a << 1.0, 3.0;
    c << 0.5, -1.0;
    mu << 2.0, 1.0;
    sigma << 0.6, 0.4;
    auto J = [&](const Vector &m, const Vector &log_s) {
        return -(a.array() * ((m - c).array().square() + (2.0 * log_s.array()).exp())).sum();
    };
    const Vector log_sigma = sigma.array().log();
    const double h = 1e-6;
    Vector fd(4);
    for (int j = 0; j < 2; ++j)
    {
        Vector e = Vector::Zero(2);
        e[j] = h;
        // Natural gradient for the mean is sigma^2 times the plain one; the
        // log-sigma component is used as is.
        fd[j] = sigma[j] * sigma[j] * (J(mu + e, log_sigma) - J(mu - e, log_sigma)) / (2 * h);
        fd[2 + j] = (J(mu, log_sigma + e) - J(mu, log_sigma - e)) / (2 * h);
    }
    const auto pdf = GaussianPdf::diagonal(mu, sigma.cwiseAbs2());
    Rng rng(6);
    const SampleMatrix x = sample(pdf, rng, 10'000);
    Vector f(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        f[i] = -(a.array() * (x.row(i).transpose() - c).array().square()).sum();
    const Vector u = f.array() - f.mean();
    const auto g = snes_gradient(pdf, x, u);
    Vector est(4);
    est << g.mean, g.log_sigma;
    EXPECT_GT(est.dot(fd) / (est.norm() * fd.norm()), 0.9);
}

TEST(Snes, SigmaStaysPositive)
{
    auto s = make_strategy(config_for(Algorithm::SNES, 20), Vector::Zero(4));
    Rng rng(7);
    for (int g = 0; g < 200; ++g)
    {
        const SampleMatrix x = sample(ask(s), rng, 20);
        tell(s, x, sphere_fitness(x));
        ASSERT_TRUE((ask(s).marginal_stddev().array() > 0.0).all());
    }
}

TEST(Cem, IdenticalElitesGiveExtraVariance)
{
    auto s = make_strategy(config_for(Algorithm::CEM, 6), Vector::Zero(3));
    Vector p(3);
    p << 1.0, -2.0, 0.5;
    SampleMatrix x(6, 3);
    for (int i = 0; i < 6; ++i)
        x.row(i) = (i < 3 ? Vector::Zero(3) : p).transpose();
    Vector f(6);
    f << 0, 0, 0, 1, 1, 1;
    cem_tell(s, x, f);
    EXPECT_EQ(ask(s).mean(), p);
    EXPECT_EQ(std::get<Diagonal>(ask(s).cov()).variances, Vector::Constant(3, 0.01));
    EXPECT_DOUBLE_EQ(s.extra_variance, 0.01 * 0.995);
}

TEST(Cem, FullEliteSetUsesWholePopulation)
{
    StrategyConfig cfg = config_for(Algorithm::CEM, 8);
    cfg.elite_fraction = 1.0;
    auto s = make_strategy(cfg, Vector::Zero(2));
    Rng rng(8);
    const SampleMatrix x = sample(ask(s), rng, 8);
    cem_tell(s, x, sphere_fitness(x));
    const Vector mean = x.colwise().mean().transpose();
    const Vector var = (x.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
    EXPECT_LT((ask(s).mean() - mean).norm(), 1e-12);
    EXPECT_LT((std::get<Diagonal>(ask(s).cov()).variances - (var.array() + 0.01).matrix()).norm(), 1e-12);
}

TEST(Cem, MatchesTwoPassOracle)
{
    auto s = make_strategy(config_for(Algorithm::CEM, 30), Vector::Constant(4, 1.0));
    Rng rng(9);
    const SampleMatrix x = sample(ask(s), rng, 30);
    const Vector f = sphere_fitness(x);
    std::vector<int> idx(30);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return f[a] > f[b]; });
    Vector mean = Vector::Zero(4), var = Vector::Zero(4);
    for (int k = 0; k < 15; ++k)
        mean += x.row(idx[k]).transpose();
    mean /= 15.0;
    for (int k = 0; k < 15; ++k)
        var += (x.row(idx[k]).transpose() - mean).cwiseAbs2();
    var = var / 15.0 + Vector::Constant(4, 0.01);
    cem_tell(s, x, f);
    EXPECT_LT((ask(s).mean() - mean).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((std::get<Diagonal>(ask(s).cov()).variances - var).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Cem, ExtraVarianceScheduleAndFloor)
{
    StrategyConfig cfg = config_for(Algorithm::CEM, 10);
    cfg.cem = {0.01, 0.5, 1e-3};
    auto s = make_strategy(cfg, Vector::Zero(2));
    Rng rng(10);
    for (int g = 0; g < 12; ++g)
    {
        const double extra = s.extra_variance;
        const SampleMatrix x = sample(ask(s), rng, 10);
        tell(s, x, sphere_fitness(x));
        EXPECT_TRUE((std::get<Diagonal>(ask(s).cov()).variances.array() >= extra).all());
    }
    EXPECT_EQ(s.extra_variance, 1e-3);
}

TEST(Cmaes, OneUpdateMatchesReferenceTranscription)
{
    const int d = 6, n = 20;
    auto s = make_strategy(config_for(Algorithm::CMAES, n, 0.3), Vector::Constant(d, 0.7));
    ReferenceCma ref{d, n / 2, Vector::Constant(d, 0.7), 0.3, Matrix::Identity(d, d), Vector::Zero(d),
                     Vector::Zero(d)};
    Rng rng(11);
    for (int gen = 0; gen < 5; ++gen)
    {
        const SampleMatrix x = sample(ask(s), rng, n);
        Vector f(n);
        for (int i = 0; i < n; ++i)
            f[i] = -(x.row(i).array() - 0.1 * i).square().sum() + std::sin(3.0 * i);
        std::vector<Vector> xs;
        std::vector<double> fv;
        for (int i = 0; i < n; ++i)
        {
            xs.push_back(x.row(i).transpose());
            fv.push_back(f[i]);
        }
        cmaes_tell(s, x, f);
        ref.update(xs, fv);
        EXPECT_LT((s.pdf.mean() - ref.m).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_NEAR(s.cmaes->step, ref.sigma, 1e-8);
        EXPECT_LT((s.cmaes->cov - ref.C).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_LT((s.cmaes->path_sigma - ref.ps).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_LT((s.cmaes->path_c - ref.pc).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_LT((s.pdf.covariance() - ref.sigma * ref.sigma * ref.C).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Cmaes, EqualFitnessMovesMeanToWeightedElites)
{
    const int d = 3, n = 10;
    auto s = make_strategy(config_for(Algorithm::CMAES, n), Vector::Zero(d));
    Rng rng(12);
    const SampleMatrix x = sample(ask(s), rng, n);
    const Vector w = s.cmaes->weights;
    cmaes_tell(s, x, Vector::Zero(n));
    // Ties rank later indices higher, so the elites are rows 9, 8, ..., 5.
    Vector expected = Vector::Zero(d);
    for (int k = 0; k < 5; ++k)
        expected += w[k] * x.row(n - 1 - k).transpose();
    EXPECT_LT((ask(s).mean() - expected).norm(), 1e-12);
}

TEST(Cmaes, EvolutionPathHasZeroMeanUnderFlatFitness)
{
    const int d = 3, n = 10, seeds = 400;
    Vector total = Vector::Zero(d);
    double sq = 0.0;
    for (int seed = 0; seed < seeds; ++seed)
    {
        auto s = make_strategy(config_for(Algorithm::CMAES, n), Vector::Zero(d));
        Rng rng(static_cast<std::uint64_t>(seed));
        const SampleMatrix x = sample(ask(s), rng, n);
        cmaes_tell(s, x, Vector::Zero(n));
        total += s.cmaes->path_sigma;
        sq += s.cmaes->path_sigma.squaredNorm();
    }
    const Vector mean = total / seeds;
    const double se = std::sqrt(sq / seeds / d / seeds);
    EXPECT_LT(mean.cwiseAbs().maxCoeff(), 4.0 * se);
}

TEST(Cmaes, BestFitnessImprovesOnSphere)
{
    int monotone = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed)
    {
        auto s = make_strategy(config_for(Algorithm::CMAES, 50), Vector::Constant(5, 3.0));
        Rng rng(seed);
        double previous = -std::numeric_limits<double>::infinity();
        bool ok = true;
        for (int g = 0; g < 10; ++g)
        {
            const SampleMatrix x = sample(ask(s), rng, 50);
            const Vector f = sphere_fitness(x);
            ok = ok && f.maxCoeff() > previous;
            previous = f.maxCoeff();
            tell(s, x, f);
        }
        monotone += ok;
    }
    EXPECT_GE(monotone, 9);
}

TEST(Strategies, UpdatesInvariantUnderMonotoneFitnessTransform)
{
    for (auto a : {Algorithm::OpenES, Algorithm::SNES, Algorithm::CEM, Algorithm::CMAES})
    {
        auto s1 = make_strategy(config_for(a, 16), Vector::Constant(4, 1.0));
        auto s2 = s1;
        Rng rng(13);
        for (int g = 0; g < 5; ++g)
        {
            const SampleMatrix x = sample(ask(s1), rng, 16);
            const Vector f = sphere_fitness(x);
            tell(s1, x, f);
            tell(s2, x, f.unaryExpr([](double v) { return std::exp(v / 10.0) * 5.0 - 2.0; }));
        }
        expect_same_state(s1, s2);
    }
}

TEST(Strategies, AllFourSolveTenDimensionalSphere)
{
    for (auto a : {Algorithm::OpenES, Algorithm::SNES, Algorithm::CEM, Algorithm::CMAES})
    {
        int solved = 0;
        for (std::uint64_t seed = 0; seed < 5; ++seed)
        {
            auto s = make_strategy(config_for(a, 50), Vector::Constant(10, 5.0 / std::sqrt(10.0)));
            Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(a)}));
            bool reached = false;
            for (int g = 0; g < 300 && !reached; ++g)
            {
                const SampleMatrix x = sample(ask(s), rng, 50);
                tell(s, x, sphere_fitness(x));
                reached = ask(s).mean().norm() < 0.5;
            }
            solved += reached;
        }
        EXPECT_GE(solved, 4) << to_string(a);
    }
}
