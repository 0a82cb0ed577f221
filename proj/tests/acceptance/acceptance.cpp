// Acceptance checks. One PASS/FAIL line per criterion.

#include <imix/envs.hpp>
#include <imix/experiment.hpp>
#include <imix/fitness.hpp>
#include <imix/report.hpp>
#include <imix/strategies.hpp>
#include <imix/verify.hpp>

#include <CLI11.hpp>
#include <fmt/core.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <set>
#include <sys/wait.h>

using namespace imix;
namespace fs = std::filesystem;

namespace
{
struct Outcome
{
    bool passed = false;
    std::string detail;
};

struct Context
{
    fs::path work_dir;
    fs::path cache_dir;
    std::uint64_t seed = 20181001;
    unsigned threads = 1;
};

using Runs = std::vector<std::vector<GenerationRecord>>;

std::string self_fingerprint()
{
    static const std::string fp = [] {
        const std::string bytes = read_file("/proc/self/exe");
        return fmt::format("{:016x}", std::hash<std::string>{}(bytes));
    }();
    return fp;
}

/// Runs `cfg` for seeds 0..seeds-1, reusing results cached under the same
/// binary and config.
Runs cached_runs(const Context &ctx, const ExperimentConfig &cfg, const std::string &label)
{
    const std::string key = fmt::format("{:016x}", std::hash<std::string>{}(self_fingerprint() + format_config(cfg)));
    const fs::path dir = ctx.cache_dir / fmt::format("{}_{}", label, key);
    fs::create_directories(dir);
    Runs runs(cfg.seeds);
    std::vector<std::size_t> missing;
    for (std::size_t s = 0; s < cfg.seeds; ++s)
    {
        const fs::path file = dir / seed_csv_name(s);
        if (fs::exists(file))
            runs[s] = records_from_csv(read_file(file));
        else
            missing.push_back(s);
    }
    parallel_for(missing.size(), ctx.threads, [&](std::size_t j) {
        const std::size_t s = missing[j];
        runs[s] = run_one(cfg, s);
        const fs::path file = dir / seed_csv_name(s);
        const fs::path tmp = dir / fmt::format("{}.tmp{}", seed_csv_name(s), ::getpid());
        write_file(tmp, records_to_csv(runs[s]));
        fs::rename(tmp, file);
    });
    if (!missing.empty())
        fmt::print(stderr, "  ran {} of {} seeds for {}\n", missing.size(), cfg.seeds, label);
    return runs;
}

ExperimentConfig cartpole(Algorithm algo, MixingMode mode, std::size_t seeds = 5)
{
    ExperimentConfig c;
    c.env = EnvId::CartPole;
    c.algorithm = algo;
    c.mixing = mode;
    c.archive_k = 5;
    c.seeds = seeds;
    return c;
}

Outcome c1_unbiasedness(const Context &ctx)
{
    const auto start = std::chrono::steady_clock::now();
    std::vector<verify::PropertyResult> results;
    for (auto mixer : {verify::Mixer::Mix, verify::Mixer::MixExtended})
    {
        results.push_back(verify::mixing_unbiased(mixer, verify::shifted_1d(0.5), "1D", 1000, 100,
                                                  derive_seed(ctx.seed, {1, 1})));
        results.push_back(verify::mixing_unbiased(mixer, verify::diagonal_2d(), "2D", 1000, 100,
                                                  derive_seed(ctx.seed, {1, 2})));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool all = secs < 60.0;
    std::string detail;
    for (const auto &r : results)
    {
        all = all && r.passed;
        detail += fmt::format("[{} {}: {}] ", r.passed ? "ok" : "FAILED", r.name, r.detail);
    }
    detail += fmt::format("runtime {:.1f}s (limit 60s), alpha {} Bonferroni", secs, verify::alpha);
    return {all, detail};
}

Outcome c2_reuse_vs_lambda(const Context &ctx)
{
    const auto r = verify::reuse_matches_lambda(verify::shifted_1d(0.5), 10'000, 100, 0.01, derive_seed(ctx.seed, {2}));
    return {r.passed, r.detail};
}

Outcome c3_sun_bias(const Context &ctx)
{
    const auto r = verify::sun_variant_more_biased(verify::shifted_1d(1.0), 1000, 100, derive_seed(ctx.seed, {3}));
    return {r.passed, r.detail};
}

Outcome c4_param_counts(const Context &)
{
    const int cp = PolicySpec::for_env(EnvSpec::make(EnvId::CartPole)).param_count();
    const int ac = PolicySpec::for_env(EnvSpec::make(EnvId::Acrobot)).param_count();
    return {cp == 130 && ac == 155, fmt::format("cartpole d={} (want 130), acrobot d={} (want 155)", cp, ac)};
}

Outcome c5_snes_convergence(const Context &ctx)
{
    const auto runs = cached_runs(ctx, cartpole(Algorithm::SNES, MixingMode::None), "snes_none");
    int reached = 0;
    std::string gens;
    for (const auto &r : runs)
    {
        const auto g = first_reaching(r, 195.0);
        reached += g.has_value();
        gens += g ? fmt::format(" {}", *g) : " -";
    }
    return {reached >= 4, fmt::format("{}/5 seeds reach mean >= 195 within 1000 generations (need 4); first "
                                      "generation per seed:{}",
                                      reached, gens)};
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> evals_to_threshold(const Runs &runs, double threshold)
{
    std::vector<double> out;
    for (const auto &r : runs)
    {
        const auto g = first_reaching(r, threshold);
        out.push_back(g ? static_cast<double>(r[*g].cum_evals) : std::numeric_limits<double>::infinity());
    }
    return out;
}

std::string join(const std::vector<double> &v)
{
    std::string s;
    for (double x : v)
        s += std::isfinite(x) ? fmt::format(" {:.0f}", x) : " inf";
    return s;
}

Outcome c6_sample_efficiency(const Context &ctx)
{
    const auto none = evals_to_threshold(cached_runs(ctx, cartpole(Algorithm::SNES, MixingMode::None), "snes_none"),
                                         195.0);
    const auto im = evals_to_threshold(cached_runs(ctx, cartpole(Algorithm::SNES, MixingMode::IM), "snes_im"), 195.0);
    const double m_none = median(none), m_im = median(im);
    const double ratio = std::isfinite(m_im) ? m_none / m_im : 0.0;
    return {std::isfinite(m_im) && ratio >= 10.0,
            fmt::format("episodes to mean >= 195, none:{} | im:{} | median ratio {:.2f} (need >= 10)", join(none),
                        join(im), ratio)};
}

constexpr std::array all_algorithms{Algorithm::SNES, Algorithm::OpenES, Algorithm::CEM, Algorithm::CMAES};

Outcome c7_reuse_rates(const Context &ctx)
{
    bool all = true;
    std::string detail;
    for (const auto algo : all_algorithms)
    {
        const auto s = reuse_of(cached_runs(ctx, cartpole(algo, MixingMode::EIM), fmt::format("{}_eim", to_string(algo))));
        double lo = 85.0, hi = 100.0;
        if (algo == Algorithm::CEM)
            lo = 35.0, hi = 65.0;
        else if (algo == Algorithm::CMAES)
            lo = 15.0, hi = 45.0;
        const bool ok = s.total_pct() >= lo && s.total_pct() <= hi && s.eim_share_pct() <= 15.0;
        all = all && ok;
        detail += fmt::format("[{} {}: total {:.1f}% in [{}, {}], eim share {:.1f}% <= 15] ", ok ? "ok" : "FAILED",
                              to_string(algo), s.total_pct(), lo, hi, s.eim_share_pct());
    }
    return {all, detail + "(eim K=5, 5 seeds, default budgets)"};
}

Outcome c8_eim_close_to_im(const Context &ctx)
{
    bool all = true;
    std::string detail;
    for (const auto algo : all_algorithms)
    {
        const auto eim = reuse_of(cached_runs(ctx, cartpole(algo, MixingMode::EIM), fmt::format("{}_eim", to_string(algo))));
        const auto im = reuse_of(cached_runs(ctx, cartpole(algo, MixingMode::IM), fmt::format("{}_im", to_string(algo))));
        const double gap = std::abs(eim.total_pct() - im.total_pct());
        const bool ok = gap <= 12.0;
        all = all && ok;
        detail += fmt::format("[{} {}: eim {:.1f}% im {:.1f}% gap {:.1f}pp] ", ok ? "ok" : "FAILED", to_string(algo),
                              eim.total_pct(), im.total_pct(), gap);
    }
    return {all, detail + "(limit 12pp)"};
}

Outcome c9_disk(const Context &ctx)
{
    const auto r = verify::disk_acceptance(100'000, derive_seed(ctx.seed, {9}));
    return {r.passed, r.detail + " (tolerance 0.005)"};
}

Outcome c10_openes_direction(const Context &ctx)
{
    // f(x) = -x' A x; gradient -2 A mu.
    Matrix A(2, 2);
    A << 2.0, 0.5, 0.5, 1.0;
    Vector mu(2);
    mu << 1.0, -0.5;
    const Vector truth = -2.0 * A * mu;
    const auto pdf = GaussianPdf::isotropic(mu, 0.25);
    double total = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s)
    {
        Rng rng(derive_seed(ctx.seed, {10, s}));
        const SampleMatrix x = sample(pdf, rng, 10'000);
        Vector f(x.rows());
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            f[i] = -x.row(i).dot(A * x.row(i).transpose());
        const Vector g = openes_gradient(pdf, x, rank_transform(f));
        total += std::acos(std::clamp(g.dot(truth) / (g.norm() * truth.norm()), -1.0, 1.0)) * 180.0 / std::numbers::pi;
    }
    const double mean = total / 100.0;
    return {mean < 15.0, fmt::format("mean angle {:.3f} deg over 100 seeds, N=10000 (limit 15)", mean)};
}

int run_cli(const std::string &args)
{
    const std::string cmd = fmt::format("\"{}\" {} >/dev/null 2>&1", IMIX_CLI_PATH, args);
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome c11_determinism(const Context &ctx)
{
    const fs::path base = ctx.work_dir / "determinism";
    fs::remove_all(base);
    fs::create_directories(base);
    const std::vector<std::pair<std::string, std::string>> configs{
        {"snes_im", "schema_version = 1\nalgorithm = snes\nmixing = im\npopulation = 30\ngenerations = 60\nseeds = 3\n"},
        {"cmaes_eim", "schema_version = 1\nalgorithm = cmaes\nmixing = eim\narchive_k = 3\npopulation = 20\n"
                      "generations = 40\nseeds = 3\nseed_offset = 7\n"},
    };
    bool all = true;
    std::string detail;
    for (const auto &[name, text] : configs)
    {
        const fs::path cfg = base / (name + ".cfg");
        write_file(cfg, text);
        std::vector<fs::path> outs;
        for (const auto &[tag, threads] : std::vector<std::pair<std::string, int>>{{"a_t1", 1}, {"b_t1", 1}, {"c_t8", 8}})
        {
            const fs::path out = base / (name + "_" + tag);
            const int code = run_cli(fmt::format("run --config \"{}\" --out \"{}\" --threads {}", cfg.string(),
                                                 out.string(), threads));
            if (code != 0)
            {
                all = false;
                detail += fmt::format("[{} {} exit {}] ", name, tag, code);
            }
            outs.push_back(out);
        }
        std::size_t compared = 0, differing = 0;
        for (const auto &file : find_seed_csvs(outs[0]))
            for (std::size_t k = 1; k < outs.size(); ++k)
            {
                ++compared;
                const fs::path other = outs[k] / file.path.filename();
                if (!fs::exists(other) || read_file(other) != read_file(file.path))
                    ++differing;
            }
        for (std::size_t k = 1; k < outs.size(); ++k)
            if (read_file(outs[k] / "summary.json") != read_file(outs[0] / "summary.json"))
                ++differing;
        all = all && compared == 6 && differing == 0;
        detail += fmt::format("[{}: {} CSV pairs compared, {} files differ] ", name, compared, differing);
    }
    return {all, detail + "(two invocations at 1 thread, one at 8)"};
}

struct Criterion
{
    int id;
    std::string name;
    std::function<Outcome(const Context &)> check;
};

const std::vector<Criterion> &criteria()
{
    static const std::vector<Criterion> list{
        {1, "mixing unbiasedness (KS, mix and mix_extended, 1D and 2D)", c1_unbiasedness},
        {2, "reuse fraction of mix matches lambda", c2_reuse_vs_lambda},
        {3, "Sun variant more biased than mix", c3_sun_bias},
        {4, "policy parameter counts", c4_param_counts},
        {5, "SNES CartPole convergence", c5_snes_convergence},
        {6, "SNES+IM sample-efficiency gain >= 10x", c6_sample_efficiency},
        {7, "reuse rates per algorithm", c7_reuse_rates},
        {8, "EIM reuse close to IM", c8_eim_close_to_im},
        {9, "disk rejection acceptance rate", c9_disk},
        {10, "OpenES gradient direction", c10_openes_direction},
        {11, "CLI run determinism", c11_determinism},
    };
    return list;
}
} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Acceptance checks"};
    std::vector<int> only;
    Context ctx;
    std::string work_dir = "acceptance_work";
    std::string cache_dir;
    app.add_option("--only", only, "Criterion numbers to run (default: all)")->check(CLI::Range(1, 11));
    app.add_option("--work-dir", work_dir, "Scratch directory");
    app.add_option("--cache-dir", cache_dir, "Directory for cached experiment runs (default: <work-dir>/cache)");
    app.add_option("--seed", ctx.seed, "Base seed");
    app.add_option("--threads", ctx.threads, "Worker threads")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    ctx.work_dir = work_dir;
    ctx.cache_dir = cache_dir.empty() ? ctx.work_dir / "cache" : fs::path(cache_dir);
    fs::create_directories(ctx.work_dir);

    const std::set<int> selected(only.begin(), only.end());
    bool all = true;
    for (const auto &c : criteria())
    {
        if (!selected.empty() && !selected.count(c.id))
            continue;
        Outcome o;
        try
        {
            o = c.check(ctx);
        }
        catch (const std::exception &e)
        {
            o = {false, fmt::format("error: {}", e.what())};
        }
        all = all && o.passed;
        fmt::print("{} C{} {}: {}\n", o.passed ? "PASS" : "FAIL", c.id, c.name, o.detail);
        std::fflush(stdout);
    }
    return all ? 0 : 1;
}
