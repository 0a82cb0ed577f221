// imix: run, verify, sweep and report importance-mixing ES experiments.

#include <imix/experiment.hpp>
#include <imix/report.hpp>
#include <imix/verify.hpp>

#include <CLI11.hpp>
#include <fmt/core.h>

#include <filesystem>
#include <iostream>
#include <mutex>

namespace fs = std::filesystem;

namespace
{
enum Exit : int
{
    ok = 0,
    failure = 1,
    usage = 2,
    bad_config = 3,
    resume_conflict = 4,
    io_error = 5,
};

class ResumeConflict : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

struct RunFlags
{
    std::string config_path;
    std::optional<std::size_t> seeds;
    std::optional<std::string> out;
    std::optional<std::string> mixing;
    std::optional<std::size_t> archive_k;
    unsigned threads = 1;
};

imix::ExperimentConfig resolve_config(const RunFlags &flags)
{
    imix::ExperimentConfig cfg = imix::load_config(flags.config_path);
    if (flags.seeds)
        cfg.seeds = *flags.seeds;
    if (flags.out)
        cfg.output_dir = *flags.out;
    if (flags.mixing)
    {
        const auto m = imix::parse_mixing(*flags.mixing);
        if (!m)
            throw imix::ConfigError(fmt::format("--mixing: expected none, im or eim, got '{}'", *flags.mixing));
        cfg.mixing = *m;
    }
    if (flags.archive_k)
        cfg.archive_k = *flags.archive_k;
    cfg.validate();
    return cfg;
}

/// Runs every seed of `cfg` into `dir`: seed CSVs, summary.json and
/// reuse_table.csv. Refuses to touch a directory that already holds any of
/// the seed CSVs it would write.
imix::RunSummary run_into(const imix::ExperimentConfig &cfg, const fs::path &dir, unsigned threads,
                          nlohmann::json *summary_out = nullptr)
{
    std::vector<std::uint64_t> seeds(cfg.seeds);
    for (std::size_t i = 0; i < cfg.seeds; ++i)
        seeds[i] = cfg.seed_offset + i;

    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw imix::IoError(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
    for (const auto s : seeds)
        if (fs::exists(dir / imix::seed_csv_name(s)))
            throw ResumeConflict(fmt::format("'{}' already contains {}; refusing to overwrite a previous run",
                                             dir.string(), imix::seed_csv_name(s)));

    std::vector<std::vector<imix::GenerationRecord>> runs(seeds.size());
    std::mutex log_mutex;
    const unsigned outer = std::min<unsigned>(threads, static_cast<unsigned>(seeds.size()));
    const unsigned inner = std::max(1u, threads / std::max(1u, outer));
    imix::parallel_for(seeds.size(), outer, [&](std::size_t i) {
        runs[i] = imix::run_one(cfg, seeds[i], {inner, {}});
        const auto &last = runs[i].back();
        std::lock_guard lock(log_mutex);
        fmt::print(stderr, "seed {}: final mean {:.2f}, {} episodes\n", seeds[i], last.mean_fitness, last.cum_evals);
    });

    for (std::size_t i = 0; i < seeds.size(); ++i)
        imix::write_file(dir / imix::seed_csv_name(seeds[i]), imix::records_to_csv(runs[i]));
    const nlohmann::json summary = imix::summary_json(runs, seeds, cfg);
    imix::write_file(dir / "summary.json", summary.dump(2) + "\n");
    imix::write_file(dir / "reuse_table.csv", imix::reuse_table_csv(imix::collect_reuse_rows(dir)));
    if (summary_out)
        *summary_out = summary;

    imix::RunSummary s;
    s.runs = runs.size();
    s.reuse = imix::reuse_of(runs);
    return s;
}

int cmd_run(const RunFlags &flags)
{
    const auto cfg = resolve_config(flags);
    const auto s = run_into(cfg, cfg.output_dir, flags.threads);
    fmt::print("{} seeds written to {} (reuse {:.1f}%)\n", s.runs, cfg.output_dir, s.reuse.total_pct());
    return ok;
}

std::vector<double> parse_list(const std::string &flag, const std::string &text)
{
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(imix::detail::parse_number<double>(flag, imix::detail::trim(item)));
    if (out.empty())
        throw imix::ConfigError(fmt::format("{}: empty list", flag));
    return out;
}

int cmd_sweep(const RunFlags &flags, const std::string &pops, const std::string &sigmas, const std::string &lrs)
{
    const auto base = resolve_config(flags);
    const auto pop_list = pops.empty() ? std::vector<double>{static_cast<double>(base.population)}
                                       : parse_list("--pop", pops);
    const auto sigma_list = sigmas.empty() ? std::vector<double>{base.sigma} : parse_list("--sigma", sigmas);
    const auto lr_list = lrs.empty() ? std::vector<double>{base.learning_rate} : parse_list("--lr", lrs);

    std::string index = "cell,population,sigma,learning_rate,final_mean_fitness,final_ci68,total_evals,total_reuse_pct\n";
    for (const double pop : pop_list)
        for (const double sigma : sigma_list)
            for (const double lr : lr_list)
            {
                imix::ExperimentConfig cfg = base;
                if (pop < 2 || pop != std::floor(pop))
                    throw imix::ConfigError(fmt::format("--pop: '{}' is not an integer >= 2", pop));
                cfg.population = static_cast<std::size_t>(pop);
                cfg.sigma = sigma;
                cfg.learning_rate = lr;
                cfg.validate();
                const std::string cell = fmt::format("pop{}_sigma{}_lr{}", cfg.population, sigma, lr);
                nlohmann::json summary;
                run_into(cfg, fs::path(base.output_dir) / cell, flags.threads, &summary);
                const auto &ci = summary["ci68_half_width"];
                index += fmt::format("{},{},{},{},{},{},{},{:.1f}\n", cell, cfg.population, sigma, lr,
                                     summary["mean_fitness"].back().get<double>(),
                                     ci.is_null() ? std::string() : fmt::format("{}", ci.back().get<double>()),
                                     summary["total_evals"].get<std::size_t>(),
                                     summary["reuse"]["total_pct"].get<double>());
                fmt::print("{} done\n", cell);
            }
    imix::write_file(fs::path(base.output_dir) / "sweep.csv", index);
    return ok;
}

int cmd_report(const std::string &in, const std::string &out)
{
    const auto rows = imix::collect_reuse_rows(in);
    if (rows.empty())
        throw imix::IoError(fmt::format("no seed_<n>.csv files found under '{}'", in));
    const std::string table = imix::reuse_table_csv(rows);
    imix::write_file(out.empty() ? fs::path(in) / "reuse_table.csv" : fs::path(out), table);
    fmt::print("{}", table);
    return ok;
}

int cmd_verify(std::uint64_t seed)
{
    bool all = true;
    imix::verify::run_suite(seed, [&](const imix::verify::PropertyResult &r) {
        all = all && r.passed;
        fmt::print("{} {}: {} (seed {})\n", r.passed ? "PASS" : "FAIL", r.name, r.detail, r.seed);
        std::fflush(stdout);
    });
    return all ? ok : failure;
}
} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Evolution strategies with importance mixing"};
    app.require_subcommand(1);

    RunFlags flags;
    auto add_run_flags = [&](CLI::App *cmd) {
        cmd->add_option("--config", flags.config_path, "Experiment config file")->required();
        cmd->add_option("--seeds", flags.seeds, "Number of seeds (overrides the config)");
        cmd->add_option("--out", flags.out, "Output directory (overrides the config)");
        cmd->add_option("--mixing", flags.mixing, "none, im or eim (overrides the config)");
        cmd->add_option("--archive-k", flags.archive_k, "Archive size for eim (overrides the config)");
        cmd->add_option("--threads", flags.threads, "Worker threads")->check(CLI::PositiveNumber);
    };

    auto *run = app.add_subcommand("run", "Run an experiment config over its seeds");
    add_run_flags(run);

    auto *sweep = app.add_subcommand("sweep", "Grid over population size, sigma and learning rate");
    add_run_flags(sweep);
    std::string pops, sigmas, lrs;
    sweep->add_option("--pop", pops, "Comma-separated population sizes");
    sweep->add_option("--sigma", sigmas, "Comma-separated initial sigmas");
    sweep->add_option("--lr", lrs, "Comma-separated learning rates");

    auto *verify = app.add_subcommand("verify", "Run the statistical property suite");
    std::uint64_t verify_seed = 20181001;
    verify->add_option("--seed", verify_seed, "Base seed for the suite");

    auto *report = app.add_subcommand("report", "Rebuild the reuse table from seed CSVs");
    std::string report_in, report_out;
    report->add_option("--in", report_in, "Run directory, or a directory of run directories")->required();
    report->add_option("--out", report_out, "Output file (default: <in>/reuse_table.csv)");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp &e)
    {
        return app.exit(e);
    }
    catch (const CLI::ParseError &e)
    {
        app.exit(e);
        return usage;
    }

    try
    {
        if (*run)
            return cmd_run(flags);
        if (*sweep)
            return cmd_sweep(flags, pops, sigmas, lrs);
        if (*verify)
            return cmd_verify(verify_seed);
        return cmd_report(report_in, report_out);
    }
    catch (const imix::ConfigError &e)
    {
        fmt::print(stderr, "config error: {}\n", e.what());
        return bad_config;
    }
    catch (const ResumeConflict &e)
    {
        fmt::print(stderr, "resume conflict: {}\n", e.what());
        return resume_conflict;
    }
    catch (const imix::IoError &e)
    {
        fmt::print(stderr, "i/o error: {}\n", e.what());
        return io_error;
    }
    catch (const std::exception &e)
    {
        fmt::print(stderr, "error: {}\n", e.what());
        return failure;
    }
}
