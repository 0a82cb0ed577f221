#pragma once

#include "core.hpp"
#include "envs.hpp"
#include "fitness.hpp"
#include "gaussian.hpp"
#include "mixing.hpp"
#include "strategies.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace imix
{
enum class MixingMode
{
    None,
    IM,
    EIM,
};

inline std::string_view to_string(MixingMode m)
{
    switch (m)
    {
    case MixingMode::None:
        return "none";
    case MixingMode::IM:
        return "im";
    case MixingMode::EIM:
        return "eim";
    }
    return "?";
}

inline std::optional<MixingMode> parse_mixing(std::string_view s)
{
    for (auto m : {MixingMode::None, MixingMode::IM, MixingMode::EIM})
        if (s == to_string(m))
            return m;
    return std::nullopt;
}

/// Invalid or unreadable experiment configuration. The message names the
/// offending field.
class ConfigError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

constexpr int config_schema_version = 1;

struct ExperimentConfig
{
    EnvId env = EnvId::CartPole;
    Algorithm algorithm = Algorithm::SNES;
    std::size_t population = 50;
    std::optional<std::size_t> generations; // default depends on the algorithm
    MixingMode mixing = MixingMode::None;
    std::size_t archive_k = 5;
    double sigma = 0.25;
    double learning_rate = 0.01;
    double adam_beta1 = 0.99;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double weight_decay = 0.05;
    double elite_fraction = 0.5;
    CemSchedule cem{};
    std::size_t seeds = 25;
    std::uint64_t seed_offset = 0;
    double initial_mean = 0.0;
    double cartpole_angle_deg = 15.0;
    double force_magnitude = 10.0;
    int max_steps = 200;
    std::string output_dir = "out";

    std::size_t generation_budget() const
    {
        if (generations)
            return *generations;
        return (algorithm == Algorithm::OpenES || algorithm == Algorithm::SNES) ? 1000 : 400;
    }

    /// Number of archived generations mixing may draw from.
    std::size_t archive_capacity() const { return mixing == MixingMode::EIM ? archive_k : 1; }

    EnvSpec env_spec() const
    {
        EnvSpec spec = EnvSpec::make(env);
        spec.max_steps = max_steps;
        spec.cartpole.angle_threshold = cartpole_angle_deg * std::numbers::pi / 180.0;
        spec.cartpole.force_magnitude = force_magnitude;
        return spec;
    }

    StrategyConfig strategy_config() const
    {
        StrategyConfig s;
        s.algorithm = algorithm;
        s.population = population;
        s.sigma = sigma;
        s.adam = {learning_rate, adam_beta1, adam_beta2, adam_epsilon};
        s.elite_fraction = elite_fraction;
        s.cem = cem;
        return s;
    }

    void validate() const
    {
        auto check = [](bool ok, std::string_view field, std::string_view what) {
            if (!ok)
                throw ConfigError(fmt::format("config field '{}': {}", field, what));
        };
        check(population >= 2, "population", "must be >= 2");
        check(generation_budget() >= 1, "generations", "must be >= 1");
        check(archive_k >= 1, "archive_k", "must be >= 1");
        check(sigma > 0.0 && std::isfinite(sigma), "sigma", "must be > 0");
        check(learning_rate > 0.0, "learning_rate", "must be > 0");
        check(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1", "must be in [0, 1)");
        check(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2", "must be in [0, 1)");
        check(adam_epsilon > 0.0, "adam_epsilon", "must be > 0");
        check(weight_decay >= 0.0, "weight_decay", "must be >= 0");
        check(elite_fraction > 0.0 && elite_fraction <= 1.0, "elite_fraction", "must be in (0, 1]");
        check(cem.initial >= 0.0, "cem_extra_variance", "must be >= 0");
        check(cem.decay > 0.0 && cem.decay <= 1.0, "cem_extra_decay", "must be in (0, 1]");
        check(cem.floor >= 0.0, "cem_extra_floor", "must be >= 0");
        check(seeds >= 1, "seeds", "must be >= 1");
        check(cartpole_angle_deg > 0.0 && cartpole_angle_deg < 90.0, "cartpole_angle_deg", "must be in (0, 90)");
        check(force_magnitude > 0.0, "force_magnitude", "must be > 0");
        check(max_steps >= 1, "max_steps", "must be >= 1");
        check(!output_dir.empty(), "output_dir", "must be nonempty");
    }
};

namespace detail
{
inline std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string &key, const std::string &value)
{
    T out{};
    if constexpr (std::is_floating_point_v<T>)
    {
        char *end = nullptr;
        out = std::strtod(value.c_str(), &end);
        if (value.empty() || end != value.c_str() + value.size() || !std::isfinite(out))
            throw ConfigError(fmt::format("config field '{}': '{}' is not a number", key, value));
    }
    else
    {
        const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
        if (ec != std::errc{} || ptr != value.data() + value.size())
            throw ConfigError(fmt::format("config field '{}': '{}' is not a non-negative integer", key, value));
    }
    return out;
}

inline bool parse_bool(const std::string &key, const std::string &value)
{
    if (value == "true")
        return true;
    if (value == "false")
        return false;
    throw ConfigError(fmt::format("config field '{}': expected true or false, got '{}'", key, value));
}
} // namespace detail

/// Parses the flat `key = value` format. `#` starts a comment. The first
/// setting must be `schema_version = 1`; unknown and duplicate keys are
/// errors.
inline ExperimentConfig parse_config(std::string_view text)
{
    ExperimentConfig cfg;
    std::map<std::string, std::string> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    bool have_version = false;
    while (std::getline(in, line))
    {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        const std::string body = detail::trim(line);
        if (body.empty())
            continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError(fmt::format("config line {}: expected 'key = value'", line_no));
        const std::string key = detail::trim(std::string_view(body).substr(0, eq));
        const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
        if (key.empty())
            throw ConfigError(fmt::format("config line {}: empty key", line_no));
        if (!seen.emplace(key, value).second)
            throw ConfigError(fmt::format("config field '{}': duplicate key", key));

        if (key == "schema_version")
        {
            if (detail::parse_number<int>(key, value) != config_schema_version)
                throw ConfigError(fmt::format("config field 'schema_version': unsupported version '{}' (expected {})",
                                              value, config_schema_version));
            have_version = true;
            continue;
        }
        if (!have_version)
            throw ConfigError("config field 'schema_version': must be the first setting");

        if (key == "env")
        {
            const auto id = parse_env(value);
            if (!id)
                throw ConfigError(fmt::format("config field 'env': unknown environment '{}'", value));
            cfg.env = *id;
        }
        else if (key == "algorithm")
        {
            const auto a = parse_algorithm(value);
            if (!a)
                throw ConfigError(fmt::format("config field 'algorithm': unknown algorithm '{}'", value));
            cfg.algorithm = *a;
        }
        else if (key == "mixing")
        {
            const auto m = parse_mixing(value);
            if (!m)
                throw ConfigError(fmt::format("config field 'mixing': expected none, im or eim, got '{}'", value));
            cfg.mixing = *m;
        }
        else if (key == "population")
            cfg.population = detail::parse_number<std::size_t>(key, value);
        else if (key == "generations")
            cfg.generations = detail::parse_number<std::size_t>(key, value);
        else if (key == "archive_k")
            cfg.archive_k = detail::parse_number<std::size_t>(key, value);
        else if (key == "sigma")
            cfg.sigma = detail::parse_number<double>(key, value);
        else if (key == "learning_rate")
            cfg.learning_rate = detail::parse_number<double>(key, value);
        else if (key == "adam_beta1")
            cfg.adam_beta1 = detail::parse_number<double>(key, value);
        else if (key == "adam_beta2")
            cfg.adam_beta2 = detail::parse_number<double>(key, value);
        else if (key == "adam_epsilon")
            cfg.adam_epsilon = detail::parse_number<double>(key, value);
        else if (key == "weight_decay")
            cfg.weight_decay = detail::parse_number<double>(key, value);
        else if (key == "elite_fraction")
            cfg.elite_fraction = detail::parse_number<double>(key, value);
        else if (key == "cem_extra_variance")
            cfg.cem.initial = detail::parse_number<double>(key, value);
        else if (key == "cem_extra_decay")
            cfg.cem.decay = detail::parse_number<double>(key, value);
        else if (key == "cem_extra_floor")
            cfg.cem.floor = detail::parse_number<double>(key, value);
        else if (key == "seeds")
            cfg.seeds = detail::parse_number<std::size_t>(key, value);
        else if (key == "seed_offset")
            cfg.seed_offset = detail::parse_number<std::uint64_t>(key, value);
        else if (key == "initial_mean")
            cfg.initial_mean = detail::parse_number<double>(key, value);
        else if (key == "cartpole_angle_deg")
            cfg.cartpole_angle_deg = detail::parse_number<double>(key, value);
        else if (key == "gym_compat_angle")
            cfg.cartpole_angle_deg = detail::parse_bool(key, value) ? 12.0 : 15.0;
        else if (key == "force_magnitude")
            cfg.force_magnitude = detail::parse_number<double>(key, value);
        else if (key == "max_steps")
            cfg.max_steps = detail::parse_number<int>(key, value);
        else if (key == "output_dir")
            cfg.output_dir = value;
        else
            throw ConfigError(fmt::format("config field '{}': unknown key", key));
    }
    if (!have_version)
        throw ConfigError("config field 'schema_version': missing");
    if (seen.count("gym_compat_angle") && seen.count("cartpole_angle_deg"))
        throw ConfigError("config field 'gym_compat_angle': conflicts with 'cartpole_angle_deg'");
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError(fmt::format("cannot read config file '{}'", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

/// Serializes a config in the same format parse_config reads.
inline std::string format_config(const ExperimentConfig &c)
{
    std::string s = fmt::format("schema_version = {}\n", config_schema_version);
    s += fmt::format("env = {}\nalgorithm = {}\npopulation = {}\ngenerations = {}\n", to_string(c.env),
                     to_string(c.algorithm), c.population, c.generation_budget());
    s += fmt::format("mixing = {}\narchive_k = {}\nsigma = {}\nlearning_rate = {}\n", to_string(c.mixing),
                     c.archive_k, c.sigma, c.learning_rate);
    s += fmt::format("adam_beta1 = {}\nadam_beta2 = {}\nadam_epsilon = {}\nweight_decay = {}\n", c.adam_beta1,
                     c.adam_beta2, c.adam_epsilon, c.weight_decay);
    s += fmt::format("elite_fraction = {}\ncem_extra_variance = {}\ncem_extra_decay = {}\ncem_extra_floor = {}\n",
                     c.elite_fraction, c.cem.initial, c.cem.decay, c.cem.floor);
    s += fmt::format("seeds = {}\nseed_offset = {}\ninitial_mean = {}\ncartpole_angle_deg = {}\n", c.seeds,
                     c.seed_offset, c.initial_mean, c.cartpole_angle_deg);
    s += fmt::format("force_magnitude = {}\nmax_steps = {}\noutput_dir = {}\n", c.force_magnitude, c.max_steps,
                     c.output_dir);
    return s;
}

struct GenerationRecord
{
    std::size_t generation = 0;
    std::size_t cum_evals = 0;
    double mean_fitness = 0.0;
    double max_fitness = 0.0;
    double min_fitness = 0.0;
    std::size_t reused_total = 0;
    std::size_t reused_im = 0;
    std::size_t reused_eim = 0;
    std::size_t fresh = 0;

    friend bool operator==(const GenerationRecord &, const GenerationRecord &) = default;
};

/// Stream seeds. Every rollout gets its own stream keyed by
/// (run seed, generation, sample index), so results do not depend on
/// evaluation order or thread count.
struct SeedStreams
{
    static constexpr std::uint64_t init_tag = 1;
    static constexpr std::uint64_t mixing_tag = 2;
    static constexpr std::uint64_t episode_tag = 3;

    static std::uint64_t mixing(std::uint64_t seed) { return derive_seed(seed, {mixing_tag}); }
    static std::uint64_t episode(std::uint64_t seed, std::size_t generation, std::size_t index)
    {
        return derive_seed(seed, {episode_tag, generation, index});
    }
};

struct RunOptions
{
    unsigned threads = 1;
    /// Called after each generation with the evaluated generation (optional).
    std::function<void(const Generation &, const GenerationRecord &)> on_generation;
};

/// Runs one seed of an experiment: ask, mix (or sample), evaluate only the
/// fresh members with one episode each, shape (weight decay + rank), tell,
/// archive, record.
inline std::vector<GenerationRecord> run_one(const ExperimentConfig &config, std::uint64_t seed,
                                             const RunOptions &options = {})
{
    config.validate();
    const EnvSpec env = config.env_spec();
    const PolicySpec policy = PolicySpec::for_env(env);
    const auto dim = static_cast<Eigen::Index>(policy.param_count());
    const std::size_t n = config.population;

    StrategyState strategy = make_strategy(config.strategy_config(), Vector::Constant(dim, config.initial_mean));
    Archive archive(config.archive_capacity());
    Rng mixing_rng(SeedStreams::mixing(seed));

    std::vector<GenerationRecord> records;
    records.reserve(config.generation_budget());
    std::size_t cum_evals = 0;
    for (std::size_t gen = 0; gen < config.generation_budget(); ++gen)
    {
        const GaussianPdf &pdf = ask(strategy);
        MixOutcome mixed = [&] {
            if (config.mixing == MixingMode::None || archive.empty())
            {
                MixOutcome m{Generation::sampled(pdf, mixing_rng, n)};
                m.fresh_count = n;
                return m;
            }
            if (config.mixing == MixingMode::IM)
                return mix(pdf, archive[0].pdf, archive[0], mixing_rng, n);
            return mix_extended(pdf, archive, mixing_rng, n);
        }();
        Generation &generation = mixed.generation;

        const auto fresh = generation.fresh_indices();
        parallel_for(fresh.size(), options.threads, [&](std::size_t j) {
            const std::size_t i = fresh[j];
            Rng episode_rng(SeedStreams::episode(seed, gen, i));
            const auto row = generation.samples.row(static_cast<Eigen::Index>(i));
            const auto result = rollout(env, std::span<const double>(row.data(), static_cast<std::size_t>(row.size())),
                                        episode_rng);
            generation.fitness[static_cast<Eigen::Index>(i)] = result.total_return;
        });
        cum_evals += fresh.size();

        const Vector shaped = penalized_fitness(generation.samples, generation.fitness, config.weight_decay);
        tell(strategy, generation.samples, shaped);

        GenerationRecord rec;
        rec.generation = gen;
        rec.cum_evals = cum_evals;
        rec.mean_fitness = generation.fitness.mean();
        rec.max_fitness = generation.fitness.maxCoeff();
        rec.min_fitness = generation.fitness.minCoeff();
        rec.reused_total = mixed.reused_count;
        rec.reused_im = mixed.reused_im;
        rec.reused_eim = mixed.reused_eim;
        rec.fresh = fresh.size();
        if (options.on_generation)
            options.on_generation(generation, rec);
        records.push_back(rec);

        archive.push(std::move(generation));
    }
    return records;
}

/// Whole-run reuse totals. Shares from IM / EIM are fractions of the total
/// reuse, not of all samples.
struct ReuseStats
{
    std::size_t samples = 0;
    std::size_t reused = 0;
    std::size_t reused_im = 0;
    std::size_t reused_eim = 0;

    double total_pct() const { return samples ? 100.0 * static_cast<double>(reused) / static_cast<double>(samples) : 0.0; }
    double im_share_pct() const
    {
        return reused ? 100.0 * static_cast<double>(reused_im) / static_cast<double>(reused) : 0.0;
    }
    double eim_share_pct() const
    {
        return reused ? 100.0 * static_cast<double>(reused_eim) / static_cast<double>(reused) : 0.0;
    }

    void add(const GenerationRecord &r)
    {
        samples += r.reused_total + r.fresh;
        reused += r.reused_total;
        reused_im += r.reused_im;
        reused_eim += r.reused_eim;
    }
};

struct RunSummary
{
    std::size_t runs = 0;
    std::vector<double> mean_fitness;    // per generation, averaged over seeds
    std::vector<double> ci68_half_width; // sample std / sqrt(runs)
    std::vector<double> mean_cum_evals;
    ReuseStats reuse;
};

/// Pointwise mean and 68% confidence half-width of the per-generation mean
/// fitness across runs, plus whole-run reuse totals.
inline RunSummary aggregate(const std::vector<std::vector<GenerationRecord>> &runs)
{
    require(runs.size() >= 2, "aggregate: need at least two runs");
    const std::size_t len = runs.front().size();
    for (const auto &r : runs)
        require(r.size() == len, "aggregate: runs have different lengths");

    RunSummary s;
    s.runs = runs.size();
    s.mean_fitness.resize(len);
    s.ci68_half_width.resize(len);
    s.mean_cum_evals.resize(len);
    const double k = static_cast<double>(runs.size());
    for (std::size_t g = 0; g < len; ++g)
    {
        double sum = 0.0, evals = 0.0;
        for (const auto &r : runs)
        {
            sum += r[g].mean_fitness;
            evals += static_cast<double>(r[g].cum_evals);
        }
        const double mean = sum / k;
        double ss = 0.0;
        for (const auto &r : runs)
            ss += (r[g].mean_fitness - mean) * (r[g].mean_fitness - mean);
        s.mean_fitness[g] = mean;
        s.ci68_half_width[g] = std::sqrt(ss / (k - 1.0)) / std::sqrt(k);
        s.mean_cum_evals[g] = evals / k;
    }
    for (const auto &r : runs)
        for (const auto &rec : r)
            s.reuse.add(rec);
    return s;
}

inline constexpr std::string_view csv_header =
    "generation,cum_evals,mean_fitness,max_fitness,min_fitness,reused_total,reused_im,reused_eim,fresh";

inline std::string records_to_csv(const std::vector<GenerationRecord> &records)
{
    std::string out(csv_header);
    out += '\n';
    for (const auto &r : records)
        out += fmt::format("{},{},{},{},{},{},{},{},{}\n", r.generation, r.cum_evals, r.mean_fitness, r.max_fitness,
                           r.min_fitness, r.reused_total, r.reused_im, r.reused_eim, r.fresh);
    return out;
}

inline std::vector<GenerationRecord> records_from_csv(std::string_view text)
{
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || detail::trim(line) != csv_header)
        throw std::runtime_error("records_from_csv: missing or unexpected header");
    std::vector<GenerationRecord> out;
    int line_no = 1;
    while (std::getline(in, line))
    {
        ++line_no;
        if (detail::trim(line).empty())
            continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            cells.push_back(detail::trim(cell));
        if (cells.size() != 9)
            throw std::runtime_error(fmt::format("records_from_csv: line {} has {} columns", line_no, cells.size()));
        try
        {
            GenerationRecord r;
            r.generation = detail::parse_number<std::size_t>("generation", cells[0]);
            r.cum_evals = detail::parse_number<std::size_t>("cum_evals", cells[1]);
            r.mean_fitness = detail::parse_number<double>("mean_fitness", cells[2]);
            r.max_fitness = detail::parse_number<double>("max_fitness", cells[3]);
            r.min_fitness = detail::parse_number<double>("min_fitness", cells[4]);
            r.reused_total = detail::parse_number<std::size_t>("reused_total", cells[5]);
            r.reused_im = detail::parse_number<std::size_t>("reused_im", cells[6]);
            r.reused_eim = detail::parse_number<std::size_t>("reused_eim", cells[7]);
            r.fresh = detail::parse_number<std::size_t>("fresh", cells[8]);
            out.push_back(r);
        }
        catch (const ConfigError &e)
        {
            throw std::runtime_error(fmt::format("records_from_csv: line {}: {}", line_no, e.what()));
        }
    }
    return out;
}

struct ReuseRow
{
    std::string label;
    ReuseStats stats;
};

inline constexpr std::string_view reuse_table_header = "run,total_reuse_pct,from_im_pct,from_eim_pct";

/// Table-1 style reuse table: total reuse as a share of all samples, and the
/// IM / EIM shares of that reuse.
inline std::string reuse_table_csv(const std::vector<ReuseRow> &rows)
{
    std::string out(reuse_table_header);
    out += '\n';
    for (const auto &r : rows)
        out += fmt::format("{},{:.1f},{:.1f},{:.1f}\n", r.label, r.stats.total_pct(), r.stats.im_share_pct(),
                           r.stats.eim_share_pct());
    return out;
}

/// First index whose value is >= threshold, if any.
inline std::optional<std::size_t> first_reaching(const std::vector<GenerationRecord> &records, double threshold)
{
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].mean_fitness >= threshold)
            return i;
    return std::nullopt;
}

} // namespace imix
