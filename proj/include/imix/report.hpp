#pragma once

#include "experiment.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

namespace imix
{
class IoError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

inline std::string seed_csv_name(std::uint64_t seed) { return fmt::format("seed_{}.csv", seed); }

/// Seed number encoded in a `seed_<n>.csv` file name.
inline std::optional<std::uint64_t> parse_seed_csv_name(const std::string &name)
{
    static const std::regex pattern(R"(seed_(\d+)\.csv)");
    std::smatch m;
    if (!std::regex_match(name, m, pattern))
        return std::nullopt;
    return std::stoull(m[1].str());
}

struct SeedFile
{
    std::uint64_t seed = 0;
    std::filesystem::path path;
};

/// `seed_<n>.csv` files directly inside `dir`, ordered by seed.
inline std::vector<SeedFile> find_seed_csvs(const std::filesystem::path &dir)
{
    std::vector<SeedFile> out;
    std::error_code ec;
    for (const auto &entry : std::filesystem::directory_iterator(dir, ec))
        if (entry.is_regular_file())
            if (const auto seed = parse_seed_csv_name(entry.path().filename().string()))
                out.push_back({*seed, entry.path()});
    if (ec)
        throw IoError(fmt::format("cannot list '{}': {}", dir.string(), ec.message()));
    std::sort(out.begin(), out.end(), [](const SeedFile &a, const SeedFile &b) { return a.seed < b.seed; });
    return out;
}

inline std::string read_file(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(fmt::format("cannot read '{}'", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file(const std::filesystem::path &path, std::string_view content)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError(fmt::format("cannot write '{}'", path.string()));
    out << content;
    if (!out.flush())
        throw IoError(fmt::format("write to '{}' failed", path.string()));
}

inline std::vector<std::vector<GenerationRecord>> load_runs(const std::vector<SeedFile> &files)
{
    std::vector<std::vector<GenerationRecord>> runs;
    for (const auto &f : files)
        runs.push_back(records_from_csv(read_file(f.path)));
    return runs;
}

inline ReuseStats reuse_of(const std::vector<std::vector<GenerationRecord>> &runs)
{
    ReuseStats s;
    for (const auto &r : runs)
        for (const auto &rec : r)
            s.add(rec);
    return s;
}

/// JSON form of a summary. A single run has no spread, so its CI is null.
inline nlohmann::json summary_json(const std::vector<std::vector<GenerationRecord>> &runs,
                                   const std::vector<std::uint64_t> &seeds, const ExperimentConfig &config)
{
    require(!runs.empty(), "summary_json: no runs");
    nlohmann::json j;
    j["env"] = std::string(to_string(config.env));
    j["algorithm"] = std::string(to_string(config.algorithm));
    j["mixing"] = std::string(to_string(config.mixing));
    j["archive_k"] = config.archive_capacity();
    j["population"] = config.population;
    j["generations"] = config.generation_budget();
    j["seeds"] = seeds;
    j["runs"] = runs.size();

    ReuseStats reuse;
    if (runs.size() >= 2)
    {
        const RunSummary s = aggregate(runs);
        j["mean_fitness"] = s.mean_fitness;
        j["ci68_half_width"] = s.ci68_half_width;
        j["mean_cum_evals"] = s.mean_cum_evals;
        reuse = s.reuse;
    }
    else
    {
        std::vector<double> mean, evals;
        for (const auto &r : runs.front())
        {
            mean.push_back(r.mean_fitness);
            evals.push_back(static_cast<double>(r.cum_evals));
        }
        j["mean_fitness"] = mean;
        j["ci68_half_width"] = nullptr;
        j["mean_cum_evals"] = evals;
        reuse = reuse_of(runs);
    }
    j["reuse"] = {{"samples", reuse.samples},
                  {"reused", reuse.reused},
                  {"reused_im", reuse.reused_im},
                  {"reused_eim", reuse.reused_eim},
                  {"total_pct", reuse.total_pct()},
                  {"from_im_pct", reuse.im_share_pct()},
                  {"from_eim_pct", reuse.eim_share_pct()}};
    std::size_t evals = 0;
    for (const auto &r : runs)
        if (!r.empty())
            evals += r.back().cum_evals;
    j["total_evals"] = evals;
    return j;
}

/// Reuse rows for `dir`: one row for the directory itself if it holds seed
/// CSVs, otherwise one row per immediate subdirectory that does.
inline std::vector<ReuseRow> collect_reuse_rows(const std::filesystem::path &dir)
{
    std::vector<ReuseRow> rows;
    if (const auto files = find_seed_csvs(dir); !files.empty())
    {
        auto name = std::filesystem::absolute(dir).lexically_normal();
        if (!name.has_filename())
            name = name.parent_path();
        rows.push_back({name.filename().string(), reuse_of(load_runs(files))});
        return rows;
    }
    std::vector<std::filesystem::path> subdirs;
    std::error_code ec;
    for (const auto &entry : std::filesystem::directory_iterator(dir, ec))
        if (entry.is_directory())
            subdirs.push_back(entry.path());
    if (ec)
        throw IoError(fmt::format("cannot list '{}': {}", dir.string(), ec.message()));
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto &sub : subdirs)
        if (const auto files = find_seed_csvs(sub); !files.empty())
            rows.push_back({sub.filename().string(), reuse_of(load_runs(files))});
    return rows;
}

} // namespace imix
