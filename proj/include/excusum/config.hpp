#pragma once

#include <excusum/critical_values.hpp>
#include <excusum/monitor.hpp>
#include <excusum/simulation.hpp>

#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace excusum {

struct ConfigEntry {
    std::string key;
    std::string value;
    Index line = 0;
};

/// Flat `key = value` text, one entry per line. '#' starts a comment, blank lines
/// are ignored, duplicate keys are rejected.
[[nodiscard]] std::vector<ConfigEntry> parse_key_values(std::istream& in);
[[nodiscard]] std::vector<ConfigEntry> read_key_values(const std::filesystem::path& path);

/// Settings shared by the fit, select, monitor and critvals subcommands.
struct RunConfig {
    std::optional<Index> m;        ///< historical rows; empty means all rows of the file
    std::optional<double> tau;     ///< empty means estimated
    double gamma = 0.0;
    double alpha = 0.05;
    ProcedureKind procedure = ProcedureKind::Open;
    std::optional<Index> T_m;      ///< required for the closed-end procedure
    StatisticKind statistic = StatisticKind::Adaptive;
    std::vector<std::string> oracle_set;  ///< feature names monitored by the oracle statistic
    double lambda_exponent = -0.4;
    double phi = 1.0;
    std::optional<double> lambda;  ///< overrides m^lambda_exponent
    CriticalValueSettings critval;
    std::optional<std::filesystem::path> critval_cache;

    [[nodiscard]] MonitorConfig monitor_config(Index m) const;
    [[nodiscard]] PenaltyConfig penalty(Index m) const;
};

/// Keys: m, tau (number or "auto"), gamma, alpha, procedure, T_m, statistic,
/// oracle_set, lambda_exponent, phi, lambda, critval_n_paths, critval_n_grid, critval_seed,
/// critval_workers, critval_cache. Unknown keys throw Parse naming the key.
void apply_run_config(RunConfig& config, const std::vector<ConfigEntry>& entries);

/// Keys: design, error, m, p, T_m, hypothesis (H0 | H1), k0, beta0, beta1, gamma,
/// alpha, procedure, statistic, replications, master_seed, workers, tau_source,
/// lambda_exponent, phi, lambda, critval_n_paths, critval_n_grid, critval_seed,
/// critval_cache, critical_value. Lists are comma separated.
[[nodiscard]] ScenarioConfig scenario_from_entries(const std::vector<ConfigEntry>& entries);

/// Number parsing shared with the command line; `what` names the offending key.
[[nodiscard]] double parse_real(std::string_view text, std::string_view what);
[[nodiscard]] Index parse_count(std::string_view text, std::string_view what);
[[nodiscard]] std::uint64_t parse_seed(std::string_view text, std::string_view what);
[[nodiscard]] std::vector<std::string> split_list(std::string_view text, char separator = ',');

}  // namespace excusum
