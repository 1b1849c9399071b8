#pragma once

#include <excusum/critical_values.hpp>
#include <excusum/expectile.hpp>
#include <excusum/monitor.hpp>
#include <excusum/random.hpp>

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace excusum {

enum class Design { D1, D2 };
enum class ErrorLaw { Gaussian, ShiftedExp };
enum class ProcedureKind { Open, Closed };
/// Where the expectile index of a replication comes from.
enum class TauSource { Errors, Residuals };

[[nodiscard]] std::string_view to_string(Design d) noexcept;
[[nodiscard]] std::string_view to_string(ErrorLaw e) noexcept;
[[nodiscard]] std::string_view to_string(ProcedureKind p) noexcept;
[[nodiscard]] std::string_view to_string(TauSource t) noexcept;
[[nodiscard]] Design parse_design(std::string_view text);
[[nodiscard]] ErrorLaw parse_error_law(std::string_view text);
[[nodiscard]] ProcedureKind parse_procedure_kind(std::string_view text);
[[nodiscard]] TauSource parse_tau_source(std::string_view text);

/// Columns 3, 5, 7, 9 (1-based) are N(2,1), N(1,1), N(-1,1) and N(1,1)^2 in both
/// designs; the others are N(0,1) for D1 and chi2(1) + j^2/m for D2.
[[nodiscard]] Eigen::MatrixXd generate_design(Design design, Index rows, Index p, Index m, Engine& rng);

/// Standard normal, or standard exponential minus 1.5.
[[nodiscard]] Eigen::VectorXd generate_errors(ErrorLaw law, Index n, Engine& rng);

struct NoChange {};
/// Coefficients switch to `beta1` after the first `k0` monitored observations.
struct Change {
    Index k0 = 100;
    Eigen::VectorXd beta1;
};
using Hypothesis = std::variant<NoChange, Change>;

/// (2, 2, 1, 0, ..., 0) truncated to p.
[[nodiscard]] Eigen::VectorXd default_beta0(Index p);
/// (-2, 2, 1, 0, ..., 0) truncated to p.
[[nodiscard]] Eigen::VectorXd default_beta1(Index p);

struct ScenarioConfig {
    Design design = Design::D1;
    ErrorLaw error = ErrorLaw::Gaussian;
    Index m = 100;
    Index p = 3;
    Index T_m = 300;
    Hypothesis hypothesis = NoChange{};
    Eigen::VectorXd beta0;  ///< empty means default_beta0(p)
    std::vector<double> gamma_list{0.0};
    double alpha = 0.05;
    std::vector<ProcedureKind> procedures{ProcedureKind::Open};
    std::vector<StatisticKind> statistics{StatisticKind::Adaptive};
    Index replications = 100;
    std::uint64_t master_seed = 1;
    unsigned workers = 1;  ///< does not affect results
    TauSource tau_source = TauSource::Errors;
    double lambda_exponent = -0.4;
    double phi = 1.0;
    std::optional<double> lambda;  ///< overrides m^lambda_exponent
    SolverOptions solver;
    CriticalValueSettings critval{20000, 2000, 0x5eed, 1};
    std::optional<std::filesystem::path> critval_cache;
    /// Replaces every simulated critical value (e.g. +inf to record full trajectories).
    std::optional<double> critical_value_override;

    void validate() const;
    [[nodiscard]] Eigen::VectorXd effective_beta0() const;
    /// Support of beta0.
    [[nodiscard]] IndexSet true_support() const;
    [[nodiscard]] PenaltyConfig penalty() const;
    [[nodiscard]] Procedure procedure(ProcedureKind kind) const;
};

struct CellKey {
    double gamma = 0.0;
    StatisticKind statistic = StatisticKind::Adaptive;
    ProcedureKind procedure = ProcedureKind::Open;
};

/// Cells in gamma-major, then statistic, then procedure order.
[[nodiscard]] std::vector<CellKey> cell_keys(const ScenarioConfig& config);

struct CellOutcome {
    std::optional<Index> k_hat;  ///< empty means no alarm
    double sup_statistic = 0.0;  ///< over the consumed stream
    Index dim = 0;
    double critical_value = 0.0;
    std::optional<ErrorCode> failure;

    [[nodiscard]] bool rejected() const noexcept { return k_hat.has_value(); }
};

struct ReplicationResult {
    Index rep = 0;
    std::uint64_t seed = 0;
    double tau = 0.5;
    std::optional<IndexSet> active_set;  ///< set when an adaptive fit was needed and succeeded
    std::vector<CellOutcome> cells;      ///< aligned with cell_keys(config)
};

/// One replication: generate, fit on the first m rows, monitor the next T_m.
/// Deterministic given (master_seed, rep). Failures are recorded per cell.
[[nodiscard]] ReplicationResult run_replication(const ScenarioConfig& config, Index rep,
                                                CriticalValueTable& table);
[[nodiscard]] ReplicationResult run_replication(const ScenarioConfig& config, Index rep);

struct StoppingSummary {
    double min = 0.0;  ///< +inf when no alarm occurred
    double median = 0.0;
    double max = 0.0;
    Index count_infinite = 0;
};

/// Summary over stopping times where no alarm counts as +inf; the median of an even
/// count averages the two middle values.
[[nodiscard]] StoppingSummary summarize_stopping(const std::vector<std::optional<Index>>& k_hats);

struct CellReport {
    CellKey key;
    Index completed = 0;
    Index failures = 0;
    double rejection_rate = 0.0;  ///< (completed - count_infinite) / completed
    StoppingSummary stopping;
    std::map<Index, Index> dimension_histogram;
};

struct ExperimentReport {
    ScenarioConfig config;
    std::vector<CellReport> cells;
    std::map<Index, Index> selection_histogram;  ///< |selected set| -> count
    Index exact_recovery = 0;
    Index selection_failures = 0;
    std::vector<ReplicationResult> replications;
    double wall_time = 0.0;
};

[[nodiscard]] ExperimentReport run_experiment(const ScenarioConfig& config);

struct SelectionStudy {
    std::map<Index, Index> histogram;
    Index replications = 0;
    Index exact_recovery = 0;
    Index failures = 0;

    [[nodiscard]] double exact_recovery_rate() const {
        return replications == 0 ? 0.0 : static_cast<double>(exact_recovery) / static_cast<double>(replications);
    }
    [[nodiscard]] Index mode() const;
};

/// Adaptive LASSO selection only (no monitoring), same data and seeds as run_experiment.
[[nodiscard]] SelectionStudy selection_study(const ScenarioConfig& config);

/// One row per cell.
void write_cells_tsv(const ExperimentReport& report, std::ostream& out);
/// One row per replication with the stopping time of every cell.
void write_replications_tsv(const ExperimentReport& report, std::ostream& out);
void write_selection_tsv(const ExperimentReport& report, std::ostream& out);
/// key=value document; the only output carrying timing.
void write_summary(const ExperimentReport& report, std::ostream& out, bool include_timing = true);

}  // namespace excusum
