#pragma once

#include <excusum/expectile.hpp>

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

namespace excusum {

struct OpenEnd {};

/// Monitoring horizon proportional to the history: T = lim T_m / m.
struct ClosedEnd {
    double T = 1.0;
    Index T_m = 1;
};

using Procedure = std::variant<OpenEnd, ClosedEnd>;

/// Upper end of the limiting time interval: 1 for open-end, T / (1 + T) for closed-end.
[[nodiscard]] double boundary_length(const Procedure& procedure);

enum class StatisticKind {
    Plain,      ///< expectile residuals, all covariates
    Adaptive,   ///< adaptive LASSO residuals, selected covariates
    Modified,   ///< refit on the selected covariates
    OracleSet,  ///< adaptive LASSO residuals, externally supplied covariates
};

[[nodiscard]] std::string_view to_string(StatisticKind kind) noexcept;
[[nodiscard]] StatisticKind parse_statistic_kind(std::string_view text);

struct MonitorConfig {
    double gamma = 0.0;
    double alpha = 0.05;
    Procedure procedure = OpenEnd{};

    void validate() const;
};

/// z(m, k, gamma) = sqrt(m) (1 + k/m) (k / (k + m))^gamma, defined for k >= 1.
[[nodiscard]] double z_norm(Index m, Index k, double gamma);

/// Inverse square root of J = var_g * Omega restricted to the monitored covariates.
struct WhiteningFactor {
    Index dim = 0;
    Eigen::MatrixXd inv_sqrt;
    double var_g = 0.0;
    Eigen::MatrixXd gram;
};

/// Builds the whitening factor from the historical design and residuals.
/// var_g is the sample variance (divisor m - 1) of g_tau(residuals); the Gram
/// matrix is m^-1 sum x_i x_i' over `indices`.
[[nodiscard]] WhiteningFactor build_whitening(const Dataset& historical,
                                              const Eigen::VectorXd& residuals,
                                              ExpectileIndex tau, const IndexSet& indices);

/// Frozen estimator used for the monitoring residuals.
struct MonitorReference {
    StatisticKind kind = StatisticKind::Plain;
    Eigen::VectorXd beta;
    Eigen::VectorXd historical_residuals;
    ExpectileIndex tau{0.5};
    IndexSet indices;
};

[[nodiscard]] MonitorReference plain_reference(const ExpectileFit& fit);
/// Throws ErrorCode::EmptySelection when nothing was selected.
[[nodiscard]] MonitorReference adaptive_reference(const AdaptiveLassoFit& fit);
[[nodiscard]] MonitorReference modified_reference(const ExpectileFit& refit,
                                                  const AdaptiveLassoFit& selection);
[[nodiscard]] MonitorReference oracle_reference(const AdaptiveLassoFit& fit, IndexSet indices);

struct Running {};
struct Alarm {
    Index k_hat = 0;
};
struct Exhausted {};

using MonitorStatus = std::variant<Running, Alarm, Exhausted>;

struct MonitorOutcome {
    std::optional<Index> k_hat;  ///< empty means no alarm (infinite stopping time)
    std::vector<double> trajectory;
};

/// Sequential CUSUM detector. Steps must be applied in observation order.
class Monitor {
public:
    Monitor(MonitorReference reference, WhiteningFactor whitening, MonitorConfig config, Index m,
            double critical_value);

    /// Consumes one observation and returns the statistic at the new k.
    /// Throws ErrorCode::StepAfterStop once an alarm was raised or the budget is exhausted.
    double step(double y, std::span<const double> x);
    double step(double y, const Eigen::VectorXd& x) {
        return step(y, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
    }

    [[nodiscard]] Index m() const noexcept { return m_m; }
    [[nodiscard]] Index k() const noexcept { return m_k; }
    [[nodiscard]] const Eigen::VectorXd& score_sum() const noexcept { return m_score_sum; }
    [[nodiscard]] const WhiteningFactor& whitening() const noexcept { return m_whitening; }
    [[nodiscard]] const MonitorReference& reference() const noexcept { return m_reference; }
    [[nodiscard]] const IndexSet& monitored_indices() const noexcept { return m_reference.indices; }
    [[nodiscard]] const MonitorConfig& config() const noexcept { return m_config; }
    [[nodiscard]] double critical_value() const noexcept { return m_critical_value; }
    [[nodiscard]] const MonitorStatus& status() const noexcept { return m_status; }
    [[nodiscard]] bool running() const noexcept {
        return std::holds_alternative<Running>(m_status);
    }

private:
    MonitorReference m_reference;
    WhiteningFactor m_whitening;
    MonitorConfig m_config;
    Index m_m;
    Index m_k = 0;
    Eigen::VectorXd m_score_sum;
    double m_critical_value;
    MonitorStatus m_status = Running{};
};

/// Validates the reference against `historical`, builds the whitening factor and
/// returns a fresh monitor (k = 0, zero score sum).
[[nodiscard]] Monitor start_monitor(MonitorReference reference, const Dataset& historical,
                                    const MonitorConfig& config, double critical_value);

struct CriticalValueEstimate;

/// As above, additionally checking that the estimate was computed for the
/// monitored dimension and the boundary length of the configured procedure.
[[nodiscard]] Monitor start_monitor(MonitorReference reference, const Dataset& historical,
                                    const MonitorConfig& config,
                                    const CriticalValueEstimate& critical_value);

/// Feeds rows of `stream` (responses and design rows) until an alarm, the
/// closed-end budget, or the end of the stream.
MonitorOutcome run_monitor(Monitor& monitor, const Eigen::VectorXd& y, const Eigen::MatrixXd& x);

/// Largest entry of a non-empty trajectory.
[[nodiscard]] double sup_statistic(std::span<const double> trajectory);

}  // namespace excusum
