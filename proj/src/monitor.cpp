#include <excusum/critical_values.hpp>
#include <excusum/monitor.hpp>

#include <algorithm>
#include <cmath>
#include <string>

namespace excusum {
namespace {

constexpr double EIGENVALUE_FLOOR{1e-10};
constexpr double SCORE_VARIANCE_FLOOR{1e-12};

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_indices(const IndexSet& indices, Index p) {
    if (indices.empty()) {
        throw Error(ErrorCode::EmptySelection, "monitored covariate set is empty");
    }
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= p || (k > 0 && indices[k] <= indices[k - 1])) {
            throw Error(ErrorCode::InvalidArgument,
                        "monitored indices must be strictly increasing and below p");
        }
    }
}

IndexSet all_indices(Index p) {
    IndexSet indices(p);
    for (Index j = 0; j < p; ++j) {
        indices[j] = j;
    }
    return indices;
}

}  // namespace

double boundary_length(const Procedure& procedure) {
    return std::visit(Overloaded{[](const OpenEnd&) { return 1.0; },
                                 [](const ClosedEnd& c) { return c.T / (1.0 + c.T); }},
                      procedure);
}

std::string_view to_string(StatisticKind kind) noexcept {
    switch (kind) {
    case StatisticKind::Plain:
        return "plain";
    case StatisticKind::Adaptive:
        return "adaptive";
    case StatisticKind::Modified:
        return "modified";
    case StatisticKind::OracleSet:
        return "oracle";
    }
    return "unknown";
}

StatisticKind parse_statistic_kind(std::string_view text) {
    for (const auto kind : {StatisticKind::Plain, StatisticKind::Adaptive, StatisticKind::Modified,
                            StatisticKind::OracleSet}) {
        if (text == to_string(kind)) {
            return kind;
        }
    }
    throw Error(ErrorCode::Parse, "unknown statistic '" + std::string(text) +
                                      "' (expected plain, adaptive, modified or oracle)");
}

void MonitorConfig::validate() const {
    if (!(gamma >= 0.0 && gamma < 0.5)) {
        throw Error(ErrorCode::InvalidArgument, "gamma must lie in [0, 0.5)");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
    }
    if (const auto* closed = std::get_if<ClosedEnd>(&procedure)) {
        if (closed->T_m < 1 || !(closed->T > 0.0) || !std::isfinite(closed->T)) {
            throw Error(ErrorCode::InvalidArgument, "closed-end procedure needs T > 0 and T_m >= 1");
        }
    }
}

double z_norm(Index m, Index k, double gamma) {
    if (m < 1) {
        throw Error(ErrorCode::InvalidArgument, "z_norm needs m >= 1");
    }
    if (k < 1) {
        throw Error(ErrorCode::InvalidArgument, "z_norm is undefined at k = 0");
    }
    if (!(gamma >= 0.0 && gamma < 0.5)) {
        throw Error(ErrorCode::InvalidArgument, "gamma must lie in [0, 0.5)");
    }
    const auto md = static_cast<double>(m);
    const auto kd = static_cast<double>(k);
    return std::sqrt(md) * (1.0 + kd / md) * std::pow(kd / (kd + md), gamma);
}

WhiteningFactor build_whitening(const Dataset& historical, const Eigen::VectorXd& residuals,
                                ExpectileIndex tau, const IndexSet& indices) {
    check_indices(indices, historical.p());
    const Index m = historical.n();
    if (residuals.size() != static_cast<Eigen::Index>(m)) {
        throw Error(ErrorCode::DimensionMismatch, "residual count differs from historical rows");
    }
    if (m < 2) {
        throw Error(ErrorCode::ZeroScoreVariance, "need at least two historical rows");
    }

    WhiteningFactor factor;
    factor.dim = indices.size();

    Eigen::VectorXd g(residuals.size());
    for (Eigen::Index i = 0; i < residuals.size(); ++i) {
        g[i] = expectile_score(residuals[i], tau);
    }
    const double mean = g.mean();
    factor.var_g = (g.array() - mean).square().sum() / static_cast<double>(m - 1);
    const double second_moment = g.squaredNorm() / static_cast<double>(m);
    if (!(factor.var_g > SCORE_VARIANCE_FLOOR * second_moment)) {
        throw Error(ErrorCode::ZeroScoreVariance, "score variance of the historical residuals is zero");
    }

    const Eigen::MatrixXd xs = historical.columns(indices).x();
    factor.gram = xs.transpose() * xs / static_cast<double>(m);
    const Eigen::MatrixXd information = factor.var_g * factor.gram;

    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(information);
    if (eig.info() != Eigen::Success) {
        throw Error(ErrorCode::SingularInformation, "eigendecomposition failed");
    }
    const Eigen::VectorXd& values = eig.eigenvalues();
    const double largest = values.maxCoeff();
    if (!(largest > 0.0) || values.minCoeff() <= EIGENVALUE_FLOOR * largest) {
        throw Error(ErrorCode::SingularInformation,
                    "information matrix is numerically singular on the monitored covariates");
    }
    Eigen::MatrixXd vectors = eig.eigenvectors();
    // Reproducible orientation: first nonzero component of each eigenvector positive.
    for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
        for (Eigen::Index r = 0; r < vectors.rows(); ++r) {
            if (vectors(r, c) != 0.0) {
                if (vectors(r, c) < 0.0) {
                    vectors.col(c) *= -1.0;
                }
                break;
            }
        }
    }
    factor.inv_sqrt = vectors * values.cwiseSqrt().cwiseInverse().asDiagonal() * vectors.transpose();
    factor.inv_sqrt = 0.5 * (factor.inv_sqrt + factor.inv_sqrt.transpose()).eval();
    return factor;
}

MonitorReference plain_reference(const ExpectileFit& fit) {
    return {StatisticKind::Plain, fit.beta, fit.residuals, fit.tau,
            all_indices(static_cast<Index>(fit.beta.size()))};
}

MonitorReference adaptive_reference(const AdaptiveLassoFit& fit) {
    if (fit.active_set.empty()) {
        throw Error(ErrorCode::EmptySelection,
                    "adaptive LASSO selected no covariate; the adaptive statistic is undefined");
    }
    return {StatisticKind::Adaptive, fit.beta_star, fit.residuals_star, fit.pilot.tau,
            fit.active_set};
}

MonitorReference modified_reference(const ExpectileFit& refit, const AdaptiveLassoFit& selection) {
    if (selection.active_set.empty()) {
        throw Error(ErrorCode::EmptySelection, "no covariate was selected");
    }
    return {StatisticKind::Modified, refit.beta, refit.residuals, refit.tau, selection.active_set};
}

MonitorReference oracle_reference(const AdaptiveLassoFit& fit, IndexSet indices) {
    check_indices(indices, static_cast<Index>(fit.beta_star.size()));
    return {StatisticKind::OracleSet, fit.beta_star, fit.residuals_star, fit.pilot.tau,
            std::move(indices)};
}

Monitor::Monitor(MonitorReference reference, WhiteningFactor whitening, MonitorConfig config,
                 Index m, double critical_value)
    : m_reference(std::move(reference)),
      m_whitening(std::move(whitening)),
      m_config(config),
      m_m(m),
      m_score_sum(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m_reference.indices.size()))),
      m_critical_value(critical_value) {
    m_config.validate();
    if (m_whitening.dim != m_reference.indices.size()) {
        throw Error(ErrorCode::DimensionMismatch, "whitening factor and monitored set differ in size");
    }
    if (std::isnan(critical_value)) {
        throw Error(ErrorCode::InvalidArgument, "critical value is NaN");
    }
}

double Monitor::step(double y, std::span<const double> x) {
    if (!running()) {
        throw Error(ErrorCode::StepAfterStop, "monitor already stopped at k = " + std::to_string(m_k));
    }
    if (x.size() != static_cast<std::size_t>(m_reference.beta.size())) {
        throw Error(ErrorCode::DimensionMismatch, "observation has " + std::to_string(x.size()) +
                                                      " covariates, expected " +
                                                      std::to_string(m_reference.beta.size()));
    }
    if (!std::isfinite(y) || !std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); })) {
        throw Error(ErrorCode::InvalidArgument, "non-finite observation");
    }

    double fitted = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        fitted += x[j] * m_reference.beta[static_cast<Eigen::Index>(j)];
    }
    const double g = expectile_score(y - fitted, m_reference.tau);
    for (std::size_t c = 0; c < m_reference.indices.size(); ++c) {
        m_score_sum[static_cast<Eigen::Index>(c)] += g * x[m_reference.indices[c]];
    }
    ++m_k;

    const double statistic =
        (m_whitening.inv_sqrt * m_score_sum).cwiseAbs().maxCoeff() / z_norm(m_m, m_k, m_config.gamma);
    if (statistic > m_critical_value) {
        m_status = Alarm{m_k};
    } else if (const auto* closed = std::get_if<ClosedEnd>(&m_config.procedure);
               closed != nullptr && m_k >= closed->T_m) {
        m_status = Exhausted{};
    }
    return statistic;
}

Monitor start_monitor(MonitorReference reference, const Dataset& historical,
                      const MonitorConfig& config, double critical_value) {
    config.validate();
    if (reference.beta.size() != static_cast<Eigen::Index>(historical.p())) {
        throw Error(ErrorCode::DimensionMismatch, "reference coefficients do not match the design");
    }
    if (reference.indices.empty()) {
        throw Error(ErrorCode::EmptySelection, "monitored covariate set is empty");
    }
    WhiteningFactor whitening =
        build_whitening(historical, reference.historical_residuals, reference.tau, reference.indices);
    return Monitor(std::move(reference), std::move(whitening), config, historical.n(), critical_value);
}

Monitor start_monitor(MonitorReference reference, const Dataset& historical,
                      const MonitorConfig& config, const CriticalValueEstimate& critical_value) {
    if (critical_value.key.dim != reference.indices.size()) {
        throw Error(ErrorCode::DimensionMismatch,
                    "critical value computed for dimension " + std::to_string(critical_value.key.dim) +
                        " but " + std::to_string(reference.indices.size()) + " covariates are monitored");
    }
    if (std::abs(critical_value.key.L - boundary_length(config.procedure)) > 1e-12 ||
        std::abs(critical_value.key.gamma - config.gamma) > 1e-12 ||
        std::abs(critical_value.key.alpha - config.alpha) > 1e-12) {
        throw Error(ErrorCode::DimensionMismatch,
                    "critical value key does not match the monitoring configuration");
    }
    return start_monitor(std::move(reference), historical, config, critical_value.value);
}

MonitorOutcome run_monitor(Monitor& monitor, const Eigen::VectorXd& y, const Eigen::MatrixXd& x) {
    if (x.rows() != y.size()) {
        throw Error(ErrorCode::DimensionMismatch, "stream responses and design rows differ in count");
    }
    MonitorOutcome outcome;
    for (Eigen::Index i = 0; i < y.size() && monitor.running(); ++i) {
        const Eigen::VectorXd row = x.row(i).transpose();
        outcome.trajectory.push_back(monitor.step(y[i], row));
    }
    if (const auto* alarm = std::get_if<Alarm>(&monitor.status())) {
        outcome.k_hat = alarm->k_hat;
    }
    return outcome;
}

double sup_statistic(std::span<const double> trajectory) {
    if (trajectory.empty()) {
        throw Error(ErrorCode::InvalidArgument, "empty trajectory");
    }
    return *std::max_element(trajectory.begin(), trajectory.end());
}

}  // namespace excusum
