#include <excusum/expectile.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace excusum {
namespace {

constexpr double RANK_TOLERANCE{1e-10};
constexpr double PILOT_ZERO_THRESHOLD{1e-10};
constexpr double TAU_FIXED_POINT_TOLERANCE{1e-4};
constexpr Index MAX_BACKTRACKS{40};
constexpr Index MAX_CD_SWEEPS{20000};

void require_finite(double x, const char* what) {
    if (!std::isfinite(x)) {
        throw Error(ErrorCode::InvalidArgument, std::string(what) + " must be finite");
    }
}

void check_identifiable(const Eigen::MatrixXd& x) {
    if (x.cols() == 0) {
        throw Error(ErrorCode::InvalidArgument, "design has no columns");
    }
    if (x.cols() > x.rows()) {
        throw Error(ErrorCode::RankDeficient, "more columns (" + std::to_string(x.cols()) +
                                                  ") than rows (" + std::to_string(x.rows()) +
                                                  ")");
    }
    const Eigen::MatrixXd gram = x.transpose() * x;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    const double largest = eig.eigenvalues().maxCoeff();
    const double smallest = eig.eigenvalues().minCoeff();
    if (!(largest > 0.0) || smallest <= RANK_TOLERANCE * largest) {
        throw Error(ErrorCode::RankDeficient, "Gram matrix is numerically singular (eigenvalue ratio " +
                                                  std::to_string(smallest / largest) + ")");
    }
}

// Loss weights |tau - 1{r<0}|, i.e. h(r)/2.
Eigen::VectorXd asymmetric_weights(const Eigen::VectorXd& residuals, ExpectileIndex tau) {
    Eigen::VectorXd w(residuals.size());
    for (Eigen::Index i = 0; i < residuals.size(); ++i) {
        w[i] = residuals[i] < 0.0 ? 1.0 - tau.value() : tau.value();
    }
    return w;
}

std::vector<bool> negative_pattern(const Eigen::VectorXd& residuals) {
    std::vector<bool> pattern(static_cast<std::size_t>(residuals.size()));
    for (Eigen::Index i = 0; i < residuals.size(); ++i) {
        pattern[static_cast<std::size_t>(i)] = residuals[i] < 0.0;
    }
    return pattern;
}

double total_loss(const Eigen::VectorXd& residuals, ExpectileIndex tau) {
    double sum = 0.0;
    for (const double r : residuals) {
        sum += expectile_loss(r, tau);
    }
    return sum;
}

double penalized_objective(const Eigen::VectorXd& residuals, const Eigen::VectorXd& beta,
                           const Eigen::VectorXd& thresholds, ExpectileIndex tau) {
    return total_loss(residuals, tau) + thresholds.dot(beta.cwiseAbs());
}

// Scale used to make the stationarity tolerance independent of the units of y and x.
double gap_scale(const Dataset& data) {
    double s = 0.0;
    for (Index i = 0; i < data.n(); ++i) {
        s += std::abs(data.y()[static_cast<Eigen::Index>(i)]) *
             data.x().row(static_cast<Eigen::Index>(i)).cwiseAbs().maxCoeff();
    }
    return std::max(1.0, s / static_cast<double>(data.n()));
}

double soft_threshold(double u, double t) {
    if (u > t) {
        return u - t;
    }
    if (u < -t) {
        return u + t;
    }
    return 0.0;
}

}  // namespace

ExpectileIndex::ExpectileIndex(double tau) : m_tau(tau) {
    if (!(tau > 0.0 && tau < 1.0)) {
        throw Error(ErrorCode::InvalidArgument,
                    "expectile index must lie in (0,1), got " + std::to_string(tau));
    }
}

double ExpectileIndex::lower() const noexcept { return std::min(m_tau, 1.0 - m_tau); }
double ExpectileIndex::upper() const noexcept { return std::max(m_tau, 1.0 - m_tau); }

double expectile_loss(double x, ExpectileIndex tau) {
    require_finite(x, "loss argument");
    return (x < 0.0 ? 1.0 - tau.value() : tau.value()) * x * x;
}

double expectile_score(double x, ExpectileIndex tau) {
    require_finite(x, "score argument");
    return 2.0 * (x < 0.0 ? 1.0 - tau.value() : tau.value()) * x;
}

double expectile_weight(double x, ExpectileIndex tau) {
    require_finite(x, "weight argument");
    return 2.0 * (x < 0.0 ? 1.0 - tau.value() : tau.value());
}

Dataset::Dataset(Eigen::VectorXd y, Eigen::MatrixXd x) : m_y(std::move(y)), m_x(std::move(x)) {
    if (m_y.size() < 1) {
        throw Error(ErrorCode::InvalidArgument, "dataset needs at least one row");
    }
    if (m_x.rows() != m_y.size()) {
        throw Error(ErrorCode::DimensionMismatch,
                    "design has " + std::to_string(m_x.rows()) + " rows but response has " +
                        std::to_string(m_y.size()));
    }
    if (!m_y.allFinite() || !m_x.allFinite()) {
        throw Error(ErrorCode::InvalidArgument, "dataset contains non-finite values");
    }
}

Dataset Dataset::rows(Index first, Index count) const {
    if (first + count > n()) {
        throw Error(ErrorCode::InvalidArgument, "row range exceeds dataset");
    }
    const auto f = static_cast<Eigen::Index>(first);
    const auto c = static_cast<Eigen::Index>(count);
    return Dataset(m_y.segment(f, c), m_x.middleRows(f, c));
}

Dataset Dataset::columns(const IndexSet& columns) const {
    Eigen::MatrixXd sub(m_x.rows(), static_cast<Eigen::Index>(columns.size()));
    for (std::size_t k = 0; k < columns.size(); ++k) {
        if (columns[k] >= p()) {
            throw Error(ErrorCode::InvalidArgument, "column index out of range");
        }
        sub.col(static_cast<Eigen::Index>(k)) = m_x.col(static_cast<Eigen::Index>(columns[k]));
    }
    return Dataset(m_y, std::move(sub));
}

PenaltyConfig PenaltyConfig::for_sample_size(Index m, double exponent, double phi) {
    PenaltyConfig config;
    config.lambda = std::pow(static_cast<double>(m), exponent);
    config.phi = phi;
    return config;
}

void PenaltyConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw Error(ErrorCode::InvalidArgument, "lambda must be finite and nonnegative");
    }
    if (!(phi > 0.0) || !std::isfinite(phi)) {
        throw Error(ErrorCode::InvalidArgument, "phi must be positive");
    }
    if (!(weight_floor_cap > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "weight cap must be positive");
    }
}

Eigen::VectorXd adaptive_weights(const Eigen::VectorXd& pilot_beta, const PenaltyConfig& penalty) {
    penalty.validate();
    Eigen::VectorXd w(pilot_beta.size());
    for (Eigen::Index j = 0; j < pilot_beta.size(); ++j) {
        const double b = std::abs(pilot_beta[j]);
        w[j] = b < PILOT_ZERO_THRESHOLD ? penalty.weight_floor_cap : std::pow(b, -penalty.phi);
    }
    return w;
}

Eigen::VectorXd score_vector(const Dataset& data, const Eigen::VectorXd& residuals,
                             ExpectileIndex tau) {
    Eigen::VectorXd g(residuals.size());
    for (Eigen::Index i = 0; i < residuals.size(); ++i) {
        g[i] = expectile_score(residuals[i], tau);
    }
    return data.x().transpose() * g;
}

ExpectileFit fit_expectile(const Dataset& data, ExpectileIndex tau, const SolverOptions& options) {
    check_identifiable(data.x());
    const Eigen::MatrixXd& x = data.x();
    const Eigen::VectorXd& y = data.y();

    ExpectileFit fit;
    fit.tau = tau;
    // Least squares start; this is already the answer at tau = 1/2.
    fit.beta = (x.transpose() * x).ldlt().solve(x.transpose() * y);
    fit.residuals = y - x * fit.beta;

    const double gap_tol = options.tol * gap_scale(data);
    const auto n = static_cast<double>(data.n());
    auto gap_of = [&](const Eigen::VectorXd& r) {
        return score_vector(data, r, tau).cwiseAbs().maxCoeff() / n;
    };

    fit.stationarity_gap = gap_of(fit.residuals);
    bool stopped = fit.stationarity_gap <= gap_tol;
    std::vector<bool> pattern = negative_pattern(fit.residuals);
    double objective = total_loss(fit.residuals, tau);

    while (!stopped && fit.iterations < options.max_iter) {
        ++fit.iterations;
        const Eigen::VectorXd w = asymmetric_weights(fit.residuals, tau);
        const Eigen::MatrixXd weighted_gram = x.transpose() * w.asDiagonal() * x;
        const Eigen::VectorXd target = weighted_gram.ldlt().solve(x.transpose() * w.asDiagonal() * y);

        // The reweighted step is a descent direction; backtrack if it overshoots.
        Eigen::VectorXd step = target - fit.beta;
        Eigen::VectorXd candidate = target;
        Eigen::VectorXd residuals = y - x * candidate;
        double candidate_objective = total_loss(residuals, tau);
        bool full_step = true;
        for (Index b = 0; b < MAX_BACKTRACKS && candidate_objective > objective; ++b) {
            full_step = false;
            step *= 0.5;
            candidate = fit.beta + step;
            residuals = y - x * candidate;
            candidate_objective = total_loss(residuals, tau);
        }
        if (candidate_objective > objective) {
            break;
        }

        const double change = (candidate - fit.beta).cwiseAbs().maxCoeff();
        fit.beta = std::move(candidate);
        fit.residuals = std::move(residuals);
        objective = candidate_objective;
        fit.stationarity_gap = gap_of(fit.residuals);

        std::vector<bool> next_pattern = negative_pattern(fit.residuals);
        const bool fixed_point = full_step && next_pattern == pattern;
        pattern = std::move(next_pattern);
        stopped = fixed_point || change < options.tol || fit.stationarity_gap <= gap_tol;
    }
    fit.converged = stopped && fit.stationarity_gap <= gap_tol;
    return fit;
}

AdaptiveLassoFit fit_adaptive_lasso_expectile(const Dataset& data, ExpectileIndex tau,
                                              const PenaltyConfig& penalty,
                                              const ExpectileFit& pilot,
                                              const SolverOptions& options) {
    penalty.validate();
    if (pilot.beta.size() != static_cast<Eigen::Index>(data.p())) {
        throw Error(ErrorCode::DimensionMismatch, "pilot fit has the wrong number of coefficients");
    }
    if (!(pilot.tau == tau)) {
        throw Error(ErrorCode::InvalidArgument, "pilot fit uses a different expectile index");
    }
    check_identifiable(data.x());

    const Eigen::MatrixXd& x = data.x();
    const Eigen::VectorXd& y = data.y();
    const auto p = x.cols();

    AdaptiveLassoFit fit;
    fit.pilot = pilot;
    fit.penalty = penalty;
    fit.adaptive_weights = adaptive_weights(pilot.beta, penalty);
    const Eigen::VectorXd thresholds =
        static_cast<double>(data.n()) * penalty.lambda * fit.adaptive_weights;

    Eigen::VectorXd beta = pilot.beta;
    Eigen::VectorXd residuals = y - x * beta;
    double objective = penalized_objective(residuals, beta, thresholds, tau);
    std::vector<bool> pattern = negative_pattern(residuals);
    const double cd_tol = std::min(options.tol, 1e-12);

    bool stopped = false;
    while (!stopped && fit.iterations < options.max_iter) {
        ++fit.iterations;
        const Eigen::VectorXd w = asymmetric_weights(residuals, tau);
        Eigen::VectorXd curvature(p);
        for (Eigen::Index j = 0; j < p; ++j) {
            curvature[j] = w.dot(x.col(j).cwiseAbs2());
        }

        // Weighted LASSO: min sum_i w_i r_i^2 + sum_j t_j |b_j| by cyclic coordinate descent.
        Eigen::VectorXd target = beta;
        Eigen::VectorXd r = residuals;
        for (Index sweep = 0; sweep < MAX_CD_SWEEPS; ++sweep) {
            double largest_move = 0.0;
            for (Eigen::Index j = 0; j < p; ++j) {
                const double old = target[j];
                const double z = x.col(j).cwiseProduct(w).dot(r) + curvature[j] * old;
                const double updated = soft_threshold(2.0 * z, thresholds[j]) / (2.0 * curvature[j]);
                if (updated != old) {
                    r -= (updated - old) * x.col(j);
                    target[j] = updated;
                    largest_move = std::max(largest_move, std::abs(updated - old) *
                                                              std::sqrt(curvature[j]));
                }
            }
            if (largest_move <= cd_tol * std::max(1.0, std::sqrt(r.cwiseAbs2().dot(w)))) {
                break;
            }
        }

        // Polish: solve the sign-constrained weighted system on the support exactly.
        IndexSet support;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (target[j] != 0.0) {
                support.push_back(static_cast<Index>(j));
            }
        }
        if (!support.empty()) {
            const auto s = static_cast<Eigen::Index>(support.size());
            Eigen::MatrixXd xs(x.rows(), s);
            Eigen::VectorXd rhs_shift(s);
            for (Eigen::Index k = 0; k < s; ++k) {
                const auto j = static_cast<Eigen::Index>(support[static_cast<std::size_t>(k)]);
                xs.col(k) = x.col(j);
                rhs_shift[k] = 0.5 * thresholds[j] * (target[j] > 0.0 ? 1.0 : -1.0);
            }
            const Eigen::VectorXd bs = (xs.transpose() * w.asDiagonal() * xs)
                                           .ldlt()
                                           .solve(xs.transpose() * w.asDiagonal() * y - rhs_shift);
            Eigen::VectorXd polished = Eigen::VectorXd::Zero(p);
            bool signs_agree = true;
            for (Eigen::Index k = 0; k < s; ++k) {
                const auto j = static_cast<Eigen::Index>(support[static_cast<std::size_t>(k)]);
                signs_agree = signs_agree && (bs[k] > 0.0) == (target[j] > 0.0) && bs[k] != 0.0;
                polished[j] = bs[k];
            }
            if (signs_agree) {
                const Eigen::VectorXd pr = y - x * polished;
                bool inactive_ok = true;
                for (Eigen::Index j = 0; j < p && inactive_ok; ++j) {
                    if (polished[j] == 0.0) {
                        inactive_ok = std::abs(2.0 * x.col(j).cwiseProduct(w).dot(pr)) <=
                                      thresholds[j] * (1.0 + 1e-12);
                    }
                }
                if (inactive_ok) {
                    target = polished;
                }
            }
        }

        Eigen::VectorXd step = target - beta;
        Eigen::VectorXd candidate = target;
        Eigen::VectorXd candidate_residuals = y - x * candidate;
        double candidate_objective = penalized_objective(candidate_residuals, candidate, thresholds, tau);
        bool full_step = true;
        for (Index b = 0; b < MAX_BACKTRACKS && candidate_objective > objective; ++b) {
            full_step = false;
            step *= 0.5;
            candidate = beta + step;
            candidate_residuals = y - x * candidate;
            candidate_objective = penalized_objective(candidate_residuals, candidate, thresholds, tau);
        }
        if (candidate_objective > objective) {
            // No descent possible along the reweighted direction: we are at the optimum
            // up to rounding.
            stopped = true;
            break;
        }
        const double change = (candidate - beta).cwiseAbs().maxCoeff();
        beta = std::move(candidate);
        residuals = std::move(candidate_residuals);
        objective = candidate_objective;

        std::vector<bool> next_pattern = negative_pattern(residuals);
        stopped = (full_step && next_pattern == pattern) || change < options.tol;
        pattern = std::move(next_pattern);
    }

    fit.converged = stopped;
    fit.beta_star = std::move(beta);
    for (Eigen::Index j = 0; j < p; ++j) {
        if (fit.beta_star[j] != 0.0) {
            fit.active_set.push_back(static_cast<Index>(j));
        }
    }
    fit.residuals_star = y - x * fit.beta_star;
    return fit;
}

ExpectileIndex estimate_tau(std::span<const double> residuals) {
    double negative = 0.0;
    double positive = 0.0;
    for (const double e : residuals) {
        require_finite(e, "residual");
        if (e < 0.0) {
            negative += e;
        } else if (e > 0.0) {
            positive += e;
        }
    }
    if (negative == 0.0 || positive == 0.0) {
        throw Error(ErrorCode::Degenerate, "residuals must contain both signs to estimate tau");
    }
    return ExpectileIndex(negative / (negative - positive));
}

EstimatedTauFit fit_with_estimated_tau(const Dataset& data, const SolverOptions& options,
                                       Index max_outer) {
    EstimatedTauFit result;
    ExpectileIndex tau(0.5);
    for (Index round = 0; round < std::max<Index>(max_outer, 1); ++round) {
        result.fit = fit_expectile(data, tau, options);
        result.tau = tau;
        result.outer_iterations = round + 1;
        const auto& r = result.fit.residuals;
        const ExpectileIndex next = estimate_tau(std::span<const double>(r.data(), static_cast<std::size_t>(r.size())));
        if (std::abs(next.value() - tau.value()) < TAU_FIXED_POINT_TOLERANCE) {
            result.converged = true;
            break;
        }
        tau = next;
    }
    return result;
}

Eigen::VectorXd scatter(const Eigen::VectorXd& sub, const IndexSet& columns, Index p) {
    Eigen::VectorXd full = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    for (std::size_t k = 0; k < columns.size(); ++k) {
        full[static_cast<Eigen::Index>(columns[k])] = sub[static_cast<Eigen::Index>(k)];
    }
    return full;
}

ExpectileFit modified_refit(const Dataset& data, ExpectileIndex tau,
                            const AdaptiveLassoFit& selection, const SolverOptions& options) {
    if (selection.active_set.empty()) {
        throw Error(ErrorCode::EmptySelection, "no covariate was selected; nothing to refit");
    }
    ExpectileFit sub = fit_expectile(data.columns(selection.active_set), tau, options);
    ExpectileFit full = sub;
    full.beta = scatter(sub.beta, selection.active_set, data.p());
    full.residuals = data.y() - data.x() * full.beta;
    return full;
}

}  // namespace excusum
