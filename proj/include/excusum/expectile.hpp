#pragma once

#include <excusum/error.hpp>

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

namespace excusum {

using Index = std::size_t;
using IndexSet = std::vector<Index>;  ///< Sorted, 0-based column indices.

/// Expectile level tau, restricted to the open interval (0, 1).
class ExpectileIndex {
public:
    explicit ExpectileIndex(double tau);

    [[nodiscard]] double value() const noexcept { return m_tau; }
    /// min(tau, 1 - tau)
    [[nodiscard]] double lower() const noexcept;
    /// max(tau, 1 - tau)
    [[nodiscard]] double upper() const noexcept;

    friend bool operator==(const ExpectileIndex&, const ExpectileIndex&) = default;

private:
    double m_tau;
};

/// Asymmetric squared loss |tau - 1{x<0}| x^2.
[[nodiscard]] double expectile_loss(double x, ExpectileIndex tau);

/// First derivative of the loss: 2 tau x for x >= 0, 2 (1 - tau) x for x < 0.
[[nodiscard]] double expectile_score(double x, ExpectileIndex tau);

/// Second derivative of the loss: 2 tau for x >= 0, 2 (1 - tau) for x < 0.
[[nodiscard]] double expectile_weight(double x, ExpectileIndex tau);

/// Responses y (n) and design x (n x p, row i is the covariate vector of observation i).
class Dataset {
public:
    Dataset(Eigen::VectorXd y, Eigen::MatrixXd x);

    [[nodiscard]] const Eigen::VectorXd& y() const noexcept { return m_y; }
    [[nodiscard]] const Eigen::MatrixXd& x() const noexcept { return m_x; }
    [[nodiscard]] Index n() const noexcept { return static_cast<Index>(m_y.size()); }
    [[nodiscard]] Index p() const noexcept { return static_cast<Index>(m_x.cols()); }

    /// Rows [first, first + count).
    [[nodiscard]] Dataset rows(Index first, Index count) const;
    /// Columns listed in `columns`, in that order.
    [[nodiscard]] Dataset columns(const IndexSet& columns) const;

private:
    Eigen::VectorXd m_y;
    Eigen::MatrixXd m_x;
};

struct SolverOptions {
    double tol = 1e-10;
    Index max_iter = 100;
};

struct ExpectileFit {
    Eigen::VectorXd beta;
    Eigen::VectorXd residuals;
    ExpectileIndex tau{0.5};
    Index iterations = 0;
    bool converged = false;
    /// ||sum_i g(residual_i) x_i||_inf / n over the fitted columns.
    double stationarity_gap = 0.0;
};

struct PenaltyConfig {
    double lambda = 0.0;
    double phi = 1.0;
    double weight_floor_cap = 1e10;

    /// lambda = m^exponent, phi = 1; the exponent defaults to -2/5.
    [[nodiscard]] static PenaltyConfig for_sample_size(Index m, double exponent = -0.4,
                                                       double phi = 1.0);
    void validate() const;
};

struct AdaptiveLassoFit {
    Eigen::VectorXd beta_star;
    IndexSet active_set;
    Eigen::VectorXd residuals_star;
    ExpectileFit pilot;
    PenaltyConfig penalty;
    Eigen::VectorXd adaptive_weights;
    Index iterations = 0;
    bool converged = false;
};

/// Pilot-based adaptive weights |beta_j|^(-phi), capped for vanishing pilot components.
[[nodiscard]] Eigen::VectorXd adaptive_weights(const Eigen::VectorXd& pilot_beta,
                                               const PenaltyConfig& penalty);

/// sum_i g(residual_i) x_i (length p).
[[nodiscard]] Eigen::VectorXd score_vector(const Dataset& data, const Eigen::VectorXd& residuals,
                                           ExpectileIndex tau);

/// Unpenalized expectile regression by iteratively reweighted least squares.
///
/// Throws ErrorCode::RankDeficient when the Gram matrix is numerically singular
/// (minimum eigenvalue below 1e-10 times the maximum) or p > n. Non-convergence
/// is reported through `converged`, the best iterate is returned.
[[nodiscard]] ExpectileFit fit_expectile(const Dataset& data, ExpectileIndex tau,
                                         const SolverOptions& options = {});

/// Adaptive LASSO expectile regression: minimizes
///   sum_i rho_tau(y_i - x_i' b) + m lambda sum_j w_j |b_j|
/// with w_j from the pilot fit. Outer IRLS on the loss curvature, inner cyclic
/// coordinate descent with soft thresholding; excluded coefficients are exact zeros.
[[nodiscard]] AdaptiveLassoFit fit_adaptive_lasso_expectile(const Dataset& data,
                                                            ExpectileIndex tau,
                                                            const PenaltyConfig& penalty,
                                                            const ExpectileFit& pilot,
                                                            const SolverOptions& options = {});

/// tau = sum e 1{e<0} / (sum e 1{e<0} - sum e 1{e>0}).
/// Throws ErrorCode::Degenerate unless both signs occur.
[[nodiscard]] ExpectileIndex estimate_tau(std::span<const double> residuals);

struct EstimatedTauFit {
    ExpectileFit fit;
    ExpectileIndex tau{0.5};
    Index outer_iterations = 0;
    bool converged = false;
};

/// Alternates fit_expectile and estimate_tau starting from tau = 0.5 until the
/// index moves by less than 1e-4 or `max_outer` rounds have run.
[[nodiscard]] EstimatedTauFit fit_with_estimated_tau(const Dataset& data,
                                                     const SolverOptions& options = {},
                                                     Index max_outer = 50);

/// Unpenalized refit on the active set of `selection`; other coefficients are exact zeros.
/// Throws ErrorCode::EmptySelection for an empty active set.
[[nodiscard]] ExpectileFit modified_refit(const Dataset& data, ExpectileIndex tau,
                                          const AdaptiveLassoFit& selection,
                                          const SolverOptions& options = {});

/// Full p-vector with `sub` scattered into positions `columns`, zeros elsewhere.
[[nodiscard]] Eigen::VectorXd scatter(const Eigen::VectorXd& sub, const IndexSet& columns, Index p);

}  // namespace excusum
