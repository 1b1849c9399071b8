#pragma once

#include <excusum/expectile.hpp>
#include <excusum/monitor.hpp>
#include <excusum/random.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace excusum::testing {

inline Eigen::MatrixXd gaussian_matrix(Index rows, Index cols, Engine& rng) {
    std::normal_distribution<double> normal;
    Eigen::MatrixXd x(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            x(i, j) = normal(rng);
        }
    }
    return x;
}

/// y = x beta + skewed noise, design with a shifted column to avoid symmetry.
inline Dataset random_problem(Index n, Index p, std::uint64_t seed, double noise_sd = 1.0) {
    Engine rng(seed);
    Eigen::MatrixXd x = gaussian_matrix(n, p, rng);
    x.col(0).array() += 1.0;
    std::normal_distribution<double> normal;
    std::exponential_distribution<double> expo(1.0);
    Eigen::VectorXd beta(p);
    for (Index j = 0; j < p; ++j) {
        beta[j] = (j % 2 == 0 ? 1.0 : -0.5) * static_cast<double>(j + 1) / static_cast<double>(p);
    }
    Eigen::VectorXd y = x * beta;
    for (Index i = 0; i < n; ++i) {
        y[i] += noise_sd * (0.5 * normal(rng) + expo(rng) - 1.0);
    }
    return Dataset(std::move(y), std::move(x));
}

/// Root of a non-decreasing function on [lo, hi] by bisection.
inline double bisect(const std::function<double(double)>& f, double lo, double hi, int iters = 200) {
    for (int it = 0; it < iters; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

/// Composite Simpson rule on [a, b] with an even number of panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int panels = 20000) {
    const double h = (b - a) / panels;
    double sum = f(a) + f(b);
    for (int i = 1; i < panels; ++i) {
        sum += f(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
    }
    return sum * h / 3.0;
}

// From-scratch statistics over every prefix of the stream.
inline std::vector<double> batch_statistics(const Dataset& hist, const MonitorReference& ref, double gamma, const Eigen::VectorXd& ys, const Eigen::MatrixXd& xs) {
    const auto m = static_cast<double>(hist.n());
    Eigen::VectorXd g(hist.n());
    for (Index i = 0; i < hist.n(); ++i) {
        g[i] = expectile_score(ref.historical_residuals[i], ref.tau);
    }
    const double var_g = (g.array() - g.mean()).square().sum() / (m - 1.0);
    Eigen::MatrixXd xa(hist.n(), ref.indices.size());
    for (std::size_t c = 0; c < ref.indices.size(); ++c) {
        xa.col(c) = hist.x().col(ref.indices[c]);
    }
    const Eigen::MatrixXd j = var_g * xa.transpose() * xa / m;
    const Eigen::MatrixXd inv_sqrt = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(j).operatorInverseSqrt();

    std::vector<double> out;
    for (Eigen::Index k = 1; k <= ys.size(); ++k) {
        Eigen::VectorXd s = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ref.indices.size()));
        for (Eigen::Index i = 0; i < k; ++i) {
            const double r = ys[i] - xs.row(i).dot(ref.beta);
            for (std::size_t c = 0; c < ref.indices.size(); ++c) {
                s[c] += expectile_score(r, ref.tau) * xs(i, ref.indices[c]);
            }
        }
        const double kd = static_cast<double>(k);
        const double z = std::sqrt(m) * (1.0 + kd / m) * std::pow(kd / (kd + m), gamma);
        out.push_back((inv_sqrt * s).cwiseAbs().maxCoeff() / z);
    }
    return out;
}

}  // namespace excusum::testing
