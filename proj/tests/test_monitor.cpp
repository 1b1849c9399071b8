#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include <excusum/critical_values.hpp>
#include <excusum/monitor.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace excusum;
using excusum::testing::batch_statistics;
using excusum::testing::gaussian_matrix;

namespace {

struct Scenario {
    Dataset historical;
    Eigen::VectorXd stream_y;
    Eigen::MatrixXd stream_x;
};

Scenario make_scenario(Index m, Index n_stream, Index p, std::uint64_t seed, double shift = 0.0) {
    Engine rng(seed);
    Eigen::MatrixXd x = gaussian_matrix(m + n_stream, p, rng);
    x.col(0).array() += 1.0;
    Eigen::VectorXd beta = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(p), 1.0, -1.0);
    std::exponential_distribution<double> expo(1.0);
    Eigen::VectorXd y = x * beta;
    for (Index i = 0; i < m + n_stream; ++i) {
        y[i] += expo(rng) - 1.0 + (i >= m ? shift : 0.0);
    }
    return {Dataset(y.head(m), x.topRows(m)), y.tail(n_stream), x.bottomRows(n_stream)};
}

}  // namespace

TEST_SUITE("normalization") {
    TEST_CASE("values") {
        CHECK(z_norm(100, 100, 0.0) == doctest::Approx(20.0).epsilon(1e-15));
        CHECK(z_norm(100, 100, 0.45) == doctest::Approx(20.0 * std::pow(0.5, 0.45)).epsilon(1e-14));
        CHECK(z_norm(100, 100, 0.45) == doctest::Approx(14.641).epsilon(1e-4));
        CHECK_THROWS_AS((void)z_norm(100, 0, 0.0), Error);
        CHECK_THROWS_AS((void)z_norm(0, 1, 0.0), Error);
        CHECK_THROWS_AS((void)z_norm(10, 1, 0.5), Error);
    }

    TEST_CASE("strictly increasing in k") {
        Engine rng(5);
        std::uniform_int_distribution<Index> mm(1, 5000);
        std::uniform_int_distribution<Index> kk(1, 10000);
        std::uniform_real_distribution<double> gg(0.0, 0.4999);
        for (int trial = 0; trial < 1000; ++trial) {
            const Index m = mm(rng);
            const Index k = kk(rng);
            const double g = gg(rng);
            CHECK(z_norm(m, k + 1, g) > z_norm(m, k, g));
            CHECK(z_norm(m, k, g) > 0.0);
        }
    }

    TEST_CASE("boundary length") {
        CHECK(boundary_length(OpenEnd{}) == 1.0);
        CHECK(boundary_length(ClosedEnd{1.0, 100}) == 0.5);
        CHECK(boundary_length(ClosedEnd{3.0, 300}) == 0.75);
    }

    TEST_CASE("statistic kind names round-trip") {
        for (const auto kind : {StatisticKind::Plain, StatisticKind::Adaptive, StatisticKind::Modified,
                                StatisticKind::OracleSet}) {
            CHECK(parse_statistic_kind(to_string(kind)) == kind);
        }
        CHECK_THROWS_AS((void)parse_statistic_kind("cusum"), Error);
    }
}

TEST_SUITE("whitening") {
    TEST_CASE("identity design with unit score variance") {
        // Rows e_1, e_2 repeated, scaled so Omega = I; residuals give var_g = 1 at tau = 0.5.
        const Index m = 400;
        Eigen::MatrixXd x = Eigen::MatrixXd::Zero(m, 2);
        Eigen::VectorXd r(m);
        for (Index i = 0; i < m; ++i) {
            x(i, i % 2) = std::sqrt(2.0);
            r[i] = (i / 2) % 2 == 0 ? 1.0 : -1.0;
        }
        const double scale = std::sqrt(static_cast<double>(m - 1) / static_cast<double>(m));
        r *= scale;
        const WhiteningFactor f = build_whitening(Dataset(r, x), r, ExpectileIndex(0.5), {0, 1});
        CHECK(f.var_g == doctest::Approx(1.0).epsilon(1e-14));
        CHECK((f.gram - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-14);
        CHECK((f.inv_sqrt - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    }

    TEST_CASE("scalar case") {
        // X_i = 2, var_g = 4: residuals +-2 with divisor m - 1 adjusted.
        const Index m = 100;
        Eigen::VectorXd r(m);
        for (Index i = 0; i < m; ++i) {
            r[i] = i % 2 == 0 ? 2.0 : -2.0;
        }
        r *= std::sqrt(static_cast<double>(m - 1) / static_cast<double>(m));
        const Dataset hist(r, Eigen::MatrixXd::Constant(m, 1, 2.0));
        const WhiteningFactor f = build_whitening(hist, r, ExpectileIndex(0.5), {0});
        CHECK(f.var_g == doctest::Approx(4.0).epsilon(1e-14));
        CHECK(f.gram(0, 0) == doctest::Approx(4.0).epsilon(1e-15));
        CHECK(f.inv_sqrt(0, 0) == doctest::Approx(0.25).epsilon(1e-14));
    }

    TEST_CASE("reconstruction of a random factor") {
        const Scenario s = make_scenario(300, 1, 5, 3);
        const ExpectileFit fit = fit_expectile(s.historical, ExpectileIndex(0.7));
        const WhiteningFactor f = build_whitening(s.historical, fit.residuals, fit.tau, {0, 1, 2, 3, 4});
        const Eigen::MatrixXd j = f.var_g * f.gram;
        CHECK((f.inv_sqrt * j * f.inv_sqrt - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-8);
        CHECK((f.inv_sqrt - f.inv_sqrt.transpose()).cwiseAbs().maxCoeff() == 0.0);
    }

    TEST_CASE("degenerate inputs") {
        const Index m = 50;
        const Dataset hist(Eigen::VectorXd::Zero(m), Eigen::MatrixXd::Ones(m, 2));
        Eigen::VectorXd r = Eigen::VectorXd::LinSpaced(m, -1.0, 1.0);
        try {
            (void)build_whitening(hist, r, ExpectileIndex(0.5), {0, 1});
            FAIL("expected SingularInformation");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::SingularInformation);
        }
        try {
            (void)build_whitening(hist, Eigen::VectorXd::Constant(m, 0.3), ExpectileIndex(0.5), {0});
            FAIL("expected ZeroScoreVariance");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::ZeroScoreVariance);
        }
        try {
            (void)build_whitening(hist, r, ExpectileIndex(0.5), {});
            FAIL("expected EmptySelection");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::EmptySelection);
        }
    }
}

TEST_SUITE("monitor") {
    TEST_CASE("fresh state") {
        const Scenario s = make_scenario(200, 10, 4, 1);
        const ExpectileFit fit = fit_expectile(s.historical, ExpectileIndex(0.5));
        const Monitor mon = start_monitor(plain_reference(fit), s.historical, {}, 3.0);
        CHECK(mon.k() == 0);
        CHECK(mon.score_sum().cwiseAbs().maxCoeff() == 0.0);
        CHECK(mon.running());
        CHECK(mon.monitored_indices() == IndexSet{0, 1, 2, 3});
        CHECK(mon.m() == 200);
    }

    TEST_CASE("scalar accumulation") {
        // dim 1, x = 1, var_g = 1, gram = 1, tau = 0.5, residuals all 1.
        const Index m = 100;
        Eigen::VectorXd r(m);
        for (Index i = 0; i < m; ++i) {
            r[i] = i % 2 == 0 ? 1.0 : -1.0;
        }
        r *= std::sqrt(static_cast<double>(m - 1) / static_cast<double>(m));
        const Dataset hist(r, Eigen::MatrixXd::Ones(m, 1));
        MonitorReference ref{StatisticKind::Plain, Eigen::VectorXd::Zero(1), r, ExpectileIndex(0.5), {0}};
        for (const double gamma : {0.0, 0.25, 0.45}) {
            Monitor mon = start_monitor(ref, hist, {gamma, 0.05, OpenEnd{}}, 1e9);
            const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
            for (Index k = 1; k <= 50; ++k) {
                const double stat = mon.step(1.0, one);
                CHECK(stat == doctest::Approx(static_cast<double>(k) / z_norm(m, k, gamma)).epsilon(1e-13));
            }
        }
    }

    TEST_CASE("zero residual leaves the score sum unchanged") {
        const Scenario s = make_scenario(200, 5, 3, 2);
        const ExpectileFit fit = fit_expectile(s.historical, ExpectileIndex(0.3));
        Monitor mon = start_monitor(plain_reference(fit), s.historical, {}, 1e9);
        (void)mon.step(s.stream_y[0], Eigen::VectorXd(s.stream_x.row(0).transpose()));
        const Eigen::VectorXd before = mon.score_sum();
        const Eigen::VectorXd x1 = s.stream_x.row(1).transpose();
        (void)mon.step(x1.dot(fit.beta), x1);
        CHECK(mon.score_sum() == before);
    }

    TEST_CASE("streamed statistics equal batch recomputation") {
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            const Scenario s = make_scenario(200, 300, 4, seed, seed % 2 == 0 ? 0.0 : 0.5);
            const ExpectileIndex tau(0.4 + 0.02 * static_cast<double>(seed));
            const ExpectileFit pilot = fit_expectile(s.historical, tau);
            const AdaptiveLassoFit sel = fit_adaptive_lasso_expectile(
                s.historical, tau, PenaltyConfig::for_sample_size(200), pilot);
            for (const auto& ref : {plain_reference(pilot), adaptive_reference(sel),
                                    oracle_reference(sel, {0, 2})}) {
                const double gamma = 0.15 * static_cast<double>(seed % 4);
                Monitor mon = start_monitor(ref, s.historical, {gamma, 0.05, ClosedEnd{1.5, 300}}, 1e9);
                const MonitorOutcome out = run_monitor(mon, s.stream_y, s.stream_x);
                const auto batch = batch_statistics(s.historical, ref, gamma, s.stream_y, s.stream_x);
                REQUIRE(out.trajectory.size() == batch.size());
                double worst = 0.0;
                for (std::size_t k = 0; k < batch.size(); ++k) {
                    worst = std::max(worst, std::abs(out.trajectory[k] - batch[k]) / std::max(1.0, batch[k]));
                }
                CHECK(worst < 1e-12);
                CHECK(std::holds_alternative<Exhausted>(mon.status()));
                CHECK_FALSE(out.k_hat.has_value());
            }
        }
    }

    TEST_CASE("alarm consistency and stop") {
        const Scenario s = make_scenario(200, 300, 3, 4, 3.0);
        const ExpectileFit fit = fit_expectile(s.historical, ExpectileIndex(0.5));
        Monitor mon = start_monitor(plain_reference(fit), s.historical, {}, 2.0);
        const MonitorOutcome out = run_monitor(mon, s.stream_y, s.stream_x);
        REQUIRE(out.k_hat.has_value());
        const Index k_hat = *out.k_hat;
        CHECK(out.trajectory.size() == k_hat);
        CHECK(out.trajectory[k_hat - 1] > 2.0);
        for (Index j = 0; j + 1 < k_hat; ++j) {
            CHECK(out.trajectory[j] <= 2.0);
        }
        CHECK(std::get<Alarm>(mon.status()).k_hat == k_hat);
        try {
            (void)mon.step(0.0, Eigen::VectorXd(Eigen::VectorXd::Zero(3)));
            FAIL("expected StepAfterStop");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::StepAfterStop);
        }
    }

    TEST_CASE("first exceedance gives k_hat one and an empty stream gives none") {
        const Scenario s = make_scenario(100, 5, 2, 9);
        const ExpectileFit fit = fit_expectile(s.historical, ExpectileIndex(0.5));
        Monitor eager = start_monitor(plain_reference(fit), s.historical, {}, -1.0);
        CHECK(run_monitor(eager, s.stream_y, s.stream_x).k_hat == Index{1});
        Monitor idle = start_monitor(plain_reference(fit), s.historical, {}, 3.0);
        const MonitorOutcome none = run_monitor(idle, Eigen::VectorXd(0), Eigen::MatrixXd(0, 2));
        CHECK_FALSE(none.k_hat.has_value());
        CHECK(none.trajectory.empty());
        CHECK(idle.running());
    }

    TEST_CASE("input validation") {
        const Scenario s = make_scenario(100, 5, 2, 9);
        const ExpectileFit fit = fit_expectile(s.historical, ExpectileIndex(0.5));
        Monitor mon = start_monitor(plain_reference(fit), s.historical, {}, 3.0);
        const std::vector<double> wrong{1.0, 2.0, 3.0};
        try {
            (void)mon.step(1.0, wrong);
            FAIL("expected DimensionMismatch");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::DimensionMismatch);
        }
        const std::vector<double> bad{1.0, std::nan("")};
        CHECK_THROWS_AS((void)mon.step(1.0, bad), Error);
        CHECK(mon.k() == 0);
    }

    TEST_CASE("critical value estimate must match the monitored set") {
        const Scenario s = make_scenario(200, 5, 4, 6);
        const ExpectileFit fit = fit_expectile(s.historical, ExpectileIndex(0.5));
        CriticalValueEstimate est;
        est.key = {3, 0.0, 1.0, 0.05};
        est.value = 2.5;
        try {
            (void)start_monitor(plain_reference(fit), s.historical, {}, est);
            FAIL("expected DimensionMismatch");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::DimensionMismatch);
        }
        est.key.dim = 4;
        CHECK(start_monitor(plain_reference(fit), s.historical, {}, est).critical_value() == 2.5);
        est.key.L = 0.5;
        CHECK_THROWS_AS((void)start_monitor(plain_reference(fit), s.historical, {}, est), Error);
    }

    TEST_CASE("adaptive reference needs a selection") {
        const Scenario s = make_scenario(200, 5, 4, 6);
        const ExpectileIndex tau(0.5);
        const ExpectileFit pilot = fit_expectile(s.historical, tau);
        const AdaptiveLassoFit none =
            fit_adaptive_lasso_expectile(s.historical, tau, PenaltyConfig{1e8, 1.0, 1e10}, pilot);
        try {
            (void)adaptive_reference(none);
            FAIL("expected EmptySelection");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::EmptySelection);
        }
    }

    TEST_CASE("historical permutation invariance") {
        const Scenario s = make_scenario(150, 40, 3, 12);
        std::vector<Index> order(150);
        std::iota(order.begin(), order.end(), Index{0});
        Engine rng(1);
        std::shuffle(order.begin(), order.end(), rng);
        Eigen::VectorXd py(150);
        Eigen::MatrixXd px(150, 3);
        for (Index i = 0; i < 150; ++i) {
            py[i] = s.historical.y()[order[i]];
            px.row(i) = s.historical.x().row(order[i]);
        }
        const Dataset permuted(py, px);
        const ExpectileIndex tau(0.6);
        const ExpectileFit a = fit_expectile(s.historical, tau);
        const ExpectileFit b = fit_expectile(permuted, tau);
        CHECK((a.beta - b.beta).cwiseAbs().maxCoeff() < 1e-12);
        Monitor ma = start_monitor(plain_reference(a), s.historical, {}, 1e9);
        Monitor mb = start_monitor(plain_reference(b), permuted, {}, 1e9);
        CHECK((ma.whitening().inv_sqrt - mb.whitening().inv_sqrt).cwiseAbs().maxCoeff() < 1e-10);
        const auto ta = run_monitor(ma, s.stream_y, s.stream_x).trajectory;
        const auto tb = run_monitor(mb, s.stream_y, s.stream_x).trajectory;
        for (std::size_t k = 0; k < ta.size(); ++k) {
            CHECK(ta[k] == doctest::Approx(tb[k]).epsilon(1e-9));
        }
    }

    TEST_CASE("plain statistic is invariant to response scaling") {
        const Scenario s = make_scenario(200, 60, 3, 14, 0.3);
        const ExpectileIndex tau(0.35);
        const ExpectileFit a = fit_expectile(s.historical, tau);
        Monitor ma = start_monitor(plain_reference(a), s.historical, {0.15, 0.05, OpenEnd{}}, 1e9);
        const auto ta = run_monitor(ma, s.stream_y, s.stream_x).trajectory;
        for (const double c : {0.001, 7.0, 350.0}) {
            const Dataset scaled(c * s.historical.y(), s.historical.x());
            const ExpectileFit b = fit_expectile(scaled, tau);
            Monitor mb = start_monitor(plain_reference(b), scaled, {0.15, 0.05, OpenEnd{}}, 1e9);
            const auto tb = run_monitor(mb, c * s.stream_y, s.stream_x).trajectory;
            for (std::size_t k = 0; k < ta.size(); ++k) {
                CHECK(std::abs(ta[k] - tb[k]) <= 1e-8 * std::max(1.0, ta[k]));
            }
        }
    }

    TEST_CASE("sup statistic") {
        const std::vector<double> t{0.1, 0.5, 0.3};
        CHECK(sup_statistic(t) == 0.5);
        const std::vector<double> single{0.7};
        CHECK(sup_statistic(single) == 0.7);
        const std::vector<double> u{0.2, 0.9};
        std::vector<double> both = t;
        both.insert(both.end(), u.begin(), u.end());
        CHECK(sup_statistic(both) == std::max(sup_statistic(t), sup_statistic(u)));
        CHECK_THROWS_AS((void)sup_statistic(std::vector<double>{}), Error);
    }
}
