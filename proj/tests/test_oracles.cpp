#include <doctest.h>

#include <cmath>

#include "sota/common.hpp"
#include "sota/network.hpp"
#include "sota/oracles.hpp"
#include "sota/rng.hpp"

using namespace sota;

namespace {

Eigen::MatrixXd synthetic_sigma3() {
    return build_synthetic().sigma.topLeftCorner(3, 3);
}

Eigen::VectorXd synthetic_mu3() {
    Eigen::VectorXd mu(3);
    mu << 5, 100, 100;
    return mu;
}

}  // namespace

TEST_CASE("gaussian conditioning on the synthetic law") {
    const Eigen::MatrixXd sig = synthetic_sigma3();
    const Eigen::VectorXd mu = synthetic_mu3();

    SUBCASE("second edge given the first") {
        ConditionalGaussian c = conditional(sig, mu, {0}, 1);
        CHECK(c.slope(0) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(c.intercept == doctest::Approx(97.5).epsilon(1e-12));
        CHECK(c.resid_var == doctest::Approx(1.75).epsilon(1e-12));
    }
    SUBCASE("third edge given the first: independent") {
        ConditionalGaussian c = conditional(sig, mu, {0}, 2);
        CHECK(c.slope(0) == doctest::Approx(0.0));
        CHECK(c.intercept == doctest::Approx(100.0));
        CHECK(c.resid_var == doctest::Approx(2.0));
    }
    SUBCASE("empty observation set gives the marginal") {
        ConditionalGaussian c = conditional(sig, mu, {}, 1);
        CHECK(c.intercept == doctest::Approx(100.0));
        CHECK(c.resid_var == doctest::Approx(2.0));
    }
    SUBCASE("singular observed block is rejected") {
        Eigen::MatrixXd bad = sig;
        bad(0, 0) = 0.0;
        bad(0, 1) = bad(1, 0) = 0.0;
        bad(0, 2) = bad(2, 0) = 0.0;
        CHECK_THROWS_AS(conditional(bad, mu, {0}, 1), ValidationError);
    }
    SUBCASE("conditional sampling reproduces the joint cross moment") {
        ConditionalGaussian c = conditional(sig, mu, {0}, 1);
        RngStream rng(314);
        const int n = 100000;
        double mean_x = 0.0, mean_y = 0.0;
        std::vector<double> xs(n), ys(n);
        for (int i = 0; i < n; ++i) {
            const double x = 5.0 + rng.gaussian();
            Eigen::VectorXd xv(1);
            xv << x;
            const double y = c.mean_given(xv) + std::sqrt(c.resid_var) * rng.gaussian();
            xs[i] = x;
            ys[i] = y;
            mean_x += x;
            mean_y += y;
        }
        mean_x /= n;
        mean_y /= n;
        double cov = 0.0;
        for (int i = 0; i < n; ++i) cov += (xs[i] - mean_x) * (ys[i] - mean_y);
        cov /= (n - 1);
        const double se = std::sqrt((sig(0, 0) * sig(1, 1) + 0.25) / double(n));
        CHECK(std::abs(cov - 0.5) <= 3.0 * se);
    }
}

TEST_CASE("quadrature bound endpoints and monotonicity") {
    CHECK(std::abs(synthetic_upper_bound(1e6).value - 1.0) < 1e-9);
    CHECK(synthetic_upper_bound(0.0).value < 1e-12);
    CHECK(synthetic_upper_bound(50.0).value < 1e-12);

    double prev = -1.0;
    for (int i = 0; i < 100; ++i) {
        const double budget = 95.0 + 0.2 * i;  // spans the transition region
        const double v = synthetic_upper_bound(budget).value;
        CHECK(v >= prev - 1e-12);
        prev = v;
    }
}

TEST_CASE("budget inversion hits the requested probability") {
    const double t_star = solve_budget_for_value(0.537);
    const OracleResult at = synthetic_upper_bound(t_star);
    CHECK(std::abs(at.value - 0.537) < 0.001);
    // the synthetic fork is calibrated so the bound crosses 0.537 right at
    // the mean-path travel time
    CHECK(t_star == doctest::Approx(106.0).epsilon(1e-3));
}

TEST_CASE("monte carlo cross-validates the quadrature bound") {
    const double t_star = solve_budget_for_value(0.537);
    const OracleResult quad = synthetic_upper_bound(t_star);
    const OracleResult mc = oracle_policy_rollout_value(t_star, 200000, 11);
    CHECK(std::abs(mc.value - quad.value) <= 4.0 * mc.error_estimate);

    SUBCASE("single draw is a bernoulli") {
        const OracleResult one = oracle_policy_rollout_value(t_star, 1, 5);
        CHECK((one.value == 0.0 || one.value == 1.0));
    }
    SUBCASE("forcing the first branch is strictly suboptimal") {
        const OracleResult forced = oracle_policy_rollout_value(t_star, 200000, 11, 0);
        // the forced route total is Gaussian with mean 106 and variance 4
        const double closed = normal_cdf((t_star - 106.0) / 2.0);
        CHECK(std::abs(forced.value - closed) <= 3.0 * forced.error_estimate);
        CHECK(forced.value + 4.0 * forced.error_estimate < quad.value);
    }
}

TEST_CASE("exhaustive discretized policy search") {
    SUBCASE("deterministic network collapses to the shortest-path indicator") {
        StochasticNetwork net = build_synthetic();
        net.sigma = Eigen::MatrixXd::Zero(5, 5);
        net.deterministic_mask.clear();
        net.finalize();
        CHECK(exhaustive_policy_value(net, 0, 4, 105.0, 8, 500, 1).value == 0.0);
        CHECK(exhaustive_policy_value(net, 0, 4, 107.0, 8, 500, 1).value == 1.0);
    }
    SUBCASE("single-path network matches the closed-form normal") {
        StochasticNetwork net;
        net.num_nodes = 2;
        net.edges = {{0, 0, 1}};
        net.mu = {10.0};
        net.sigma = Eigen::MatrixXd::Zero(1, 1);
        net.sigma(0, 0) = 4.0;
        net.finalize();
        const double budget = 11.0;
        OracleResult r = exhaustive_policy_value(net, 0, 1, budget, 4, 40000, 3);
        const double closed = normal_cdf((budget - 10.0) / 2.0);
        CHECK(std::abs(r.value - closed) <= 3.0 * r.error_estimate);
    }
    SUBCASE("matches the quadrature bound on the synthetic network") {
        const double t_star = solve_budget_for_value(0.537);
        StochasticNetwork net = build_synthetic();
        OracleResult r = exhaustive_policy_value(net, 0, 4, t_star, 64, 100000, 7);
        CHECK(std::abs(r.value - synthetic_upper_bound(t_star).value) < 0.01);
    }
    SUBCASE("state explosion guard") {
        RngStream rng(8);
        StochasticNetwork net;
        net.num_nodes = 8;
        int id = 0;
        for (int u = 0; u < 8; ++u)
            for (int v = 0; v < 8; ++v)
                if (u != v) net.edges.push_back({id++, u, v});
        net.mu.assign(net.edges.size(), 1.0);
        net.sigma = Eigen::MatrixXd::Zero(id, id);
        for (int e = 0; e < id; ++e) net.sigma(e, e) = 0.5;
        net.finalize();
        CHECK_THROWS_AS(exhaustive_policy_value(net, 0, 7, 5.0, 16, 4000, 1),
                        ValidationError);
    }
}
