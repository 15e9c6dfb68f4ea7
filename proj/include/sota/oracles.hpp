#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "sota/network.hpp"

namespace sota {

// Conditional law of one jointly Gaussian coordinate given observed ones:
// Y | X = x  ~  N(intercept + slope . x, resid_var).
struct ConditionalGaussian {
    std::vector<int> observed;
    int target = 0;
    Eigen::VectorXd slope;
    double intercept = 0.0;
    double resid_var = 0.0;

    double mean_given(const Eigen::VectorXd& x) const {
        return intercept + slope.dot(x);
    }
};

ConditionalGaussian conditional(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& mu,
                                const std::vector<int>& observed, int target);

struct OracleResult {
    double value = 0.0;
    std::string method;  // quadrature | monte_carlo | exhaustive
    double error_estimate = 0.0;
};

double normal_cdf(double z);
double normal_pdf(double x, double mean, double sd);

// Optimal-policy on-time probability of the five-node benchmark: the only
// real decision sits at the fork after the first edge is observed, so the
// value is E_x[max(P_on_time_via_C(x), P_on_time_via_D(x))] with the branch
// terms read off the conditional laws. Integrated by adaptive Simpson over
// 8 standard deviations of the first edge, refined below 1e-7.
OracleResult synthetic_upper_bound(double budget);

// Inverts the (monotone) bound to a target probability by bisection.
double solve_budget_for_value(double target_value);

// Monte Carlo companion of the bound: sample the first edge, take the
// branch with the larger conditional on-time probability (or a forced
// branch: 0 = via C, 1 = via D), then sample that branch's conditional law.
OracleResult oracle_policy_rollout_value(double budget, int num_samples, uint64_t seed,
                                         int forced_branch = -1);

// Best achievable on-time probability over deterministic history-dependent
// policies with edge observations quantized into `bins` per-edge quantile
// bins, evaluated exactly on a common set of sampled scenarios. Expands the
// information-state tree (path + observed bins) and maximizes per branch;
// throws when the tree would exceed 10^6 states. Paths are capped at
// max_path_len actions (0 -> num_nodes).
OracleResult exhaustive_policy_value(const StochasticNetwork& net, int origin,
                                     int destination, double budget, int bins,
                                     int num_samples, uint64_t seed,
                                     int max_path_len = 0);

}  // namespace sota
