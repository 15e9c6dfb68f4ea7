#include "sota/oracles.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>

#include "sota/common.hpp"
#include "sota/rng.hpp"

namespace sota {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_pdf(double x, double mean, double sd) {
    const double u = (x - mean) / sd;
    return std::exp(-0.5 * u * u) / (sd * std::sqrt(2.0 * M_PI));
}

ConditionalGaussian conditional(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& mu,
                                const std::vector<int>& observed, int target) {
    const int n = int(sigma.rows());
    if (target < 0 || target >= n) throw ValidationError("conditional: target out of range");
    for (int idx : observed) {
        if (idx < 0 || idx >= n) throw ValidationError("conditional: observed index out of range");
        if (idx == target) throw ValidationError("conditional: target cannot be observed");
    }
    ConditionalGaussian out;
    out.observed = observed;
    out.target = target;
    const int k = int(observed.size());
    if (k == 0) {
        out.slope = Eigen::VectorXd::Zero(0);
        out.intercept = mu(target);
        out.resid_var = sigma(target, target);
        return out;
    }
    Eigen::MatrixXd s_oo(k, k);
    Eigen::VectorXd s_to(k), mu_o(k);
    for (int i = 0; i < k; ++i) {
        mu_o(i) = mu(observed[i]);
        s_to(i) = sigma(target, observed[i]);
        for (int j = 0; j < k; ++j) s_oo(i, j) = sigma(observed[i], observed[j]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(s_oo);
    if (!lu.isInvertible())
        throw ValidationError("conditional: observed covariance block is singular");
    out.slope = lu.solve(s_to);
    out.intercept = mu(target) - out.slope.dot(mu_o);
    out.resid_var = std::max(0.0, sigma(target, target) - out.slope.dot(s_to));
    return out;
}

namespace {

// synthetic-benchmark branch probabilities after observing the first edge x
struct ForkLaw {
    ConditionalGaussian via_c;  // second edge of the upper route
    ConditionalGaussian via_d;  // second edge of the lower route
    double tail_time = 1.0;     // deterministic last hop
    double x_mean = 5.0, x_sd = 1.0;

    static ForkLaw make() {
        StochasticNetwork net = build_synthetic();
        Eigen::VectorXd mu3(3);
        mu3 << net.mu[0], net.mu[1], net.mu[2];
        Eigen::MatrixXd sig3 = net.sigma.topLeftCorner(3, 3);
        ForkLaw law;
        law.via_c = conditional(sig3, mu3, {0}, 1);
        law.via_d = conditional(sig3, mu3, {0}, 2);
        law.x_mean = net.mu[0];
        law.x_sd = std::sqrt(net.sigma(0, 0));
        law.tail_time = net.mu[3];
        return law;
    }

    double branch_prob(const ConditionalGaussian& c, double x, double budget) const {
        const double slack = budget - tail_time - x;
        Eigen::VectorXd xv(1);
        xv << x;
        const double m = c.mean_given(xv);
        const double sd = std::sqrt(c.resid_var);
        return normal_cdf((slack - m) / sd);
    }

    double best_prob(double x, double budget) const {
        return std::max(branch_prob(via_c, x, budget), branch_prob(via_d, x, budget));
    }
};

double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double fa, double fm, double fb, double whole, double tol,
                        int depth, double& err_acc) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double h = b - a;
    const double left = h / 12.0 * (fa + 4.0 * flm + fm);
    const double right = h / 12.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) < 15.0 * tol) {
        err_acc += std::abs(delta) / 15.0;
        return left + right + delta / 15.0;
    }
    return adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1, err_acc) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1, err_acc);
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol,
                 double& err_out) {
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    double err_acc = 0.0;
    const double v = adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 48, err_acc);
    err_out = err_acc;
    return v;
}

}  // namespace

OracleResult synthetic_upper_bound(double budget) {
    if (!(budget > 0.0)) {
        // degenerate budget: nothing arrives in time
        return {0.0, "quadrature", 0.0};
    }
    static const ForkLaw law = ForkLaw::make();
    auto integrand = [&](double x) {
        return normal_pdf(x, law.x_mean, law.x_sd) * law.best_prob(x, budget);
    };
    OracleResult res;
    res.method = "quadrature";
    const double a = law.x_mean - 8.0 * law.x_sd;
    const double b = law.x_mean + 8.0 * law.x_sd;
    res.value = integrate(integrand, a, b, 1e-9, res.error_estimate);
    res.value = std::min(1.0, std::max(0.0, res.value));
    return res;
}

double solve_budget_for_value(double target_value) {
    if (!(target_value > 0.0 && target_value < 1.0))
        throw ValidationError("solve_budget_for_value: target must be in (0,1)");
    double lo = 1.0, hi = 1.0;
    // bracket: the bound is monotone non-decreasing in the budget
    while (synthetic_upper_bound(hi).value < target_value) {
        hi *= 2.0;
        if (hi > 1e9) throw ValidationError("solve_budget_for_value: failed to bracket");
    }
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (synthetic_upper_bound(mid).value < target_value)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-10) break;
    }
    return 0.5 * (lo + hi);
}

OracleResult oracle_policy_rollout_value(double budget, int num_samples, uint64_t seed,
                                         int forced_branch) {
    if (num_samples < 1) throw ValidationError("oracle rollout: num_samples < 1");
    static const ForkLaw law = ForkLaw::make();
    RngStream rng(derive_seed(seed, 0x0AC1u));
    int64_t on_time = 0;
    for (int i = 0; i < num_samples; ++i) {
        const double x = law.x_mean + law.x_sd * rng.gaussian();
        int branch = forced_branch;
        if (branch < 0)
            branch = law.branch_prob(law.via_c, x, budget) >=
                             law.branch_prob(law.via_d, x, budget)
                         ? 0
                         : 1;
        const ConditionalGaussian& c = branch == 0 ? law.via_c : law.via_d;
        Eigen::VectorXd xv(1);
        xv << x;
        const double second = c.mean_given(xv) + std::sqrt(c.resid_var) * rng.gaussian();
        const double total = x + second + law.tail_time;
        if (total <= budget) ++on_time;
    }
    OracleResult res;
    res.method = "monte_carlo";
    res.value = double(on_time) / double(num_samples);
    res.error_estimate = std::sqrt(std::max(res.value * (1.0 - res.value), 1e-12) /
                                   double(num_samples));
    return res;
}

namespace {

struct ScenarioSet {
    // per scenario, per edge realized time
    std::vector<std::vector<double>> times;
    // per edge, ascending bin upper bounds (quantiles over the scenario set)
    std::vector<std::vector<double>> bin_edges;

    int bin_of(int edge, double t) const {
        const auto& edges = bin_edges[edge];
        return int(std::lower_bound(edges.begin(), edges.end(), t) - edges.begin());
    }
};

struct TreeSearch {
    const StochasticNetwork& net;
    const ScenarioSet& scen;
    double budget;
    int destination;
    int max_path_len;
    int64_t states = 0;

    // scenarios: indices still consistent with the observed history;
    // elapsed: per listed scenario, exact time spent so far
    double best_on_time(int node, int depth, const std::vector<int>& scenarios,
                        const std::vector<double>& elapsed) {
        if (++states > 1000000)
            throw ValidationError("exhaustive_policy_value: policy table exceeds 10^6 states");
        if (node == destination) {
            double count = 0.0;
            for (size_t i = 0; i < scenarios.size(); ++i)
                if (elapsed[i] <= budget) count += 1.0;
            return count;
        }
        if (depth >= max_path_len || net.out_edges[node].empty()) return 0.0;
        double best = 0.0;
        for (int eid : net.out_edges[node]) {
            // partition the surviving scenarios by the observed bin of this edge
            std::map<int, std::pair<std::vector<int>, std::vector<double>>> parts;
            for (size_t i = 0; i < scenarios.size(); ++i) {
                const double t = scen.times[scenarios[i]][eid];
                auto& part = parts[scen.bin_of(eid, t)];
                part.first.push_back(scenarios[i]);
                part.second.push_back(elapsed[i] + t);
            }
            double total = 0.0;
            for (auto& [bin, part] : parts)
                total += best_on_time(net.edges[eid].head, depth + 1, part.first,
                                      part.second);
            best = std::max(best, total);
        }
        return best;
    }
};

}  // namespace

OracleResult exhaustive_policy_value(const StochasticNetwork& net, int origin,
                                     int destination, double budget, int bins,
                                     int num_samples, uint64_t seed, int max_path_len) {
    if (bins < 1) throw ValidationError("exhaustive_policy_value: bins < 1");
    if (num_samples < 1) throw ValidationError("exhaustive_policy_value: num_samples < 1");
    if (max_path_len <= 0) max_path_len = net.num_nodes;

    ScenarioSet scen;
    scen.times.resize(num_samples);
    for (int i = 0; i < num_samples; ++i)
        scen.times[i] = sample_realization(net, derive_seed(seed, 0xE5C3u, i)).times;

    // per-edge equal-mass quantile bins over the common scenario set
    scen.bin_edges.resize(net.num_edges());
    for (int e = 0; e < net.num_edges(); ++e) {
        std::vector<double> sorted(num_samples);
        for (int i = 0; i < num_samples; ++i) sorted[i] = scen.times[i][e];
        std::sort(sorted.begin(), sorted.end());
        auto& edges = scen.bin_edges[e];
        for (int b = 1; b < bins; ++b)
            edges.push_back(sorted[size_t(b) * num_samples / bins]);
        edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    }

    std::vector<int> all(num_samples);
    std::vector<double> zero(num_samples, 0.0);
    for (int i = 0; i < num_samples; ++i) all[i] = i;

    TreeSearch search{net, scen, budget, destination, max_path_len};
    OracleResult res;
    res.method = "exhaustive";
    res.value = search.best_on_time(origin, 0, all, zero) / double(num_samples);
    res.error_estimate = std::sqrt(std::max(res.value * (1.0 - res.value), 1e-12) /
                                   double(num_samples));
    return res;
}

}  // namespace sota
