#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace sota {

// Sampled travel times below this are clamped up to keep realized times
// positive and trajectory returns finite.
constexpr double kTimeFloor = 1e-3;

struct EdgeDef {
    int id = 0;
    int tail = 0;
    int head = 0;
};

// Directed graph with jointly Gaussian edge travel times. Immutable once
// finalized; sampling is pure in (network, seed).
struct StochasticNetwork {
    int num_nodes = 0;
    std::vector<EdgeDef> edges;
    std::vector<double> mu;          // per-edge mean travel time
    Eigen::MatrixXd sigma;           // L x L covariance
    std::vector<uint8_t> deterministic_mask;  // sigma[e][e] == 0

    // derived, built by finalize()
    std::vector<std::vector<int>> out_edges;  // per node, ascending edge id
    Eigen::MatrixXd sample_factor;            // F with F F^T = clip(sigma)

    int num_edges() const { return int(edges.size()); }

    // checks edge/node ids, symmetry (1e-9), nonnegative diagonal, minimum
    // eigenvalue >= -1e-8 and mask consistency; throws ValidationError
    void validate() const;
    // validate + build adjacency and the PSD sampling factor
    void finalize();
};

struct RealizedNetwork {
    const StochasticNetwork* net = nullptr;
    std::vector<double> times;
    uint64_t seed = 0;
};

struct CorrelationDraw {
    Eigen::MatrixXd raw_correlation;  // off-diagonal in (-1, 1), unit diagonal
    Eigen::MatrixXd covariance;       // repaired, diag == prescribed variances
};

// The five-node two-route benchmark: A-B then B-C-E or B-D-E. First three
// edges are correlated Gaussians, the last two are deterministic.
StochasticNetwork build_synthetic();

// Sioux Falls topology (24 nodes, 76 directed links) with the standard
// free-flow times as means. Exact per-link second moments of the published
// benchmark are not public, so variances use a seeded coefficient of
// variation in [0.2, 0.5] and correlations come from generate_covariance;
// results on this instance are property-level, not value-exact.
StochasticNetwork build_sfn(uint64_t seed);

StochasticNetwork load_network(const std::string& path);
void save_network(const StochasticNetwork& net, const std::string& path);
nlohmann::json network_to_json(const StochasticNetwork& net);
StochasticNetwork network_from_json(const nlohmann::json& j);

// Pairwise correlations ~ U(-1,1), combined with the prescribed variances
// and repaired to PSD. Zero-variance entries get zero rows/columns.
CorrelationDraw generate_covariance(const std::vector<double>& variances, uint64_t seed);

// Eigenvalue clipping with diagonal restoration, single pass. Result can
// carry numerical negatives down to -1e-8.
Eigen::MatrixXd nearest_psd(const Eigen::MatrixXd& sym);

// Joint draw from N(mu, sigma) through the precomputed factor, clamped at
// kTimeFloor. Deterministic edges receive exactly mu.
RealizedNetwork sample_realization(const StochasticNetwork& net, uint64_t seed);

struct LetResult {
    std::vector<int> path_nodes;  // origin..destination; empty when origin == destination
    std::vector<int> path_edges;
    double t_let = 0.0;
};

// Shortest path on mean travel times. Ties resolve to the lexicographically
// smallest node-id sequence. Throws if destination is unreachable.
LetResult let_path(const StochasticNetwork& net, int origin, int destination);

}  // namespace sota
