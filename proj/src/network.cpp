#include "sota/network.hpp"

#include <json.hpp>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <fstream>
#include <limits>
#include <queue>

#include "sota/common.hpp"
#include "sota/rng.hpp"

namespace sota {

namespace {

constexpr double kSymTol = 1e-9;
constexpr double kEigTol = -1e-8;

}  // namespace

void StochasticNetwork::validate() const {
    const int L = num_edges();
    if (num_nodes <= 0) throw ValidationError("network: no nodes");
    std::vector<uint8_t> seen(L, 0);
    for (const auto& e : edges) {
        if (e.id < 0 || e.id >= L || seen[e.id])
            throw ValidationError("network: edge ids must be dense and unique");
        seen[e.id] = 1;
        if (e.tail < 0 || e.tail >= num_nodes || e.head < 0 || e.head >= num_nodes)
            throw ValidationError("network: edge endpoint out of range");
    }
    if (int(mu.size()) != L) throw ValidationError("network: mu size mismatch");
    for (double m : mu)
        if (!(m >= kTimeFloor)) throw ValidationError("network: edge mean below time floor");
    if (sigma.rows() != L || sigma.cols() != L)
        throw ValidationError("network: sigma must be L x L");
    for (int i = 0; i < L; ++i) {
        if (sigma(i, i) < 0.0) throw ValidationError("network: negative variance");
        for (int j = i + 1; j < L; ++j)
            if (std::abs(sigma(i, j) - sigma(j, i)) > kSymTol)
                throw ValidationError("network: sigma not symmetric");
    }
    if (int(deterministic_mask.size()) != L)
        throw ValidationError("network: deterministic mask size mismatch");
    for (int i = 0; i < L; ++i)
        if (bool(deterministic_mask[i]) != (sigma(i, i) == 0.0))
            throw ValidationError("network: deterministic mask inconsistent with sigma");
    if (L > 0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
            0.5 * (sigma + sigma.transpose()), Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < kEigTol)
            throw ValidationError("network: sigma is not positive semi-definite");
    }
}

void StochasticNetwork::finalize() {
    const int L = num_edges();
    if (int(deterministic_mask.size()) != L) {
        deterministic_mask.assign(L, 0);
        for (int i = 0; i < L; ++i) deterministic_mask[i] = (sigma(i, i) == 0.0);
    }
    validate();
    std::sort(edges.begin(), edges.end(),
              [](const EdgeDef& a, const EdgeDef& b) { return a.id < b.id; });
    out_edges.assign(num_nodes, {});
    for (const auto& e : edges) out_edges[e.tail].push_back(e.id);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (sigma + sigma.transpose()));
    Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0);
    sample_factor = es.eigenvectors() * d.cwiseSqrt().asDiagonal();
}

StochasticNetwork build_synthetic() {
    StochasticNetwork net;
    net.num_nodes = 5;  // A..E = 0..4
    net.edges = {{0, 0, 1}, {1, 1, 2}, {2, 1, 3}, {3, 2, 4}, {4, 3, 4}};
    net.mu = {5.0, 100.0, 100.0, 1.0, 1.0};
    net.sigma = Eigen::MatrixXd::Zero(5, 5);
    net.sigma(0, 0) = 1.0;
    net.sigma(0, 1) = net.sigma(1, 0) = 0.5;
    net.sigma(1, 1) = 2.0;
    net.sigma(1, 2) = net.sigma(2, 1) = -1.0;
    net.sigma(2, 2) = 2.0;
    net.finalize();
    return net;
}

namespace {

// Sioux Falls arcs as (tail, head, free-flow time), nodes 1-based.
constexpr int kSfnArcs[76][3] = {
    {1, 2, 6},   {1, 3, 4},   {2, 1, 6},   {2, 6, 5},   {3, 1, 4},   {3, 4, 4},
    {3, 12, 4},  {4, 3, 4},   {4, 5, 2},   {4, 11, 6},  {5, 4, 2},   {5, 6, 4},
    {5, 9, 5},   {6, 2, 5},   {6, 5, 4},   {6, 8, 2},   {7, 8, 3},   {7, 18, 2},
    {8, 6, 2},   {8, 7, 3},   {8, 9, 10},  {8, 16, 5},  {9, 5, 5},   {9, 8, 10},
    {9, 10, 3},  {10, 9, 3},  {10, 11, 5}, {10, 15, 6}, {10, 16, 4}, {10, 17, 8},
    {11, 4, 6},  {11, 10, 5}, {11, 12, 6}, {11, 14, 4}, {12, 3, 4},  {12, 11, 6},
    {12, 13, 3}, {13, 12, 3}, {13, 24, 4}, {14, 11, 4}, {14, 15, 5}, {14, 23, 4},
    {15, 10, 6}, {15, 14, 5}, {15, 19, 3}, {15, 22, 3}, {16, 8, 5},  {16, 10, 4},
    {16, 17, 2}, {16, 18, 3}, {17, 10, 8}, {17, 16, 2}, {17, 19, 2}, {18, 7, 2},
    {18, 16, 3}, {18, 20, 4}, {19, 15, 3}, {19, 17, 2}, {19, 20, 4}, {20, 18, 4},
    {20, 19, 4}, {20, 21, 6}, {20, 22, 5}, {21, 20, 6}, {21, 22, 2}, {21, 24, 3},
    {22, 15, 3}, {22, 20, 5}, {22, 21, 2}, {22, 23, 4}, {23, 14, 4}, {23, 22, 4},
    {23, 24, 2}, {24, 13, 4}, {24, 21, 3}, {24, 23, 2}};

}  // namespace

StochasticNetwork build_sfn(uint64_t seed) {
    StochasticNetwork net;
    net.num_nodes = 24;
    net.mu.resize(76);
    net.edges.resize(76);
    for (int i = 0; i < 76; ++i) {
        net.edges[i] = {i, kSfnArcs[i][0] - 1, kSfnArcs[i][1] - 1};
        net.mu[i] = double(kSfnArcs[i][2]);
    }
    RngStream cv_rng(derive_seed(seed, 0xCF57u));
    std::vector<double> variances(76);
    for (int i = 0; i < 76; ++i) {
        const double cv = cv_rng.uniform(0.2, 0.5);
        variances[i] = (cv * net.mu[i]) * (cv * net.mu[i]);
    }
    net.sigma = generate_covariance(variances, derive_seed(seed, 0xC0BBu)).covariance;
    net.finalize();
    return net;
}

Eigen::MatrixXd nearest_psd(const Eigen::MatrixXd& sym) {
    const int n = int(sym.rows());
    if (sym.cols() != n) throw ValidationError("nearest_psd: matrix must be square");
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (std::abs(sym(i, j) - sym(j, i)) > kSymTol)
                throw ValidationError("nearest_psd: input not symmetric");
    for (int i = 0; i < n; ++i)
        if (sym(i, i) < 0.0) throw ValidationError("nearest_psd: negative diagonal");

    Eigen::MatrixXd a = 0.5 * (sym + sym.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0);
    Eigen::MatrixXd clipped =
        es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();

    // restore the prescribed diagonal; a congruence scaling keeps the matrix PSD
    Eigen::VectorXd s(n);
    for (int i = 0; i < n; ++i) {
        const double target = sym(i, i);
        const double got = clipped(i, i);
        s(i) = (target > 0.0 && got > 0.0) ? std::sqrt(target / got) : 0.0;
    }
    Eigen::MatrixXd out = s.asDiagonal() * clipped * s.asDiagonal();
    for (int i = 0; i < n; ++i) out(i, i) = sym(i, i);
    return out;
}

CorrelationDraw generate_covariance(const std::vector<double>& variances, uint64_t seed) {
    const int n = int(variances.size());
    for (double v : variances)
        if (v < 0.0) throw ValidationError("generate_covariance: negative variance");

    RngStream rng(derive_seed(seed, 0xC0FFu));
    CorrelationDraw draw;
    draw.raw_correlation = Eigen::MatrixXd::Identity(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double c = rng.uniform(-1.0, 1.0);
            draw.raw_correlation(i, j) = c;
            draw.raw_correlation(j, i) = c;
        }

    Eigen::MatrixXd cov(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            cov(i, j) = draw.raw_correlation(i, j) * std::sqrt(variances[i] * variances[j]);
    cov = nearest_psd(cov);
    for (int i = 0; i < n; ++i) {
        if (variances[i] != 0.0) continue;
        cov.row(i).setZero();
        cov.col(i).setZero();
    }
    draw.covariance = std::move(cov);
    return draw;
}

RealizedNetwork sample_realization(const StochasticNetwork& net, uint64_t seed) {
    const int L = net.num_edges();
    RngStream rng(derive_seed(seed, 0x5A3Eu));
    Eigen::VectorXd z(L);
    for (int i = 0; i < L; ++i) z(i) = rng.gaussian();

    RealizedNetwork out;
    out.net = &net;
    out.seed = seed;
    out.times.resize(L);
    Eigen::VectorXd noise = net.sample_factor * z;
    for (int i = 0; i < L; ++i) {
        if (net.deterministic_mask[i])
            out.times[i] = net.mu[i];
        else
            out.times[i] = std::max(net.mu[i] + noise(i), kTimeFloor);
    }
    return out;
}

LetResult let_path(const StochasticNetwork& net, int origin, int destination) {
    if (origin < 0 || origin >= net.num_nodes || destination < 0 ||
        destination >= net.num_nodes)
        throw ValidationError("let_path: node out of range");
    LetResult res;
    if (origin == destination) return res;

    constexpr double inf = std::numeric_limits<double>::infinity();
    // distance-to-destination via Dijkstra on the reverse graph
    std::vector<std::vector<std::pair<int, int>>> in_edges(net.num_nodes);  // head -> (tail, edge)
    for (const auto& e : net.edges) in_edges[e.head].push_back({e.tail, e.id});
    std::vector<double> dist(net.num_nodes, inf);
    dist[destination] = 0.0;
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    pq.push({0.0, destination});
    while (!pq.empty()) {
        auto [d, u] = pq.top();
        pq.pop();
        if (d > dist[u]) continue;
        for (auto [v, eid] : in_edges[u]) {
            const double nd = d + net.mu[eid];
            if (nd < dist[v]) {
                dist[v] = nd;
                pq.push({nd, v});
            }
        }
    }
    if (dist[origin] == inf) throw ValidationError("let_path: destination unreachable");

    // walk tight edges, preferring the smallest head node id; this yields the
    // lexicographically smallest node sequence among shortest paths
    res.path_nodes.push_back(origin);
    int u = origin;
    while (u != destination) {
        int best_head = -1, best_edge = -1;
        const double tol = 1e-9 * std::max(1.0, std::abs(dist[u]));
        for (int eid : net.out_edges[u]) {
            const auto& e = net.edges[eid];
            if (std::abs(net.mu[eid] + dist[e.head] - dist[u]) <= tol) {
                if (best_head < 0 || e.head < best_head) {
                    best_head = e.head;
                    best_edge = eid;
                }
            }
        }
        if (best_edge < 0) throw ValidationError("let_path: no tight edge (inconsistent weights)");
        res.path_edges.push_back(best_edge);
        res.path_nodes.push_back(best_head);
        u = best_head;
    }
    res.t_let = 0.0;
    for (int eid : res.path_edges) res.t_let += net.mu[eid];
    return res;
}

using nlohmann::json;

json network_to_json(const StochasticNetwork& net) {
    json j;
    j["nodes"] = net.num_nodes;
    j["edges"] = json::array();
    for (const auto& e : net.edges)
        j["edges"].push_back(json{{"id", e.id}, {"tail", e.tail}, {"head", e.head}});
    j["mu"] = net.mu;
    json sig = json::array();
    for (int i = 0; i < net.num_edges(); ++i) {
        json row = json::array();
        for (int k = 0; k < net.num_edges(); ++k) row.push_back(net.sigma(i, k));
        sig.push_back(row);
    }
    j["sigma"] = sig;
    return j;
}

StochasticNetwork network_from_json(const json& j) {
    StochasticNetwork net;
    try {
        net.num_nodes = j.at("nodes").get<int>();
        for (const auto& je : j.at("edges")) {
            EdgeDef e;
            e.id = je.at("id").get<int>();
            e.tail = je.at("tail").get<int>();
            e.head = je.at("head").get<int>();
            net.edges.push_back(e);
        }
        net.mu = j.at("mu").get<std::vector<double>>();
        const int L = net.num_edges();
        if (j.contains("sigma")) {
            const auto& sig = j.at("sigma");
            if (int(sig.size()) != L) throw ValidationError("network: sigma must be L x L");
            net.sigma.resize(L, L);
            for (int i = 0; i < L; ++i) {
                const auto& row = sig.at(i);
                if (int(row.size()) != L) throw ValidationError("network: sigma must be L x L");
                for (int k = 0; k < L; ++k) net.sigma(i, k) = row.at(k).get<double>();
            }
        } else if (j.contains("variances") && j.contains("correlation_seed")) {
            auto variances = j.at("variances").get<std::vector<double>>();
            if (int(variances.size()) != L)
                throw ValidationError("network: variances size mismatch");
            net.sigma = generate_covariance(variances,
                                            j.at("correlation_seed").get<uint64_t>())
                            .covariance;
        } else {
            throw ParseError("network file needs either sigma or variances+correlation_seed");
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed network file: ") + e.what());
    }
    net.finalize();
    return net;
}

void save_network(const StochasticNetwork& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open for writing: " + path);
    out << network_to_json(net).dump(1) << "\n";
}

StochasticNetwork load_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open network file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed network file: ") + e.what());
    }
    return network_from_json(j);
}

}  // namespace sota
