#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "sota/common.hpp"
#include "sota/network.hpp"
#include "sota/policy.hpp"
#include "sota/rng.hpp"

using namespace sota;

namespace {

PolicyConfig small_config(const StochasticNetwork& net, Variant v = Variant::full) {
    PolicyConfig c;
    c.embed_dim = 8;
    c.num_layers = 2;
    c.num_heads = 2;
    c.max_history_len = 16;
    c.variant = v;
    c.num_edges = net.num_edges();
    c.num_nodes = net.num_nodes;
    c.budget_norm = 106.0;
    return c;
}

// 4-node strongly connected loop with shortcuts, so arbitrarily long valid
// histories exist
StochasticNetwork ring_network() {
    StochasticNetwork net;
    net.num_nodes = 4;
    net.edges = {{0, 0, 1}, {1, 1, 2}, {2, 2, 3}, {3, 3, 0}, {4, 0, 2}, {5, 2, 0}};
    net.mu = {1.0, 2.0, 1.5, 1.0, 3.0, 2.5};
    net.sigma = Eigen::MatrixXd::Zero(6, 6);
    for (int i = 0; i < 6; ++i) net.sigma(i, i) = 0.2 + 0.1 * i;
    net.finalize();
    return net;
}

TrajectoryState walk_state(const StochasticNetwork& net, const std::vector<int>& edges,
                           int origin, int destination, double budget, RngStream& rng) {
    TrajectoryState s = TrajectoryState::initial(origin, destination, budget);
    for (int eid : edges) s.advance(net.edges[eid], rng.uniform(0.5, 3.0));
    return s;
}

}  // namespace

TEST_CASE("config validation") {
    StochasticNetwork net = build_synthetic();
    PolicyConfig c = small_config(net);
    c.num_heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = small_config(net);
    c.max_history_len = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    CHECK_THROWS_AS(variant_from_name("bogus"), ValidationError);
}

TEST_CASE("state invariants are enforced") {
    StochasticNetwork net = build_synthetic();
    TrajectoryState s = TrajectoryState::initial(0, 4, 106.0);
    s.validate(net);
    s.advance(net.edges[0], 5.2);
    s.validate(net);
    CHECK(s.current_node == 1);
    CHECK(s.remaining_budget == doctest::Approx(100.8));

    TrajectoryState broken = s;
    broken.remaining_budget += 0.5;
    CHECK_THROWS_AS(broken.validate(net), ValidationError);

    TrajectoryState mismatched = s;
    mismatched.current_node = 3;  // does not chain from the last edge
    CHECK_THROWS_AS(mismatched.validate(net), ValidationError);
}

TEST_CASE("action distribution masks to outgoing edges") {
    StochasticNetwork net = build_synthetic();
    PolicyNetwork policy(small_config(net), 11);

    SUBCASE("forced single edge at the origin") {
        TrajectoryState s = TrajectoryState::initial(0, 4, 106.0);
        ActionDistribution d = policy.action_distribution(s, net);
        CHECK(d.probs->value[0] == doctest::Approx(1.0));
        for (int e = 1; e < 5; ++e) CHECK(d.probs->value[e] == 0.0);
    }
    SUBCASE("fork restricted to the two branch edges") {
        TrajectoryState s = TrajectoryState::initial(0, 4, 106.0);
        s.advance(net.edges[0], 5.0);
        ActionDistribution d = policy.action_distribution(s, net);
        CHECK(d.probs->value[0] == 0.0);
        CHECK(d.probs->value[3] == 0.0);
        CHECK(d.probs->value[4] == 0.0);
        CHECK(d.probs->value[1] > 0.0);
        CHECK(d.probs->value[2] > 0.0);
        CHECK(d.probs->value[1] + d.probs->value[2] == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("dead-end node rejected") {
        StochasticNetwork dead;
        dead.num_nodes = 2;
        dead.edges = {{0, 0, 1}};
        dead.mu = {1.0};
        dead.sigma = Eigen::MatrixXd::Zero(1, 1);
        dead.finalize();
        PolicyNetwork p2(small_config(dead), 3);
        TrajectoryState s = TrajectoryState::initial(1, 0, 5.0);
        CHECK_THROWS_AS(p2.action_distribution(s, dead), ValidationError);
    }
}

TEST_CASE("initialization is seed deterministic") {
    StochasticNetwork net = build_synthetic();
    PolicyNetwork a(small_config(net), 42);
    PolicyNetwork b(small_config(net), 42);
    TrajectoryState s = TrajectoryState::initial(0, 4, 106.0);
    s.advance(net.edges[0], 4.3);
    CHECK(a.action_distribution(s, net).probs->value ==
          b.action_distribution(s, net).probs->value);
    PolicyNetwork c(small_config(net), 43);
    CHECK(a.action_distribution(s, net).probs->value !=
          c.action_distribution(s, net).probs->value);
}

TEST_CASE("budget sensitivity at initialization") {
    StochasticNetwork net = build_synthetic();
    PolicyNetwork policy(small_config(net), 5);
    TrajectoryState lo = TrajectoryState::initial(0, 4, 5.0);
    TrajectoryState hi = TrajectoryState::initial(0, 4, 106.0);
    lo.advance(net.edges[0], 5.0);
    hi.advance(net.edges[0], 5.0);
    ActionDistribution dlo = policy.action_distribution(lo, net);
    ActionDistribution dhi = policy.action_distribution(hi, net);
    CHECK(dlo.probs->value[1] != dhi.probs->value[1]);
}

TEST_CASE("history length cap is enforced") {
    StochasticNetwork net = ring_network();
    PolicyConfig cfg = small_config(net);
    cfg.max_history_len = 3;
    cfg.budget_norm = 10.0;
    PolicyNetwork policy(cfg, 9);
    RngStream rng(1);
    TrajectoryState s = walk_state(net, {0, 1, 2, 3}, 0, 3, 50.0, rng);
    CHECK_THROWS_AS(policy.action_distribution(s, net), ValidationError);
}

TEST_CASE("full policy gradient matches finite differences") {
    StochasticNetwork net = ring_network();
    PolicyConfig cfg = small_config(net);
    cfg.budget_norm = 10.0;
    RngStream rng(31);
    for (int len : {0, 1, 4}) {
        PolicyNetwork policy(cfg, 100 + len);
        std::vector<int> edges;
        int node = 0;
        for (int k = 0; k < len; ++k) {
            int eid = net.out_edges[node][rng.integer(net.out_edges[node].size())];
            edges.push_back(eid);
            node = net.edges[eid].head;
        }
        TrajectoryState s = walk_state(net, edges, 0, 3, 12.0, rng);
        const int action = net.out_edges[s.current_node][0];
        auto f = [&] {
            ActionDistribution d = policy.action_distribution(s, net);
            return log_elem(gather_cols(d.probs, {action}));
        };
        CHECK(finite_difference_check(f, policy.params()) < 1e-4);
    }
}

TEST_CASE("variant forwards are valid and differentiable") {
    StochasticNetwork net = ring_network();
    RngStream rng(77);
    for (Variant v : {Variant::no_history, Variant::linear}) {
        PolicyConfig cfg = small_config(net, v);
        cfg.budget_norm = 10.0;
        PolicyNetwork policy(cfg, 55);
        TrajectoryState s = walk_state(net, {0, 1}, 0, 3, 12.0, rng);
        ActionDistribution d = policy.action_distribution(s, net);
        double sum = 0.0;
        for (int e = 0; e < net.num_edges(); ++e) {
            if (!d.feasible[e]) CHECK(d.probs->value[e] == 0.0);
            sum += d.probs->value[e];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

        const int action = net.out_edges[s.current_node][0];
        auto f = [&] {
            return log_elem(gather_cols(policy.action_distribution(s, net).probs, {action}));
        };
        CHECK(finite_difference_check(f, policy.params()) < 1e-4);
    }
}

TEST_CASE("no_history variant carries no edge vocabulary table") {
    StochasticNetwork net = build_synthetic();
    PolicyNetwork policy(small_config(net, Variant::no_history), 2);
    CHECK_FALSE(policy.params().has("embed.edge"));
    CHECK(policy.params().has("embed.bot_time"));
}

TEST_CASE("mask support over every node of both benchmark networks") {
    for (bool sfn : {false, true}) {
        StochasticNetwork net = sfn ? build_sfn(3) : build_synthetic();
        PolicyConfig cfg = small_config(net);
        cfg.budget_norm = 100.0;
        PolicyNetwork policy(cfg, 17);
        for (int node = 0; node < net.num_nodes; ++node) {
            if (net.out_edges[node].empty()) continue;
            TrajectoryState s = TrajectoryState::initial(node, net.num_nodes - 1, 100.0);
            ActionDistribution d = policy.action_distribution(s, net);
            double sum = 0.0;
            for (int e = 0; e < net.num_edges(); ++e) {
                if (!d.feasible[e]) CHECK(d.probs->value[e] == 0.0);
                sum += d.probs->value[e];
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("policy checkpoint round trip is bit exact") {
    StochasticNetwork net = build_synthetic();
    PolicyNetwork policy(small_config(net), 23);
    const std::string path = "policy_roundtrip.ckpt";
    policy.save(path, {{"note", "test"}});
    PolicyNetwork::Loaded loaded = PolicyNetwork::load(path);
    CHECK(loaded.meta.at("note") == "test");

    for (const auto& [name, e] : policy.params().entries()) {
        CHECK(loaded.policy.params().get(name)->value == e.tensor->value);
    }
    TrajectoryState s = TrajectoryState::initial(0, 4, 106.0);
    s.advance(net.edges[0], 6.1);
    CHECK(policy.action_distribution(s, net).probs->value ==
          loaded.policy.action_distribution(s, net).probs->value);
    std::remove(path.c_str());
}
