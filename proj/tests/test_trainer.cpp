#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "sota/common.hpp"
#include "sota/eval.hpp"
#include "sota/network.hpp"
#include "sota/policy.hpp"
#include "sota/rng.hpp"
#include "sota/trainer.hpp"

using namespace sota;

namespace {

// one decision, two deterministic arms: the fast edge always arrives within
// the budget, the slow one never does
StochasticNetwork bandit_network() {
    StochasticNetwork net;
    net.num_nodes = 2;
    net.edges = {{0, 0, 1}, {1, 0, 1}};
    net.mu = {1.0, 10.0};
    net.sigma = Eigen::MatrixXd::Zero(2, 2);
    net.finalize();
    return net;
}

PolicyConfig bandit_policy_config(const StochasticNetwork& net) {
    PolicyConfig c;
    c.embed_dim = 16;
    c.num_layers = 1;
    c.num_heads = 2;
    c.max_history_len = 8;
    c.num_edges = net.num_edges();
    c.num_nodes = net.num_nodes;
    c.budget_norm = 5.0;
    return c;
}

PolicyConfig synthetic_policy_config(const StochasticNetwork& net) {
    PolicyConfig c;
    c.embed_dim = 8;
    c.num_layers = 1;
    c.num_heads = 2;
    c.max_history_len = 24;
    c.num_edges = net.num_edges();
    c.num_nodes = net.num_nodes;
    c.budget_norm = 106.0;
    return c;
}

std::vector<double> flatten_grads(ParameterStore& store) {
    std::vector<double> out;
    for (const auto& [name, e] : store.entries()) {
        e.tensor->ensure_grad();
        out.insert(out.end(), e.tensor->grad.begin(), e.tensor->grad.end());
    }
    return out;
}

std::vector<double> flatten_values(const ParameterStore& store) {
    std::vector<double> out;
    for (const auto& [name, e] : store.entries())
        out.insert(out.end(), e.tensor->value.begin(), e.tensor->value.end());
    return out;
}

}  // namespace

TEST_CASE("rollout on the synthetic network") {
    StochasticNetwork net = build_synthetic();
    PolicyNetwork policy(synthetic_policy_config(net), 7);
    RealizedNetwork realized = sample_realization(net, 99);

    SUBCASE("topology forces three steps starting with the first edge") {
        RngStream rng(1);
        Trajectory t = rollout(policy, realized, 0, 4, 106.0, 20, rng);
        REQUIRE(t.steps.size() == 3);
        CHECK(t.steps[0].action == 0);
        CHECK(t.reached);
        const double expected =
            realized.times[0] + realized.times[t.steps[1].action] + 1.0;
        CHECK(t.total_time == doctest::Approx(expected).epsilon(1e-12));
        // consecutive states chain
        for (size_t k = 1; k < t.steps.size(); ++k)
            CHECK(net.edges[t.steps[k - 1].action].head == t.steps[k].state.current_node);
    }
    SUBCASE("step cap marks the trajectory unreached with infinite time") {
        RngStream rng(2);
        Trajectory t = rollout(policy, realized, 0, 4, 106.0, 1, rng);
        CHECK_FALSE(t.reached);
        CHECK(std::isinf(t.total_time));
        CHECK(t.steps.size() == 1);
    }
    SUBCASE("origin equal to destination is a trivial trajectory") {
        RngStream rng(3);
        Trajectory t = rollout(policy, realized, 4, 4, 10.0, 5, rng);
        CHECK(t.reached);
        CHECK(t.steps.empty());
        CHECK(t.total_time == 0.0);
        CHECK_FALSE(t.log_prob);
    }
}

TEST_CASE("gpg gradient weighting") {
    StochasticNetwork net = build_synthetic();
    PolicyNetwork policy(synthetic_policy_config(net), 13);

    auto make_batch = [&](double budget, int m) {
        RolloutBatch batch;
        batch.budget = budget;
        for (int j = 0; j < m; ++j) {
            batch.networks.push_back(sample_realization(net, 500 + j));
            RngStream rng(derive_seed(4, 0xB0, j));
            batch.trajectories.push_back(
                rollout(policy, batch.networks.back(), 0, 4, budget, 20, rng));
        }
        return batch;
    };

    SUBCASE("no on-time trajectory leaves gradients exactly zero") {
        RolloutBatch batch = make_batch(1.0, 6);  // impossible budget
        gpg_gradient(batch, policy.params());
        for (double g : flatten_grads(policy.params())) CHECK(g == 0.0);

        // and the very first adam step then moves nothing
        std::vector<double> before = flatten_values(policy.params());
        policy.params().adam_step(1e-3);
        CHECK(flatten_values(policy.params()) == before);
    }

    SUBCASE("all on-time equals the unit-weight score gradient") {
        RolloutBatch batch = make_batch(1e6, 6);
        gpg_gradient(batch, policy.params());
        std::vector<double> got = flatten_grads(policy.params());
        policy.params().zero_grads();

        Tensor lp = batch.trajectories[0].log_prob;
        for (size_t j = 1; j < batch.trajectories.size(); ++j)
            lp = add(lp, batch.trajectories[j].log_prob);
        backward(scale(lp, -1.0 / double(batch.trajectories.size())));
        std::vector<double> manual = flatten_grads(policy.params());
        REQUIRE(got.size() == manual.size());
        for (size_t i = 0; i < got.size(); ++i)
            CHECK(got[i] == doctest::Approx(manual[i]).epsilon(1e-9));
        policy.params().zero_grads();
    }

    SUBCASE("batch gradient is the ordered sum of per-trajectory gradients") {
        RolloutBatch batch = make_batch(107.0, 8);
        gpg_gradient(batch, policy.params());
        std::vector<double> whole = flatten_grads(policy.params());
        policy.params().zero_grads();

        std::vector<double> acc(whole.size(), 0.0);
        for (size_t j = 0; j < batch.trajectories.size(); ++j) {
            RolloutBatch single;
            single.budget = batch.budget;
            single.trajectories.push_back(batch.trajectories[j]);
            gpg_gradient(single, policy.params());
            std::vector<double> one = flatten_grads(policy.params());
            policy.params().zero_grads();
            // single-trajectory batches divide by 1 rather than M
            for (size_t i = 0; i < acc.size(); ++i)
                acc[i] += one[i] / double(batch.trajectories.size());
        }
        for (size_t i = 0; i < whole.size(); ++i)
            CHECK(whole[i] == doctest::Approx(acc[i]).epsilon(1e-9));
    }

    SUBCASE("gradient is identical at any worker count") {
        RolloutBatch batch = make_batch(107.0, 8);
        gpg_gradient(batch, policy.params(), false, 1);
        std::vector<double> w1 = flatten_grads(policy.params());
        policy.params().zero_grads();
        gpg_gradient(batch, policy.params(), false, 4);
        std::vector<double> w4 = flatten_grads(policy.params());
        policy.params().zero_grads();
        CHECK(w1 == w4);
    }
}

TEST_CASE("vanilla policy gradient weighting") {
    StochasticNetwork net = bandit_network();
    PolicyNetwork policy(bandit_policy_config(net), 3);
    RealizedNetwork realized = sample_realization(net, 1);

    RolloutBatch batch;
    batch.budget = 5.0;
    RngStream rng(9);
    for (int j = 0; j < 4; ++j)
        batch.trajectories.push_back(rollout(policy, realized, 0, 1, 5.0, 4, rng));
    vanilla_pg_gradient(batch, policy.params());
    for (double g : flatten_grads(policy.params())) CHECK(std::isfinite(g));
    policy.params().zero_grads();

    SUBCASE("identical trajectories average to the single gradient") {
        RolloutBatch rep;
        rep.budget = 5.0;
        RngStream r2(11);
        Trajectory t = rollout(policy, realized, 0, 1, 5.0, 4, r2);
        for (int j = 0; j < 5; ++j) rep.trajectories.push_back(t);
        vanilla_pg_gradient(rep, policy.params());
        std::vector<double> averaged = flatten_grads(policy.params());
        policy.params().zero_grads();

        RolloutBatch one;
        one.budget = 5.0;
        one.trajectories.push_back(t);
        vanilla_pg_gradient(one, policy.params());
        std::vector<double> single = flatten_grads(policy.params());
        policy.params().zero_grads();
        for (size_t i = 0; i < single.size(); ++i)
            CHECK(averaged[i] == doctest::Approx(single[i]).epsilon(1e-9));
    }
}

TEST_CASE("estimator is unbiased on the two-action bandit") {
    // minimal softmax policy: two logits, actions sampled directly
    ParameterStore store;
    Tensor z = store.add("z", 1, 2, ParamKind::weight);
    z->value = {0.0, 0.0};  // p = (1/2, 1/2)

    const int n = 10000;
    RngStream rng(2718);
    RolloutBatch batch;
    batch.budget = 5.0;
    std::vector<double> comp0;
    comp0.reserve(n);
    for (int i = 0; i < n; ++i) {
        Tensor probs = masked_softmax(z, {1, 1});
        const double u = rng.uniform();
        const int a = u < probs->value[0] ? 0 : 1;
        Trajectory t;
        t.reached = true;
        t.total_time = a == 0 ? 1.0 : 10.0;
        t.log_prob = log_elem(gather_cols(probs, {a}));
        batch.trajectories.push_back(std::move(t));
        comp0.push_back(a == 0 ? 1.0 - probs->value[0] : 0.0);
    }
    gpg_gradient(batch, store);

    // estimator of dJ/dz is minus the accumulated descent gradient
    const double est0 = -z->grad[0];
    const double est1 = -z->grad[1];
    double mean = 0.0, var = 0.0;
    for (double c : comp0) mean += c;
    mean /= n;
    for (double c : comp0) var += (c - mean) * (c - mean);
    var /= double(n - 1);
    const double se = std::sqrt(var / n);
    // closed form at p = 1/2: dJ/dz0 = p(1-p) = 0.25, dJ/dz1 = -0.25
    CHECK(std::abs(est0 - 0.25) <= 3.0 * se);
    CHECK(std::abs(est1 + 0.25) <= 3.0 * se);
}

TEST_CASE("gpg training solves the bandit") {
    StochasticNetwork net = bandit_network();
    PolicyNetwork policy(bandit_policy_config(net), 101);
    TrainConfig cfg;
    cfg.iterations = 500;
    cfg.batch = 32;
    cfg.lr = 1e-2;
    cfg.seed = 5;
    cfg.max_steps = 4;
    cfg.eval_cadence = 0;
    cfg.final_eval_samples = 0;
    train(net, 0, 1, 5.0, cfg, policy);

    TrajectoryState s = TrajectoryState::initial(0, 1, 5.0);
    ActionDistribution d = policy.action_distribution(s, net);
    CHECK(d.probs->value[0] > 0.95);
}

TEST_CASE("training is deterministic and resumable") {
    namespace fs = std::filesystem;
    StochasticNetwork net = build_synthetic();
    TrainConfig cfg;
    cfg.iterations = 10;
    cfg.batch = 8;
    cfg.lr = 1e-3;
    cfg.seed = 21;
    cfg.max_steps = 12;
    cfg.eval_cadence = 5;
    cfg.eval_samples = 50;
    cfg.final_eval_samples = 100;
    cfg.train_pool = 200;

    SUBCASE("same seed, same results") {
        PolicyNetwork a(synthetic_policy_config(net), 55);
        PolicyNetwork b(synthetic_policy_config(net), 55);
        TrainResult ra = train(net, 0, 4, 106.0, cfg, a);
        TrainResult rb = train(net, 0, 4, 106.0, cfg, b);
        CHECK(flatten_values(a.params()) == flatten_values(b.params()));
        CHECK(ra.final_j == rb.final_j);
        REQUIRE(ra.curve.points.size() == rb.curve.points.size());
        for (size_t i = 0; i < ra.curve.points.size(); ++i) {
            CHECK(ra.curve.points[i].iteration == rb.curve.points[i].iteration);
            CHECK(ra.curve.points[i].j_mean == rb.curve.points[i].j_mean);
            CHECK(ra.curve.points[i].j_std == rb.curve.points[i].j_std);
        }
    }

    SUBCASE("checkpoint resume matches the uninterrupted run") {
        const std::string dir = "resume_test_dir";
        fs::create_directories(dir);

        PolicyNetwork straight(synthetic_policy_config(net), 55);
        train(net, 0, 4, 106.0, cfg, straight);

        TrainConfig half = cfg;
        half.iterations = 5;
        half.checkpoint_cadence = 5;
        PolicyNetwork part(synthetic_policy_config(net), 55);
        train(net, 0, 4, 106.0, half, part, dir);

        TrainCheckpoint ck = load_train_checkpoint(dir + "/checkpoint_5.ckpt");
        CHECK(ck.iteration == 5);
        ck.config.iterations = 10;
        ck.config.checkpoint_cadence = 0;
        train(ck.net, ck.origin, ck.destination, ck.budget, ck.config, ck.policy, "",
              ck.iteration, ck.curve);
        CHECK(flatten_values(ck.policy.params()) == flatten_values(straight.params()));
        fs::remove_all(dir);
    }

    SUBCASE("zero iterations returns the initial parameters and empty curve") {
        PolicyNetwork p(synthetic_policy_config(net), 55);
        std::vector<double> before = flatten_values(p.params());
        TrainConfig zero = cfg;
        zero.iterations = 0;
        zero.final_eval_samples = 0;
        TrainResult r = train(net, 0, 4, 106.0, zero, p);
        CHECK(r.curve.points.empty());
        CHECK(flatten_values(p.params()) == before);
    }

    SUBCASE("wrong vocabulary checkpoint is rejected") {
        const std::string dir = "vocab_test_dir";
        fs::create_directories(dir);
        TrainConfig tiny = cfg;
        tiny.iterations = 1;
        tiny.checkpoint_cadence = 1;
        PolicyNetwork p(synthetic_policy_config(net), 5);
        train(net, 0, 4, 106.0, tiny, p, dir);

        TrainCheckpoint ck = load_train_checkpoint(dir + "/checkpoint_1.ckpt");
        StochasticNetwork other = build_sfn(1);
        CHECK_THROWS_AS(
            [&] {
                // evaluating against a mismatched network must fail loudly
                sota_probability(ck.policy, other, 0, 5, 10.0, 4, 1);
            }(),
            ValidationError);
        fs::remove_all(dir);
    }
}

TEST_CASE("train rejects impossible configurations") {
    StochasticNetwork net = build_synthetic();
    PolicyNetwork policy(synthetic_policy_config(net), 1);
    TrainConfig cfg;
    cfg.iterations = 1;
    cfg.max_steps = 2;  // below the 3-hop distance
    CHECK_THROWS_AS(train(net, 0, 4, 106.0, cfg, policy), ValidationError);

    TrainConfig bad;
    bad.batch = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}
