#include "sota/trainer.hpp"

#include <chrono>
#include <cmath>
#include <deque>

#include "sota/common.hpp"
#include "sota/eval.hpp"
#include "sota/parallel.hpp"

namespace sota {

namespace {

// seed stream tags
constexpr uint64_t kPoolTag = 0x700Au;
constexpr uint64_t kDrawTag = 0xD0A1u;
constexpr uint64_t kRollTag = 0x401Cu;
constexpr uint64_t kEvalTag = 0xE0A7u;
constexpr uint64_t kIterStride = 1ull << 20;

int hop_distance(const StochasticNetwork& net, int origin, int destination) {
    std::vector<int> dist(net.num_nodes, -1);
    std::deque<int> queue{origin};
    dist[origin] = 0;
    while (!queue.empty()) {
        int u = queue.front();
        queue.pop_front();
        if (u == destination) return dist[u];
        for (int eid : net.out_edges[u]) {
            int v = net.edges[eid].head;
            if (dist[v] < 0) {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    return -1;
}

}  // namespace

std::string estimator_name(Estimator e) {
    return e == Estimator::gpg ? "gpg" : "vanilla_pg";
}

Estimator estimator_from_name(const std::string& s) {
    if (s == "gpg") return Estimator::gpg;
    if (s == "vanilla_pg") return Estimator::vanilla_pg;
    throw ValidationError("unknown estimator: " + s);
}

void TrainConfig::validate() const {
    if (iterations < 0) throw ValidationError("train config: iterations < 0");
    if (batch < 1) throw ValidationError("train config: batch < 1");
    if (!(lr > 0.0)) throw ValidationError("train config: lr must be positive");
    if (train_pool < 1) throw ValidationError("train config: train_pool < 1");
    if (rollouts_per_net < 1) throw ValidationError("train config: rollouts_per_net < 1");
    if (eval_cadence < 0 || eval_samples < 0 || final_eval_samples < 0 ||
        checkpoint_cadence < 0)
        throw ValidationError("train config: negative cadence or sample count");
    if (max_steps < 0) throw ValidationError("train config: max_steps < 0");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"iterations", iterations},
            {"batch", batch},
            {"lr", lr},
            {"seed", seed},
            {"max_steps", max_steps},
            {"estimator", estimator_name(estimator)},
            {"eval_cadence", eval_cadence},
            {"eval_samples", eval_samples},
            {"final_eval_samples", final_eval_samples},
            {"train_pool", train_pool},
            {"rollouts_per_net", rollouts_per_net},
            {"mean_baseline", mean_baseline},
            {"checkpoint_cadence", checkpoint_cadence},
            {"workers", workers}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.iterations = j.value("iterations", c.iterations);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
    c.max_steps = j.value("max_steps", c.max_steps);
    if (j.contains("estimator")) c.estimator = estimator_from_name(j.at("estimator"));
    c.eval_cadence = j.value("eval_cadence", c.eval_cadence);
    c.eval_samples = j.value("eval_samples", c.eval_samples);
    c.final_eval_samples = j.value("final_eval_samples", c.final_eval_samples);
    c.train_pool = j.value("train_pool", c.train_pool);
    c.rollouts_per_net = j.value("rollouts_per_net", c.rollouts_per_net);
    c.mean_baseline = j.value("mean_baseline", c.mean_baseline);
    c.checkpoint_cadence = j.value("checkpoint_cadence", c.checkpoint_cadence);
    c.workers = j.value("workers", c.workers);
    c.validate();
    return c;
}

int sample_action(const ActionDistribution& dist, RngStream& rng) {
    const double u = rng.uniform();
    const auto& p = dist.probs->value;
    double c = 0.0;
    int last_feasible = -1;
    for (int e = 0; e < int(p.size()); ++e) {
        if (!dist.feasible[e]) continue;
        last_feasible = e;
        c += p[e];
        if (u < c) return e;
    }
    return last_feasible;  // u fell into the rounding tail of the cumulative sum
}

int argmax_action(const ActionDistribution& dist) {
    const auto& p = dist.probs->value;
    int best = -1;
    for (int e = 0; e < int(p.size()); ++e) {
        if (!dist.feasible[e]) continue;
        if (best < 0 || p[e] > p[best]) best = e;
    }
    return best;
}

Trajectory rollout(const PolicyNetwork& policy, const RealizedNetwork& realized,
                   int origin, int destination, double budget, int max_steps,
                   RngStream& rng) {
    const auto& net = *realized.net;
    Trajectory traj;
    TrajectoryState s = TrajectoryState::initial(origin, destination, budget);
    std::vector<Tensor> logps;
    double total = 0.0;
    while (s.current_node != destination && int(traj.steps.size()) < max_steps) {
        ActionDistribution dist = policy.action_distribution(s, net);
        const int a = sample_action(dist, rng);
        if (grad_enabled()) logps.push_back(log_elem(gather_cols(dist.probs, {a})));
        const double r = realized.times[a];
        traj.steps.push_back({s, a, r});
        total += r;
        s.advance(net.edges[a], r);
    }
    traj.reached = (s.current_node == destination);
    if (traj.reached) traj.total_time = total;
    if (!logps.empty()) {
        Tensor lp = logps[0];
        for (size_t i = 1; i < logps.size(); ++i) lp = add(lp, logps[i]);
        traj.log_prob = lp;
    }
    return traj;
}

namespace {

// Shared core of both estimators: descend -(1/M) sum_j w_j log pi(tau_j).
// Each trajectory backpropagates into its own sink and sinks reduce in
// trajectory order, so the result is identical at any worker count.
void weighted_score_gradient(const RolloutBatch& batch, ParameterStore& store,
                             std::vector<double> weights, bool mean_baseline,
                             int workers) {
    const int n = int(batch.trajectories.size());
    if (n == 0) throw ValidationError("gradient: empty batch");
    if (mean_baseline) {
        double mean = 0.0;
        for (double w : weights) mean += w;
        mean /= n;
        for (double& w : weights) w -= mean;
    }
    const double inv_m = 1.0 / double(n);
    std::vector<GradSink> sinks(n);
    parallel_for(n, workers, [&](int j) {
        const auto& tr = batch.trajectories[j];
        if (weights[j] == 0.0 || !tr.log_prob) return;
        backward(scale(tr.log_prob, -weights[j] * inv_m), sinks[j]);
    });
    store.reduce_sinks(sinks);
}

}  // namespace

void gpg_gradient(const RolloutBatch& batch, ParameterStore& store, bool mean_baseline,
                  int workers) {
    std::vector<double> weights;
    weights.reserve(batch.trajectories.size());
    for (const auto& tr : batch.trajectories)
        weights.push_back(tr.total_time <= batch.budget ? 1.0 : 0.0);
    weighted_score_gradient(batch, store, std::move(weights), mean_baseline, workers);
}

void vanilla_pg_gradient(const RolloutBatch& batch, ParameterStore& store,
                         bool mean_baseline, int workers) {
    std::vector<double> weights;
    weights.reserve(batch.trajectories.size());
    for (const auto& tr : batch.trajectories)
        weights.push_back(tr.reached ? -tr.total_time : -2.0 * batch.budget);
    weighted_score_gradient(batch, store, std::move(weights), mean_baseline, workers);
}

TrainResult train(const StochasticNetwork& net, int origin, int destination,
                  double budget, const TrainConfig& cfg, PolicyNetwork& policy,
                  const std::string& checkpoint_dir, int start_iteration,
                  ConvergenceCurve initial_curve) {
    cfg.validate();
    const int max_steps = cfg.max_steps > 0 ? cfg.max_steps : 4 * net.num_nodes;
    const int hops = hop_distance(net, origin, destination);
    if (hops < 0) throw ValidationError("train: destination unreachable from origin");
    if (hops > max_steps) throw ValidationError("train: max_steps below network distance");

    TrainResult result;
    result.curve = std::move(initial_curve);
    const uint64_t eval_seed = derive_seed(cfg.seed, kEvalTag);
    const auto t_start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
            .count();
    };

    const int total_rollouts = cfg.batch * cfg.rollouts_per_net;
    for (int it = start_iteration; it < cfg.iterations; ++it) {
        RngStream draw(derive_seed(cfg.seed, kDrawTag, uint64_t(it)));
        std::vector<uint64_t> net_seeds(cfg.batch);
        for (int b = 0; b < cfg.batch; ++b)
            net_seeds[b] = derive_seed(cfg.seed, kPoolTag, draw.integer(uint64_t(cfg.train_pool)));

        RolloutBatch batch;
        batch.budget = budget;
        batch.networks.resize(cfg.batch);
        batch.trajectories.resize(total_rollouts);
        parallel_for(cfg.batch, cfg.workers, [&](int b) {
            batch.networks[b] = sample_realization(net, net_seeds[b]);
        });
        parallel_for(total_rollouts, cfg.workers, [&](int j) {
            RngStream rng(derive_seed(cfg.seed, kRollTag, uint64_t(it) * kIterStride + j));
            batch.trajectories[j] = rollout(policy, batch.networks[j / cfg.rollouts_per_net],
                                            origin, destination, budget, max_steps, rng);
        });

        if (cfg.estimator == Estimator::gpg)
            gpg_gradient(batch, policy.params(), cfg.mean_baseline, cfg.workers);
        else
            vanilla_pg_gradient(batch, policy.params(), cfg.mean_baseline, cfg.workers);
        policy.params().adam_step(cfg.lr);

        const int done = it + 1;
        if (cfg.eval_cadence > 0 && cfg.eval_samples > 0 &&
            (done % cfg.eval_cadence == 0 || done == cfg.iterations)) {
            EvalOutcome ev = sota_probability(policy, net, origin, destination, budget,
                                              cfg.eval_samples, eval_seed, false, 10,
                                              max_steps, cfg.workers);
            result.curve.points.push_back({done, ev.j, ev.chunk_std, elapsed()});
        }
        if (!checkpoint_dir.empty() && cfg.checkpoint_cadence > 0 &&
            (done % cfg.checkpoint_cadence == 0 || done == cfg.iterations)) {
            save_train_checkpoint(checkpoint_dir + "/checkpoint_" + std::to_string(done) +
                                      ".ckpt",
                                  policy, net, origin, destination, budget, cfg, done,
                                  result.curve);
        }
    }

    if (cfg.final_eval_samples > 0) {
        EvalOutcome ev = sota_probability(policy, net, origin, destination, budget,
                                          cfg.final_eval_samples, eval_seed, false, 10,
                                          max_steps, cfg.workers);
        result.final_j = ev.j;
        result.final_stderr = ev.stderr_;
    }
    return result;
}

void save_train_checkpoint(const std::string& path, const PolicyNetwork& policy,
                           const StochasticNetwork& net, int origin, int destination,
                           double budget, const TrainConfig& cfg, int iteration,
                           const ConvergenceCurve& curve) {
    nlohmann::json curve_json = nlohmann::json::array();
    for (const auto& p : curve.points)
        curve_json.push_back({p.iteration, p.j_mean, p.j_std, p.wallclock_s});
    nlohmann::json meta = {{"kind", "train_state"},
                           {"iteration", iteration},
                           {"origin", origin},
                           {"destination", destination},
                           {"budget", budget},
                           {"train_config", cfg.to_json()},
                           {"network", network_to_json(net)},
                           {"curve", curve_json}};
    policy.save(path, meta);
}

TrainCheckpoint load_train_checkpoint(const std::string& path) {
    PolicyNetwork::Loaded loaded = PolicyNetwork::load(path);
    const auto& meta = loaded.meta;
    if (meta.value("kind", "") != "train_state")
        throw ValidationError("checkpoint is not a training state: " + path);
    TrainCheckpoint out{std::move(loaded.policy),
                        network_from_json(meta.at("network")),
                        meta.at("origin").get<int>(),
                        meta.at("destination").get<int>(),
                        meta.at("budget").get<double>(),
                        TrainConfig::from_json(meta.at("train_config")),
                        meta.at("iteration").get<int>(),
                        {}};
    for (const auto& p : meta.at("curve"))
        out.curve.points.push_back(
            {p.at(0).get<int>(), p.at(1).get<double>(), p.at(2).get<double>(),
             p.at(3).get<double>()});
    if (out.policy.config().num_edges != out.net.num_edges() ||
        out.policy.config().num_nodes != out.net.num_nodes)
        throw ValidationError("checkpoint vocabulary does not match its network");
    return out;
}

}  // namespace sota
