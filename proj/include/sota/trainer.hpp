#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "sota/network.hpp"
#include "sota/policy.hpp"
#include "sota/rng.hpp"

namespace sota {

struct TrajectoryStep {
    TrajectoryState state;  // state the action was taken from
    int action = -1;        // edge id
    double reward = 0.0;    // realized travel time of that edge
};

struct Trajectory {
    std::vector<TrajectoryStep> steps;
    bool reached = false;
    // total travel time; +inf when the step cap was hit before arrival
    double total_time = std::numeric_limits<double>::infinity();
    // sum of log pi(a_k | s_k) over taken actions; null for empty trajectories
    Tensor log_prob;
};

struct RolloutBatch {
    std::vector<Trajectory> trajectories;
    std::vector<RealizedNetwork> networks;
    double budget = 0.0;
};

enum class Estimator { gpg, vanilla_pg };

std::string estimator_name(Estimator e);
Estimator estimator_from_name(const std::string& s);

struct TrainConfig {
    int iterations = 200;
    int batch = 100;  // M: networks sampled (and trajectories rolled) per iteration
    double lr = 1e-3;
    uint64_t seed = 1;
    int max_steps = 0;  // 0 -> 4 * num_nodes
    Estimator estimator = Estimator::gpg;
    int eval_cadence = 5;        // 0 disables intermediate evaluation
    int eval_samples = 2000;     // held-out realizations per curve point
    int final_eval_samples = 10000;
    int train_pool = 10000;      // realizations available for training (with replacement)
    int rollouts_per_net = 1;    // K trajectories per sampled network
    bool mean_baseline = false;  // subtract the batch-mean weight (off: faithful estimator)
    int checkpoint_cadence = 0;  // 0 disables periodic checkpoints
    int workers = 1;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct CurvePoint {
    int iteration = 0;
    double j_mean = 0.0;
    double j_std = 0.0;
    double wallclock_s = 0.0;
};

struct ConvergenceCurve {
    std::vector<CurvePoint> points;
};

// Samples actions from the policy on one realized network until the
// destination is reached or max_steps actions were taken. The tape behind
// log_prob covers exactly the taken actions.
Trajectory rollout(const PolicyNetwork& policy, const RealizedNetwork& realized,
                   int origin, int destination, double budget, int max_steps,
                   RngStream& rng);

int sample_action(const ActionDistribution& dist, RngStream& rng);
int argmax_action(const ActionDistribution& dist);

// On-time-indicator-weighted score-function gradient: descends
//   -(1/M) * sum_j 1{G_j <= T} log pi(tau_j),
// accumulated into the store's gradient buffers (adam_step consumes them).
// Off-time trajectories contribute exactly zero. Reduction over
// trajectories is ordered, so results do not depend on `workers`.
void gpg_gradient(const RolloutBatch& batch, ParameterStore& store,
                  bool mean_baseline = false, int workers = 1);

// REINFORCE on the negated travel time: per-trajectory weight -G, and
// -2T for trajectories that never arrived.
void vanilla_pg_gradient(const RolloutBatch& batch, ParameterStore& store,
                         bool mean_baseline = false, int workers = 1);

struct TrainResult {
    ConvergenceCurve curve;
    double final_j = 0.0;
    double final_stderr = 0.0;
};

// Full training loop: per iteration draws `batch` networks from the seeded
// training pool, rolls one trajectory on each, applies the configured
// estimator and an Adam step. At the evaluation cadence J is measured on
// held-out realizations and appended to the curve. `start_iteration` > 0
// continues a resumed run.
TrainResult train(const StochasticNetwork& net, int origin, int destination,
                  double budget, const TrainConfig& cfg, PolicyNetwork& policy,
                  const std::string& checkpoint_dir = "",
                  int start_iteration = 0, ConvergenceCurve initial_curve = {});

void save_train_checkpoint(const std::string& path, const PolicyNetwork& policy,
                           const StochasticNetwork& net, int origin, int destination,
                           double budget, const TrainConfig& cfg, int iteration,
                           const ConvergenceCurve& curve);

struct TrainCheckpoint {
    PolicyNetwork policy;
    StochasticNetwork net;
    int origin = 0, destination = 0;
    double budget = 0.0;
    TrainConfig config;
    int iteration = 0;
    ConvergenceCurve curve;
};
TrainCheckpoint load_train_checkpoint(const std::string& path);

}  // namespace sota
