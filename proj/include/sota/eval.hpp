#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sota/network.hpp"
#include "sota/policy.hpp"
#include "sota/trainer.hpp"

namespace sota {

struct EvalOutcome {
    double j = 0.0;        // fraction of on-time arrivals
    double stderr_ = 0.0;  // sqrt(J(1-J)/n)
    double chunk_std = 0.0;
    std::vector<uint8_t> on_time;  // per evaluated realization
};

// Measures the on-time arrival probability of the policy: samples num_eval
// realized networks from `seed`, runs one stochastic rollout on each (or a
// greedy one with argmax), and counts arrivals within the budget.
// Deterministic in (policy, net, seed); the realizations depend only on
// (net, seed), so calls with equal seeds are paired across budgets,
// variants and checkpoints.
EvalOutcome sota_probability(const PolicyNetwork& policy, const StochasticNetwork& net,
                             int origin, int destination, double budget, int num_eval,
                             uint64_t seed, bool argmax = false, int chunks = 10,
                             int max_steps = 0, int workers = 1);

struct ExperimentConfig {
    std::string network_source = "synthetic";  // synthetic | sfn | <path to json>
    uint64_t network_seed = 1;                 // instance seed for generated networks
    std::vector<std::array<int, 2>> od_pairs;
    std::vector<double> budget_multipliers{0.95, 1.0, 1.05};
    double budget_override = 0.0;  // > 0: absolute budget, multipliers ignored
    TrainConfig train;
    // policy architecture (vocabulary sizes are filled from the network)
    int embed_dim = 64;
    int num_layers = 2;
    int num_heads = 4;
    bool fusion_multihead = true;
    bool residual_every_block = true;
    int ffn_mult = 4;
    int eval_samples = 10000;
    std::vector<uint64_t> seeds{1};
    std::vector<std::string> variants{"full"};  // full | no_history | linear | vanilla_pg

    void validate() const;
    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    // FNV-1a over the canonical JSON dump, excluding fields that cannot
    // change results (worker count)
    std::string config_hash() const;
};

// A variant label bundles the architecture and the estimator it trains with.
struct VariantSpec {
    Variant architecture = Variant::full;
    Estimator estimator = Estimator::gpg;
};
VariantSpec variant_spec(const std::string& label);

struct EvalRow {
    int origin = 0, destination = 0;
    double multiplier = 0.0;
    std::string variant;
    uint64_t seed = 0;
    double j = 0.0;
    double stderr_ = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::string config_hash;
    std::string created;  // wall time; not covered by determinism comparisons
    nlohmann::json config_echo;
};

StochasticNetwork load_network_source(const std::string& source, uint64_t network_seed);

// Trains and evaluates every (OD, multiplier, variant, seed) cell. Each
// finished cell persists under out_dir/cells/ and is skipped on rerun, so
// interrupted experiments resume. Evaluation realizations share one seed
// per OD pair, pairing comparisons across multipliers, variants and seeds.
// On failure the partial report is still written before the error
// propagates.
EvalReport run_experiment(const ExperimentConfig& config, const std::string& out_dir);

void emit_curve(const ConvergenceCurve& curve, const std::string& path);
ConvergenceCurve parse_curve_csv(const std::string& path);
// CSV plus a .json sidecar carrying the config echo, hash and timestamp
void emit_report(const EvalReport& report, const std::string& csv_path);
std::vector<EvalRow> parse_report_csv(const std::string& path);

// locale-independent shortest round-trip formatting
std::string format_double(double v);

}  // namespace sota
