#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sota/network.hpp"
#include "sota/param_store.hpp"
#include "sota/tensor.hpp"

namespace sota {

enum class Variant { full, no_history, linear };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& s);

struct PolicyConfig {
    int embed_dim = 64;
    int num_layers = 2;
    int num_heads = 4;
    int max_history_len = 128;
    Variant variant = Variant::full;
    int num_edges = 0;  // edge vocabulary L
    int num_nodes = 0;  // node vocabulary N
    // apply the history fusion attention per head rather than single-head
    bool fusion_multihead = true;
    // add the travel-time embedding after every encoder block; false = first only
    bool residual_every_block = true;
    // remaining budget is divided by this before its linear embedding
    // (set to t_LET of the experiment so magnitudes compare across networks)
    double budget_norm = 1.0;
    int ffn_mult = 4;
    // per-edge affine normalization of history times before the linear
    // embedding: feature = time_gain * (r - time_shift[e]) / time_den[e].
    // Empty vectors mean shift 0 / denominator 1 (raw times). Centering on
    // the edge mean and dividing by its standard deviation makes the
    // embedded scalar the standardized innovation, which is what the fork
    // decisions actually condition on.
    std::vector<double> time_shift;
    std::vector<double> time_den;
    double time_gain = 1.0;
    // output head multiplies the FC logits by this; 1/sqrt(embed_dim) keeps
    // early policies near-uniform so the action preferences cannot lock in
    // before the history conditioning has formed
    double logit_scale = 1.0;

    // standard setup: shift = edge means, den = edge standard deviations
    // (deterministic edges keep denominator 1; their innovation is 0)
    void standardize_times(const StochasticNetwork& net, double gain);

    void validate() const;
    nlohmann::json to_json() const;
    static PolicyConfig from_json(const nlohmann::json& j);
};

// Non-Markovian policy input: everything observed so far plus the goal.
struct TrajectoryState {
    std::vector<int> edge_history;
    std::vector<double> time_history;
    int current_node = 0;
    int destination_node = 0;
    double remaining_budget = 0.0;
    double budget_total = 0.0;

    static TrajectoryState initial(int origin, int destination, double budget) {
        TrajectoryState s;
        s.current_node = origin;
        s.destination_node = destination;
        s.remaining_budget = budget;
        s.budget_total = budget;
        return s;
    }

    void advance(const EdgeDef& edge, double realized_time) {
        edge_history.push_back(edge.id);
        time_history.push_back(realized_time);
        current_node = edge.head;
        remaining_budget -= realized_time;
    }

    void validate(const StochasticNetwork& net) const;
};

struct ActionDistribution {
    Tensor probs;                   // 1 x L, graph-connected when recording
    std::vector<uint8_t> feasible;  // outgoing edges of the current node
};

// History-aware decision policy. The traversed-edge sequence attends over
// the realized-time sequence, a transformer encoder/decoder digests the
// result together with current node, destination and remaining budget, and
// a linear head scores the network's edges; infeasible edges are masked out.
class PolicyNetwork {
  public:
    PolicyNetwork(PolicyConfig cfg, uint64_t init_seed);

    const PolicyConfig& config() const { return cfg_; }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }

    ActionDistribution action_distribution(const TrajectoryState& state,
                                           const StochasticNetwork& net) const;

    void save(const std::string& path, const nlohmann::json& extra_meta) const;
    struct Loaded;
    static Loaded load(const std::string& path);

  private:
    struct Block {
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln1_g, ln1_b, ln2_g, ln2_b;
        Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    };

    Tensor forward_logits(const TrajectoryState& state) const;
    void bind_params();

    PolicyConfig cfg_;
    ParameterStore store_;
    Tensor edge_table_, node_table_, time_w_, time_b_, budget_w_, budget_b_, bot_time_;
    Tensor head_w_, head_b_;
    std::vector<Block> enc_, dec_;
};

struct PolicyNetwork::Loaded {
    PolicyNetwork policy;
    nlohmann::json meta;
};

// Checkpoint container shared by policy and trainer state: a magic tag, a
// format version, a JSON header and an opaque binary payload.
void write_checkpoint(const std::string& path, const nlohmann::json& header,
                      const std::string& payload);
struct CheckpointFile {
    nlohmann::json header;
    std::string payload;
};
CheckpointFile read_checkpoint(const std::string& path);

}  // namespace sota
