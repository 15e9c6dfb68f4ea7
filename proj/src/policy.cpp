#include "sota/policy.hpp"

#include <cmath>
#include <fstream>

#include "sota/common.hpp"

namespace sota {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_history: return "no_history";
        case Variant::linear: return "linear";
    }
    return "full";
}

Variant variant_from_name(const std::string& s) {
    if (s == "full") return Variant::full;
    if (s == "no_history") return Variant::no_history;
    if (s == "linear") return Variant::linear;
    throw ValidationError("unknown policy variant: " + s);
}

void PolicyConfig::standardize_times(const StochasticNetwork& net, double gain) {
    time_shift = net.mu;
    time_den.assign(net.num_edges(), 1.0);
    for (int e = 0; e < net.num_edges(); ++e) {
        const double sd = std::sqrt(net.sigma(e, e));
        if (sd > 0.0) time_den[e] = sd;
    }
    time_gain = gain;
}

void PolicyConfig::validate() const {
    if (embed_dim <= 0 || num_layers <= 0 || num_heads <= 0 || ffn_mult <= 0)
        throw ValidationError("policy config: dimensions must be positive");
    if (embed_dim % num_heads != 0)
        throw ValidationError("policy config: embed_dim not divisible by num_heads");
    if (max_history_len < 1) throw ValidationError("policy config: max_history_len < 1");
    if (num_edges <= 0 || num_nodes <= 0)
        throw ValidationError("policy config: vocabulary sizes required");
    if (!(budget_norm > 0.0)) throw ValidationError("policy config: budget_norm must be > 0");
    if (!time_shift.empty() && int(time_shift.size()) != num_edges)
        throw ValidationError("policy config: time_shift size mismatch");
    if (!time_den.empty() && int(time_den.size()) != num_edges)
        throw ValidationError("policy config: time_den size mismatch");
    for (double d : time_den)
        if (!(d > 0.0)) throw ValidationError("policy config: time_den must be positive");
    if (!(time_gain > 0.0)) throw ValidationError("policy config: time_gain must be > 0");
    if (!(logit_scale > 0.0)) throw ValidationError("policy config: logit_scale must be > 0");
}

nlohmann::json PolicyConfig::to_json() const {
    return {{"embed_dim", embed_dim},
            {"num_layers", num_layers},
            {"num_heads", num_heads},
            {"max_history_len", max_history_len},
            {"variant", variant_name(variant)},
            {"num_edges", num_edges},
            {"num_nodes", num_nodes},
            {"fusion_multihead", fusion_multihead},
            {"residual_every_block", residual_every_block},
            {"budget_norm", budget_norm},
            {"ffn_mult", ffn_mult},
            {"time_shift", time_shift},
            {"time_den", time_den},
            {"time_gain", time_gain},
            {"logit_scale", logit_scale}};
}

PolicyConfig PolicyConfig::from_json(const nlohmann::json& j) {
    PolicyConfig c;
    c.embed_dim = j.at("embed_dim").get<int>();
    c.num_layers = j.at("num_layers").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.max_history_len = j.at("max_history_len").get<int>();
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    c.num_edges = j.at("num_edges").get<int>();
    c.num_nodes = j.at("num_nodes").get<int>();
    c.fusion_multihead = j.at("fusion_multihead").get<bool>();
    c.residual_every_block = j.at("residual_every_block").get<bool>();
    c.budget_norm = j.at("budget_norm").get<double>();
    c.ffn_mult = j.at("ffn_mult").get<int>();
    c.time_shift = j.value("time_shift", std::vector<double>{});
    c.time_den = j.value("time_den", std::vector<double>{});
    c.time_gain = j.value("time_gain", 1.0);
    c.logit_scale = j.value("logit_scale", 1.0);
    c.validate();
    return c;
}

void TrajectoryState::validate(const StochasticNetwork& net) const {
    if (edge_history.size() != time_history.size())
        throw ValidationError("state: edge and time histories differ in length");
    double spent = 0.0;
    for (double t : time_history) spent += t;
    if (std::abs(budget_total - spent - remaining_budget) > 1e-9)
        throw ValidationError("state: remaining budget inconsistent with history");
    if (!edge_history.empty()) {
        const int last = edge_history.back();
        if (last < 0 || last >= net.num_edges())
            throw ValidationError("state: edge id out of range");
        if (net.edges[last].head != current_node)
            throw ValidationError("state: current node does not chain from history");
    }
    if (current_node < 0 || current_node >= net.num_nodes ||
        destination_node < 0 || destination_node >= net.num_nodes)
        throw ValidationError("state: node out of range");
}

namespace {

// classic fixed sinusoid by sequence position
Tensor positional_rows(int first_pos, int count, int d) {
    std::vector<double> v(size_t(count) * d);
    for (int p = 0; p < count; ++p) {
        const double pos = double(first_pos + p);
        for (int j = 0; j < d; j += 2) {
            const double freq = std::pow(10000.0, -double(j) / double(d));
            v[size_t(p) * d + j] = std::sin(pos * freq);
            if (j + 1 < d) v[size_t(p) * d + j + 1] = std::cos(pos * freq);
        }
    }
    return tensor(count, d, std::move(v));
}

// scaled dot-product attention over column-split heads; inputs are used as
// query/key/value directly (no learned projections)
Tensor dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    const int d = q->cols;
    const int dh = d / heads;
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Tensor qh = heads == 1 ? q : slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = heads == 1 ? k : slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = heads == 1 ? v : slice_cols(v, h * dh, (h + 1) * dh);
        Tensor scores = scale(matmul_nt(qh, kh), 1.0 / std::sqrt(double(dh)));
        outs.push_back(matmul(softmax_rows(scores), vh));
    }
    return heads == 1 ? outs[0] : concat_cols(outs);
}

}  // namespace

namespace {

template <typename Block>
Tensor learned_attention(const Tensor& q_in, const Tensor& kv_in, const Block& p, int heads) {
    Tensor q = add(matmul(q_in, p.wq), p.bq);
    Tensor k = add(matmul(kv_in, p.wk), p.bk);
    Tensor v = add(matmul(kv_in, p.wv), p.bv);
    return add(matmul(dot_attention(q, k, v, heads), p.wo), p.bo);
}

template <typename Block>
Tensor ffn(const Tensor& x, const Block& p) {
    return add(matmul(relu(add(matmul(x, p.ffn_w1), p.ffn_b1)), p.ffn_w2), p.ffn_b2);
}

// post-norm transformer block; kv == x gives self-attention
template <typename Block>
Tensor transformer_block(const Tensor& x, const Tensor& kv, const Block& p, int heads) {
    Tensor h = layer_norm(add(x, learned_attention(x, kv, p, heads)), p.ln1_g, p.ln1_b);
    return layer_norm(add(h, ffn(h, p)), p.ln2_g, p.ln2_b);
}

}  // namespace

PolicyNetwork::PolicyNetwork(PolicyConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int d = cfg_.embed_dim;
    const int L = cfg_.num_edges;
    const int N = cfg_.num_nodes;

    if (cfg_.variant != Variant::no_history)
        store_.add("embed.edge", L + 1, d, ParamKind::weight);  // row L: begin token
    store_.add("embed.node", N, d, ParamKind::weight);
    store_.add("embed.time_w", 1, d, ParamKind::weight);
    store_.add("embed.time_b", 1, d, ParamKind::bias);
    store_.add("embed.budget_w", 1, d, ParamKind::weight);
    store_.add("embed.budget_b", 1, d, ParamKind::bias);
    store_.add("embed.bot_time", 1, d, ParamKind::weight);

    if (cfg_.variant != Variant::linear) {
        auto add_block = [&](const std::string& prefix) {
            store_.add(prefix + ".attn_wq", d, d, ParamKind::weight);
            store_.add(prefix + ".attn_bq", 1, d, ParamKind::bias);
            store_.add(prefix + ".attn_wk", d, d, ParamKind::weight);
            store_.add(prefix + ".attn_bk", 1, d, ParamKind::bias);
            store_.add(prefix + ".attn_wv", d, d, ParamKind::weight);
            store_.add(prefix + ".attn_bv", 1, d, ParamKind::bias);
            store_.add(prefix + ".attn_wo", d, d, ParamKind::weight);
            store_.add(prefix + ".attn_bo", 1, d, ParamKind::bias);
            store_.add(prefix + ".ln1_g", 1, d, ParamKind::ln_gain);
            store_.add(prefix + ".ln1_b", 1, d, ParamKind::ln_shift);
            store_.add(prefix + ".ln2_g", 1, d, ParamKind::ln_gain);
            store_.add(prefix + ".ln2_b", 1, d, ParamKind::ln_shift);
            store_.add(prefix + ".ffn_w1", d, d * cfg_.ffn_mult, ParamKind::weight);
            store_.add(prefix + ".ffn_b1", 1, d * cfg_.ffn_mult, ParamKind::bias);
            store_.add(prefix + ".ffn_w2", d * cfg_.ffn_mult, d, ParamKind::weight);
            store_.add(prefix + ".ffn_b2", 1, d, ParamKind::bias);
        };
        for (int i = 0; i < cfg_.num_layers; ++i) {
            add_block("enc" + std::to_string(i));
            add_block("dec" + std::to_string(i));
        }
    }
    store_.add("head.w", d, L, ParamKind::weight);
    store_.add("head.b", 1, L, ParamKind::bias);

    store_.init_uniform(init_seed, d);
    bind_params();
}

void PolicyNetwork::bind_params() {
    if (cfg_.variant != Variant::no_history) edge_table_ = store_.get("embed.edge");
    node_table_ = store_.get("embed.node");
    time_w_ = store_.get("embed.time_w");
    time_b_ = store_.get("embed.time_b");
    budget_w_ = store_.get("embed.budget_w");
    budget_b_ = store_.get("embed.budget_b");
    bot_time_ = store_.get("embed.bot_time");
    head_w_ = store_.get("head.w");
    head_b_ = store_.get("head.b");
    enc_.clear();
    dec_.clear();
    if (cfg_.variant == Variant::linear) return;
    auto bind_block = [&](const std::string& prefix) {
        Block p;
        p.wq = store_.get(prefix + ".attn_wq");
        p.bq = store_.get(prefix + ".attn_bq");
        p.wk = store_.get(prefix + ".attn_wk");
        p.bk = store_.get(prefix + ".attn_bk");
        p.wv = store_.get(prefix + ".attn_wv");
        p.bv = store_.get(prefix + ".attn_bv");
        p.wo = store_.get(prefix + ".attn_wo");
        p.bo = store_.get(prefix + ".attn_bo");
        p.ln1_g = store_.get(prefix + ".ln1_g");
        p.ln1_b = store_.get(prefix + ".ln1_b");
        p.ln2_g = store_.get(prefix + ".ln2_g");
        p.ln2_b = store_.get(prefix + ".ln2_b");
        p.ffn_w1 = store_.get(prefix + ".ffn_w1");
        p.ffn_b1 = store_.get(prefix + ".ffn_b1");
        p.ffn_w2 = store_.get(prefix + ".ffn_w2");
        p.ffn_b2 = store_.get(prefix + ".ffn_b2");
        return p;
    };
    for (int i = 0; i < cfg_.num_layers; ++i) {
        enc_.push_back(bind_block("enc" + std::to_string(i)));
        dec_.push_back(bind_block("dec" + std::to_string(i)));
    }
}

Tensor PolicyNetwork::forward_logits(const TrajectoryState& state) const {
    const int d = cfg_.embed_dim;
    const int l = int(state.edge_history.size());
    if (l > cfg_.max_history_len) throw ValidationError("policy: history overflow");

    // embedded streams; an empty history is represented by a learned begin token
    Tensor time_seq;
    if (l == 0) {
        time_seq = bot_time_;
    } else {
        std::vector<double> feats(l);
        for (int k = 0; k < l; ++k) {
            const int e = state.edge_history[k];
            double f = state.time_history[k];
            if (!cfg_.time_shift.empty()) f -= cfg_.time_shift[e];
            if (!cfg_.time_den.empty()) f /= cfg_.time_den[e];
            feats[k] = cfg_.time_gain * f;
        }
        time_seq = add(matmul(tensor(l, 1, std::move(feats)), time_w_), time_b_);
    }
    const int rows = std::max(l, 1);
    Tensor pos = positional_rows(0, rows, d);

    Tensor edge_seq;
    if (cfg_.variant != Variant::no_history) {
        std::vector<int> ids = state.edge_history;
        if (ids.empty()) ids.push_back(cfg_.num_edges);  // begin token row
        edge_seq = embedding_lookup(edge_table_, ids);
    }

    Tensor node_q = embedding_lookup(node_table_, {state.current_node});
    Tensor dest_q = embedding_lookup(node_table_, {state.destination_node});
    Tensor budget_q = add(matmul(tensor(1, 1, {state.remaining_budget / cfg_.budget_norm}),
                                 budget_w_),
                          budget_b_);
    Tensor query = add(add(add(node_q, dest_q), budget_q), positional_rows(l, 1, d));

    if (cfg_.variant == Variant::linear) {
        Tensor pooled = mean_rows(add(add(edge_seq, time_seq), pos));
        return scale(add(matmul(add(pooled, query), head_w_), head_b_), cfg_.logit_scale);
    }

    Tensor x;
    if (cfg_.variant == Variant::no_history) {
        x = add(time_seq, pos);
    } else {
        const int fusion_heads = cfg_.fusion_multihead ? cfg_.num_heads : 1;
        Tensor fused = dot_attention(edge_seq, time_seq, time_seq, fusion_heads);
        x = add(fused, pos);
    }
    for (int i = 0; i < cfg_.num_layers; ++i) {
        x = transformer_block(x, x, enc_[i], cfg_.num_heads);
        if (cfg_.residual_every_block || i == 0) x = add(x, time_seq);
    }
    Tensor x_enc = x;

    Tensor q = query;
    for (int i = 0; i < cfg_.num_layers; ++i)
        q = transformer_block(q, x_enc, dec_[i], cfg_.num_heads);

    return scale(add(matmul(q, head_w_), head_b_), cfg_.logit_scale);
}

ActionDistribution PolicyNetwork::action_distribution(const TrajectoryState& state,
                                                      const StochasticNetwork& net) const {
    if (net.num_edges() != cfg_.num_edges || net.num_nodes != cfg_.num_nodes)
        throw ValidationError("policy: network vocabulary mismatch");
    state.validate(net);
    if (net.out_edges[state.current_node].empty())
        throw ValidationError("policy: dead-end node has no feasible action");

    ActionDistribution dist;
    dist.feasible.assign(cfg_.num_edges, 0);
    for (int eid : net.out_edges[state.current_node]) dist.feasible[eid] = 1;
    dist.probs = masked_softmax(forward_logits(state), dist.feasible);
    return dist;
}

void PolicyNetwork::save(const std::string& path, const nlohmann::json& extra_meta) const {
    nlohmann::json header;
    header["policy_config"] = cfg_.to_json();
    header["meta"] = extra_meta;
    write_checkpoint(path, header, store_.serialize());
}

PolicyNetwork::Loaded PolicyNetwork::load(const std::string& path) {
    CheckpointFile f = read_checkpoint(path);
    PolicyConfig cfg = PolicyConfig::from_json(f.header.at("policy_config"));
    PolicyNetwork policy(cfg, 0);
    policy.store_.deserialize_from(f.payload);
    return {std::move(policy), f.header.value("meta", nlohmann::json::object())};
}

namespace {
constexpr char kMagic[9] = "SOTACKPT";
constexpr uint32_t kVersion = 1;
}  // namespace

void write_checkpoint(const std::string& path, const nlohmann::json& header,
                      const std::string& payload) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&kVersion), 4);
    const std::string h = header.dump();
    const uint64_t hlen = h.size(), plen = payload.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(h.data(), std::streamsize(h.size()));
    out.write(reinterpret_cast<const char*>(&plen), 8);
    out.write(payload.data(), std::streamsize(payload.size()));
    if (!out) throw ParseError("checkpoint write failed: " + path);
}

CheckpointFile read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != std::string(kMagic, 8))
        throw ValidationError("not a checkpoint file: " + path);
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (version != kVersion) throw ValidationError("unsupported checkpoint version");
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    std::string h(hlen, '\0');
    in.read(h.data(), std::streamsize(hlen));
    uint64_t plen = 0;
    in.read(reinterpret_cast<char*>(&plen), 8);
    CheckpointFile f;
    f.payload.resize(plen);
    in.read(f.payload.data(), std::streamsize(plen));
    if (!in) throw ParseError("checkpoint truncated: " + path);
    try {
        f.header = nlohmann::json::parse(h);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint header malformed: ") + e.what());
    }
    return f;
}

}  // namespace sota
