#include "sota/eval.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sota/common.hpp"
#include "sota/parallel.hpp"
#include "sota/rng.hpp"

namespace sota {

namespace {

constexpr uint64_t kEvalNetTag = 0xE7A1u;
constexpr uint64_t kEvalActTag = 0xE7A2u;
constexpr uint64_t kCellInitTag = 0xC311u;
constexpr uint64_t kCellTrainTag = 0xC312u;
constexpr uint64_t kOdEvalTag = 0x0DE7u;

}  // namespace

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

EvalOutcome sota_probability(const PolicyNetwork& policy, const StochasticNetwork& net,
                             int origin, int destination, double budget, int num_eval,
                             uint64_t seed, bool argmax, int chunks, int max_steps,
                             int workers) {
    if (num_eval < 1) throw ValidationError("sota_probability: num_eval < 1");
    if (max_steps <= 0) max_steps = 4 * net.num_nodes;

    EvalOutcome out;
    out.on_time.assign(num_eval, 0);
    parallel_for(num_eval, workers, [&](int i) {
        NoGradGuard ng;  // evaluation never needs the tape
        RealizedNetwork realized = sample_realization(net, derive_seed(seed, kEvalNetTag, i));
        RngStream rng(derive_seed(seed, kEvalActTag, i));
        TrajectoryState s = TrajectoryState::initial(origin, destination, budget);
        int steps = 0;
        double total = 0.0;
        while (s.current_node != destination && steps < max_steps) {
            ActionDistribution dist = policy.action_distribution(s, net);
            const int a = argmax ? argmax_action(dist) : sample_action(dist, rng);
            total += realized.times[a];
            s.advance(net.edges[a], realized.times[a]);
            ++steps;
        }
        out.on_time[i] = (s.current_node == destination && total <= budget) ? 1 : 0;
    });

    double hits = 0.0;
    for (uint8_t b : out.on_time) hits += b;
    out.j = hits / double(num_eval);
    out.stderr_ = std::sqrt(std::max(out.j * (1.0 - out.j), 0.0) / double(num_eval));

    chunks = std::max(1, std::min(chunks, num_eval));
    std::vector<double> means;
    const int per = num_eval / chunks;
    for (int c = 0; c < chunks && per > 0; ++c) {
        double s = 0.0;
        for (int i = c * per; i < (c + 1) * per; ++i) s += out.on_time[i];
        means.push_back(s / per);
    }
    if (means.size() > 1) {
        double m = 0.0;
        for (double x : means) m += x;
        m /= double(means.size());
        double var = 0.0;
        for (double x : means) var += (x - m) * (x - m);
        out.chunk_std = std::sqrt(var / double(means.size() - 1));
    }
    return out;
}

void ExperimentConfig::validate() const {
    if (od_pairs.empty()) throw ValidationError("experiment: no OD pairs");
    if (budget_override <= 0.0) {
        if (budget_multipliers.empty())
            throw ValidationError("experiment: no budget multipliers");
        for (double m : budget_multipliers)
            if (!(m > 0.0)) throw ValidationError("experiment: multipliers must be > 0");
    }
    if (eval_samples < 1) throw ValidationError("experiment: eval_samples < 1");
    if (seeds.empty()) throw ValidationError("experiment: no seeds");
    if (variants.empty()) throw ValidationError("experiment: no variants");
    for (const auto& v : variants) variant_spec(v);  // throws on unknown labels
    train.validate();
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json ods = nlohmann::json::array();
    for (const auto& od : od_pairs) ods.push_back({od[0], od[1]});
    return {{"network_source", network_source},
            {"network_seed", network_seed},
            {"od_pairs", ods},
            {"budget_multipliers", budget_multipliers},
            {"budget_override", budget_override},
            {"train", train.to_json()},
            {"embed_dim", embed_dim},
            {"num_layers", num_layers},
            {"num_heads", num_heads},
            {"fusion_multihead", fusion_multihead},
            {"residual_every_block", residual_every_block},
            {"ffn_mult", ffn_mult},
            {"eval_samples", eval_samples},
            {"seeds", seeds},
            {"variants", variants}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.network_source = j.value("network_source", c.network_source);
    c.network_seed = j.value("network_seed", c.network_seed);
    if (j.contains("od_pairs")) {
        c.od_pairs.clear();
        for (const auto& od : j.at("od_pairs"))
            c.od_pairs.push_back({od.at(0).get<int>(), od.at(1).get<int>()});
    }
    if (j.contains("budget_multipliers"))
        c.budget_multipliers = j.at("budget_multipliers").get<std::vector<double>>();
    c.budget_override = j.value("budget_override", c.budget_override);
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.num_layers = j.value("num_layers", c.num_layers);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.fusion_multihead = j.value("fusion_multihead", c.fusion_multihead);
    c.residual_every_block = j.value("residual_every_block", c.residual_every_block);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.eval_samples = j.value("eval_samples", c.eval_samples);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    if (j.contains("variants")) c.variants = j.at("variants").get<std::vector<std::string>>();
    c.validate();
    return c;
}

std::string ExperimentConfig::config_hash() const {
    nlohmann::json j = to_json();
    j["train"].erase("workers");  // cannot change results
    const std::string dump = j.dump();
    uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : dump) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

VariantSpec variant_spec(const std::string& label) {
    if (label == "full") return {Variant::full, Estimator::gpg};
    if (label == "no_history") return {Variant::no_history, Estimator::gpg};
    if (label == "linear") return {Variant::linear, Estimator::gpg};
    if (label == "vanilla_pg") return {Variant::full, Estimator::vanilla_pg};
    throw ValidationError("unknown variant label: " + label);
}

StochasticNetwork load_network_source(const std::string& source, uint64_t network_seed) {
    if (source == "synthetic") return build_synthetic();
    if (source == "sfn") return build_sfn(network_seed);
    return load_network(source);
}

namespace {

std::string cell_name(int o, int d, double mult, const std::string& variant, uint64_t seed) {
    std::ostringstream os;
    os << "od" << o << "-" << d << "_m" << format_double(mult) << "_" << variant << "_s"
       << seed;
    return os.str();
}

std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return std::string(buf);
}

}  // namespace

EvalReport run_experiment(const ExperimentConfig& config, const std::string& out_dir) {
    config.validate();
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "cells");

    StochasticNetwork net = load_network_source(config.network_source, config.network_seed);

    EvalReport report;
    report.config_hash = config.config_hash();
    report.config_echo = config.to_json();
    report.created = now_iso8601();

    std::vector<double> multipliers = config.budget_multipliers;
    if (config.budget_override > 0.0) multipliers = {0.0};  // single absolute-budget cell

    auto run_cells = [&] {
        for (const auto& od : config.od_pairs) {
            const LetResult let = let_path(net, od[0], od[1]);
            const double t_let = std::max(let.t_let, 1.0);
            const uint64_t od_eval_seed =
                derive_seed(config.network_seed, kOdEvalTag, uint64_t(od[0]) * 1000 + od[1]);
            for (double mult : multipliers) {
                const double budget =
                    config.budget_override > 0.0 ? config.budget_override : mult * let.t_let;
                for (const auto& variant : config.variants) {
                    for (uint64_t seed : config.seeds) {
                        const std::string name = cell_name(od[0], od[1], mult, variant, seed);
                        const fs::path cell_path = fs::path(out_dir) / "cells" / (name + ".json");
                        EvalRow row;
                        if (fs::exists(cell_path)) {
                            std::ifstream in(cell_path);
                            nlohmann::json j;
                            in >> j;
                            row = {j.at("origin").get<int>(), j.at("destination").get<int>(),
                                   j.at("multiplier").get<double>(),
                                   j.at("variant").get<std::string>(),
                                   j.at("seed").get<uint64_t>(), j.at("J").get<double>(),
                                   j.at("stderr").get<double>()};
                        } else {
                            const VariantSpec spec = variant_spec(variant);
                            PolicyConfig pc;
                            pc.embed_dim = config.embed_dim;
                            pc.num_layers = config.num_layers;
                            pc.num_heads = config.num_heads;
                            pc.fusion_multihead = config.fusion_multihead;
                            pc.residual_every_block = config.residual_every_block;
                            pc.ffn_mult = config.ffn_mult;
                            pc.variant = spec.architecture;
                            pc.num_edges = net.num_edges();
                            pc.num_nodes = net.num_nodes;
                            pc.budget_norm = t_let;
                            const int max_steps = config.train.max_steps > 0
                                                      ? config.train.max_steps
                                                      : 4 * net.num_nodes;
                            pc.max_history_len = max_steps + 1;

                            const uint64_t cell_tag =
                                mix64(uint64_t(od[0]) * 131 + od[1]) ^
                                mix64(uint64_t(std::llround(mult * 1e6))) ^
                                mix64(std::hash<std::string>{}(variant));
                            TrainConfig tc = config.train;
                            tc.estimator = spec.estimator;
                            tc.seed = derive_seed(seed, kCellTrainTag, cell_tag);
                            tc.final_eval_samples = 0;  // paired evaluation happens below

                            PolicyNetwork policy(pc, derive_seed(seed, kCellInitTag, cell_tag));
                            train(net, od[0], od[1], budget, tc, policy);
                            EvalOutcome ev = sota_probability(
                                policy, net, od[0], od[1], budget, config.eval_samples,
                                od_eval_seed, false, 10, max_steps, config.train.workers);

                            row = {od[0], od[1], mult, variant, seed, ev.j, ev.stderr_};
                            nlohmann::json cj = {
                                {"origin", row.origin},   {"destination", row.destination},
                                {"multiplier", row.multiplier}, {"variant", row.variant},
                                {"seed", row.seed},       {"J", row.j},
                                {"stderr", row.stderr_},  {"budget", budget},
                                {"t_let", let.t_let}};
                            std::ofstream out(cell_path);
                            out << cj.dump(1) << "\n";
                        }
                        report.rows.push_back(std::move(row));
                    }
                }
            }
        }
    };

    try {
        run_cells();
    } catch (...) {
        emit_report(report, (fs::path(out_dir) / "report.csv").string());
        throw;
    }
    emit_report(report, (fs::path(out_dir) / "report.csv").string());
    return report;
}

void emit_curve(const ConvergenceCurve& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open for writing: " + path);
    out << "iteration,J_mean,J_std,wallclock_s\n";
    for (const auto& p : curve.points)
        out << p.iteration << "," << format_double(p.j_mean) << ","
            << format_double(p.j_std) << "," << format_double(p.wallclock_s) << "\n";
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ParseError("bad number in CSV: " + s);
    return v;
}

template <typename T>
T parse_int(const std::string& s) {
    T v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ParseError("bad integer in CSV: " + s);
    return v;
}

}  // namespace

ConvergenceCurve parse_curve_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open curve file: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "iteration,J_mean,J_std,wallclock_s")
        throw ParseError("unexpected curve header in " + path);
    ConvergenceCurve curve;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 4) throw ParseError("bad curve row in " + path);
        curve.points.push_back({int(parse_double(f[0])), parse_double(f[1]),
                                parse_double(f[2]), parse_double(f[3])});
    }
    return curve;
}

void emit_report(const EvalReport& report, const std::string& csv_path) {
    std::ofstream out(csv_path);
    if (!out) throw ParseError("cannot open for writing: " + csv_path);
    out << "origin,destination,multiplier,variant,seed,J,stderr\n";
    for (const auto& r : report.rows)
        out << r.origin << "," << r.destination << "," << format_double(r.multiplier)
            << "," << r.variant << "," << r.seed << "," << format_double(r.j) << ","
            << format_double(r.stderr_) << "\n";

    nlohmann::json side = {{"config_hash", report.config_hash},
                           {"created", report.created},
                           {"config", report.config_echo},
                           {"rows", report.rows.size()}};
    std::ofstream sidecar(csv_path + ".json");
    sidecar << side.dump(1) << "\n";
}

std::vector<EvalRow> parse_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open report file: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "origin,destination,multiplier,variant,seed,J,stderr")
        throw ParseError("unexpected report header in " + path);
    std::vector<EvalRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 7) throw ParseError("bad report row in " + path);
        EvalRow r;
        r.origin = parse_int<int>(f[0]);
        r.destination = parse_int<int>(f[1]);
        r.multiplier = parse_double(f[2]);
        r.variant = f[3];
        r.seed = parse_int<uint64_t>(f[4]);
        r.j = parse_double(f[5]);
        r.stderr_ = parse_double(f[6]);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace sota
