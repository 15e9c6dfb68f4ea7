// Command-line front end: network generation, oracle queries, training,
// evaluation, ablation sweeps and report assembly.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "sota/common.hpp"
#include "sota/eval.hpp"
#include "sota/network.hpp"
#include "sota/oracles.hpp"
#include "sota/policy.hpp"
#include "sota/rng.hpp"
#include "sota/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// SOTA_SEED overrides every seed in the run configuration
void apply_seed_env(sota::ExperimentConfig& config) {
    if (const char* env = std::getenv("SOTA_SEED")) {
        const uint64_t s = std::strtoull(env, nullptr, 10);
        config.train.seed = s;
        config.seeds = {s};
    }
}

sota::ExperimentConfig load_experiment_config(const std::string& path) {
    if (path.empty()) return sota::ExperimentConfig{};
    std::ifstream in(path);
    if (!in) throw sota::ParseError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw sota::ParseError(std::string("malformed config file: ") + e.what());
    }
    return sota::ExperimentConfig::from_json(j);
}

void write_json_output(const json& j, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << j.dump(1) << "\n";
    } else {
        std::ofstream out(out_path);
        if (!out) throw sota::ParseError("cannot open for writing: " + out_path);
        out << j.dump(1) << "\n";
    }
}

int run_gen(const std::string& kind, uint64_t seed, const std::string& out_path) {
    sota::StochasticNetwork net;
    if (kind == "synthetic")
        net = sota::build_synthetic();
    else if (kind == "sfn")
        net = sota::build_sfn(seed);
    else
        throw sota::ValidationError("gen: unknown network kind " + kind);
    sota::save_network(net, out_path);
    std::cout << "wrote " << out_path << " (" << net.num_nodes << " nodes, "
              << net.num_edges() << " edges)\n";
    return 0;
}

int run_oracle(double budget, double target, const std::string& out_path) {
    json j;
    if (target > 0.0) {
        const double t_star = sota::solve_budget_for_value(target);
        const sota::OracleResult res = sota::synthetic_upper_bound(t_star);
        j = {{"target", target},
             {"budget", t_star},
             {"value", res.value},
             {"method", res.method},
             {"error_estimate", res.error_estimate}};
    } else {
        const sota::OracleResult res = sota::synthetic_upper_bound(budget);
        j = {{"budget", budget},
             {"value", res.value},
             {"method", res.method},
             {"error_estimate", res.error_estimate}};
    }
    write_json_output(j, out_path);
    return 0;
}

int run_train(const std::string& network_path, const std::string& od_str,
              double budget_mult, double budget_abs, const std::string& config_path,
              const std::string& out_dir, const std::string& resume_path) {
    fs::create_directories(out_dir);

    if (!resume_path.empty()) {
        sota::TrainCheckpoint ck = sota::load_train_checkpoint(resume_path);
        sota::TrainResult res =
            sota::train(ck.net, ck.origin, ck.destination, ck.budget, ck.config, ck.policy,
                        out_dir, ck.iteration, ck.curve);
        sota::emit_curve(res.curve, out_dir + "/curve.csv");
        sota::save_train_checkpoint(out_dir + "/checkpoint_final.ckpt", ck.policy, ck.net,
                                    ck.origin, ck.destination, ck.budget, ck.config,
                                    ck.config.iterations, res.curve);
        json run = {{"origin", ck.origin},       {"destination", ck.destination},
                    {"budget", ck.budget},       {"final_J", res.final_j},
                    {"final_stderr", res.final_stderr},
                    {"resumed_from", resume_path}};
        write_json_output(run, out_dir + "/run.json");
        std::cout << "final J = " << res.final_j << " +- " << res.final_stderr << "\n";
        return 0;
    }

    sota::ExperimentConfig config = load_experiment_config(config_path);
    apply_seed_env(config);

    sota::StochasticNetwork net =
        sota::load_network_source(network_path, config.network_seed);
    int origin = -1, destination = -1;
    if (sscanf(od_str.c_str(), "%d,%d", &origin, &destination) != 2)
        throw sota::ValidationError("train: --od expects two node ids as A,B");

    const sota::LetResult let = sota::let_path(net, origin, destination);
    const double budget = budget_abs > 0.0 ? budget_abs : budget_mult * let.t_let;

    const sota::VariantSpec spec = sota::variant_spec(config.variants[0]);
    sota::PolicyConfig pc;
    pc.embed_dim = config.embed_dim;
    pc.num_layers = config.num_layers;
    pc.num_heads = config.num_heads;
    pc.fusion_multihead = config.fusion_multihead;
    pc.residual_every_block = config.residual_every_block;
    pc.ffn_mult = config.ffn_mult;
    pc.variant = spec.architecture;
    pc.num_edges = net.num_edges();
    pc.num_nodes = net.num_nodes;
    pc.budget_norm = std::max(let.t_let, 1.0);
    sota::TrainConfig tc = config.train;
    tc.estimator = spec.estimator;
    const int max_steps = tc.max_steps > 0 ? tc.max_steps : 4 * net.num_nodes;
    pc.max_history_len = max_steps + 1;

    sota::PolicyNetwork policy(pc, sota::derive_seed(tc.seed, 0x1217u));
    sota::TrainResult res = sota::train(net, origin, destination, budget, tc, policy, out_dir);

    sota::emit_curve(res.curve, out_dir + "/curve.csv");
    sota::save_train_checkpoint(out_dir + "/checkpoint_final.ckpt", policy, net, origin,
                                destination, budget, tc, tc.iterations, res.curve);
    json run = {{"origin", origin},
                {"destination", destination},
                {"t_let", let.t_let},
                {"budget", budget},
                {"variant", config.variants[0]},
                {"config_hash", config.config_hash()},
                {"final_J", res.final_j},
                {"final_stderr", res.final_stderr}};
    write_json_output(run, out_dir + "/run.json");
    std::cout << "final J = " << res.final_j << " +- " << res.final_stderr << "\n";
    return 0;
}

int run_eval(const std::string& checkpoint_path, int samples, uint64_t seed_arg,
             bool argmax, const std::string& out_path) {
    sota::TrainCheckpoint ck = sota::load_train_checkpoint(checkpoint_path);
    uint64_t seed = seed_arg != 0 ? seed_arg : sota::derive_seed(ck.config.seed, 0xE0A7u);
    if (const char* env = std::getenv("SOTA_SEED")) seed = std::strtoull(env, nullptr, 10);
    const sota::EvalOutcome ev =
        sota::sota_probability(ck.policy, ck.net, ck.origin, ck.destination, ck.budget,
                               samples, seed, argmax, 10, 0, ck.config.workers);
    json j = {{"J", ev.j},
              {"stderr", ev.stderr_},
              {"chunk_std", ev.chunk_std},
              {"samples", samples},
              {"seed", seed},
              {"argmax", argmax},
              {"origin", ck.origin},
              {"destination", ck.destination},
              {"budget", ck.budget}};
    write_json_output(j, out_path);
    return 0;
}

int run_ablate(const std::string& config_path, const std::string& out_dir) {
    sota::ExperimentConfig config = load_experiment_config(config_path);
    apply_seed_env(config);
    fs::create_directories(out_dir);
    sota::EvalReport report = sota::run_experiment(config, out_dir);
    std::cout << "wrote " << out_dir << "/report.csv (" << report.rows.size() << " rows)\n";
    return 0;
}

int run_report(const std::string& in_dir, const std::string& out_path) {
    sota::EvalReport report;
    const fs::path cells = fs::path(in_dir) / "cells";
    if (!fs::exists(cells)) throw sota::ValidationError("report: no cells under " + in_dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(cells))
        if (entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        std::ifstream in(f);
        json j;
        in >> j;
        report.rows.push_back({j.at("origin").get<int>(), j.at("destination").get<int>(),
                               j.at("multiplier").get<double>(),
                               j.at("variant").get<std::string>(),
                               j.at("seed").get<uint64_t>(), j.at("J").get<double>(),
                               j.at("stderr").get<double>()});
    }
    sota::emit_report(report, out_path);
    std::cout << "wrote " << out_path << " (" << report.rows.size() << " rows)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reliable routing on stochastic networks: on-time-arrival policy training"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen", "generate a benchmark network file");
    std::string gen_kind = "synthetic", gen_out = "network.json";
    uint64_t gen_seed = 1;
    gen->add_option("--network", gen_kind, "synthetic | sfn")->required();
    gen->add_option("--seed", gen_seed, "instance seed (sfn)");
    gen->add_option("--out", gen_out, "output path")->required();

    auto* oracle = app.add_subcommand("oracle", "query the five-node optimal-policy bound");
    double oracle_budget = 0.0, oracle_target = 0.0;
    std::string oracle_out;
    oracle->add_option("--budget", oracle_budget, "budget to evaluate the bound at");
    oracle->add_option("--target", oracle_target, "invert the bound to this probability");
    oracle->add_option("--out", oracle_out, "write JSON here instead of stdout");

    auto* train_cmd = app.add_subcommand("train", "train a routing policy");
    std::string train_net = "synthetic", train_od = "0,4", train_config, train_out = "run";
    std::string train_resume;
    double train_mult = 1.0, train_budget = 0.0;
    train_cmd->add_option("--network", train_net, "synthetic | sfn | path to network JSON");
    train_cmd->add_option("--od", train_od, "origin,destination node ids");
    train_cmd->add_option("--budget-mult", train_mult, "budget as multiple of t_LET");
    train_cmd->add_option("--budget", train_budget, "absolute budget (overrides multiplier)");
    train_cmd->add_option("--config", train_config, "experiment config JSON");
    train_cmd->add_option("--out", train_out, "output directory")->required();
    train_cmd->add_option("--resume", train_resume, "continue from a training checkpoint");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained checkpoint");
    std::string eval_ckpt, eval_out;
    int eval_samples = 10000;
    uint64_t eval_seed = 0;
    bool eval_argmax = false;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "training checkpoint")->required();
    eval_cmd->add_option("--samples", eval_samples, "evaluation realizations");
    eval_cmd->add_option("--seed", eval_seed, "evaluation seed (default: from checkpoint)");
    eval_cmd->add_flag("--argmax", eval_argmax, "greedy action selection");
    eval_cmd->add_option("--out", eval_out, "write JSON here instead of stdout");

    auto* ablate = app.add_subcommand("ablate", "run the full experiment grid");
    std::string ablate_config, ablate_out = "ablation";
    ablate->add_option("--config", ablate_config, "experiment config JSON")->required();
    ablate->add_option("--out", ablate_out, "output directory");

    auto* report = app.add_subcommand("report", "assemble cell results into a CSV report");
    std::string report_in, report_out = "report.csv";
    report->add_option("--in", report_in, "experiment directory")->required();
    report->add_option("--out", report_out, "output CSV path");

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return run_gen(gen_kind, gen_seed, gen_out);
        if (oracle->parsed()) {
            if (oracle_budget <= 0.0 && oracle_target <= 0.0)
                throw sota::ValidationError("oracle: provide --budget or --target");
            return run_oracle(oracle_budget, oracle_target, oracle_out);
        }
        if (train_cmd->parsed())
            return run_train(train_net, train_od, train_mult, train_budget, train_config,
                             train_out, train_resume);
        if (eval_cmd->parsed())
            return run_eval(eval_ckpt, eval_samples, eval_seed, eval_argmax, eval_out);
        if (ablate->parsed()) return run_ablate(ablate_config, ablate_out);
        if (report->parsed()) return run_report(report_in, report_out);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const sota::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const sota::ParseError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
