// Command-line front end: simulate, fit, policy-table, calibrate, regret.
// Exit codes: 0 success, 1 validation error, 2 learner breakage.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "jitai/experiment.hpp"

namespace {

jitai::ExperimentConfig load_config(const std::string& config_path) {
    if (config_path.empty()) return {};
    std::ifstream is(config_path);
    if (!is) throw jitai::ConfigError("cannot open config file " + config_path);
    nlohmann::json doc;
    try {
        is >> doc;
    } catch (const std::exception& e) {
        throw jitai::ConfigError(std::string("config parse: ") + e.what());
    }
    return jitai::ExperimentConfig::from_json(doc);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contextual-bandit trial engine"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(jitai::kVersion));

    std::string config_path;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> setting;
    std::vector<std::string> algorithms;
    std::optional<int> replicates;
    std::optional<int> threads;
    std::string log_format;

    auto* simulate = app.add_subcommand("simulate", "run synthetic trials and write decision logs");
    simulate->add_option("--config", config_path, "experiment config JSON");
    simulate->add_option("--seed", seed, "master seed override");
    simulate->add_option("--out", out, "output directory");
    simulate->add_option("--setting", setting, "generative setting (1 or 2)");
    simulate->add_option("--algorithm", algorithms, "algorithms to run (repeatable)");
    simulate->add_option("--replicates", replicates, "replicate count for every algorithm");
    simulate->add_option("--threads", threads, "worker threads (0 = hardware)");
    simulate->add_option("--log-format", log_format, "csv or jsonl");

    std::string data_file;
    std::string fit_model = "adaptive";
    auto* fit = app.add_subcommand("fit", "fit the posterior for one decision log");
    fit->add_option("--data", data_file, "decision log (csv or jsonl)")->required();
    fit->add_option("--config", config_path, "experiment config JSON");
    fit->add_option("--seed", seed, "sampler seed override");
    fit->add_option("--out", out, "output bundle directory")->required();
    fit->add_option("--model", fit_model, "adaptive, simple, or complicated");

    std::string fit_dir;
    std::optional<std::int64_t> participant;
    auto* policy = app.add_subcommand("policy-table", "enumerate the probabilistic mapping");
    policy->add_option("--fit", fit_dir, "fit bundle directory")->required();
    policy->add_option("--config", config_path, "experiment config JSON");
    policy->add_option("--out", out, "output CSV path")->required();
    policy->add_option("--participant", participant, "participant-level table (default population)");

    std::string log_file;
    double bin_width = 0.05;
    auto* calibrate = app.add_subcommand("calibrate", "binned send-probability calibration");
    calibrate->add_option("--log", log_file, "decision log")->required();
    calibrate->add_option("--config", config_path, "experiment config JSON");
    calibrate->add_option("--out", out, "output CSV path")->required();
    calibrate->add_option("--bin-width", bin_width, "bin width (default 0.05)");

    std::string logs_dir;
    auto* regret = app.add_subcommand("regret", "aggregate cumulative regret across replicates");
    regret->add_option("--logs", logs_dir, "simulate output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        auto cfg = load_config(config_path);
        if (seed) cfg.master_seed = *seed;
        if (setting) cfg.setting = *setting;
        if (!out.empty()) cfg.out_dir = out;
        if (!algorithms.empty()) {
            cfg.algorithms.clear();
            for (const auto& a : algorithms) cfg.algorithms.push_back(jitai::algorithm_from_name(a));
        }
        if (replicates) {
            for (auto& [_, n] : cfg.replicates) n = *replicates;
        }
        if (threads) cfg.threads = *threads;
        if (!log_format.empty()) cfg.log_format = log_format;

        if (simulate->parsed()) {
            const auto outcome = jitai::run_simulate(cfg);
            std::printf("wrote %zu files to %s\n", outcome.outputs.size(),
                        cfg.out_dir.string().c_str());
            if (outcome.aborted_replicates > 0) {
                std::fprintf(stderr, "%d replicate(s) aborted on learner breakage\n",
                             outcome.aborted_replicates);
                return 2;
            }
        } else if (fit->parsed()) {
            jitai::FitModelChoice choice = jitai::FitModelChoice::Adaptive;
            if (fit_model == "simple") {
                choice = jitai::FitModelChoice::Simple;
            } else if (fit_model == "complicated") {
                choice = jitai::FitModelChoice::Complicated;
            } else if (fit_model != "adaptive") {
                throw jitai::ConfigError("--model: must be adaptive, simple, or complicated");
            }
            const auto health = jitai::run_fit(data_file, cfg, out, choice);
            std::printf("fit status: %s\n", jitai::fit_status_name(health.status));
            if (!health.ok()) {
                for (const auto& o : health.offending) std::fprintf(stderr, "  %s\n", o.c_str());
                return 2;
            }
        } else if (policy->parsed()) {
            jitai::run_policy_table(fit_dir, out, cfg.clip, cfg.imputation, participant);
            std::printf("wrote %s\n", out.c_str());
        } else if (calibrate->parsed()) {
            jitai::run_calibrate(log_file, cfg, out, bin_width);
            std::printf("wrote %s\n", out.c_str());
        } else if (regret->parsed()) {
            const auto outcome = jitai::run_regret(logs_dir);
            for (const auto& w : outcome.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
            std::printf("wrote %zu regret curves to %s\n", outcome.outputs.size(),
                        logs_dir.c_str());
        }
    } catch (const jitai::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "invalid argument: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
