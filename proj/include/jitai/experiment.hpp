#pragma once

// Experiment orchestration behind the CLI: declarative config with layered
// defaults, seed derivation per (algorithm, replicate), replicate fan-out
// across worker threads, and the file layout every command reads and writes.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "jitai/io.hpp"
#include "jitai/simulator.hpp"

namespace jitai {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct ExperimentConfig {
    int setting = 1;
    std::vector<AlgorithmKind> algorithms = {AlgorithmKind::Simple, AlgorithmKind::Ls4l2};
    std::map<AlgorithmKind, int> replicates = {{AlgorithmKind::Simple, 50},
                                               {AlgorithmKind::Ls4l2, 50},
                                               {AlgorithmKind::Complicated, 5}};
    std::uint64_t master_seed = 1;
    std::filesystem::path out_dir = "runs/out";
    CovariateSchema schema = CovariateSchema::default_trial_schema();
    TrialConfig trial;
    SamplerConfig sampler;
    SpecConfig spec;
    PriorSpec prior;
    ClipBounds clip;
    ImputationConfig imputation;
    std::string coefficients_file;
    std::string log_format = "csv";
    int threads = 0;  // 0 = hardware concurrency

    void validate() const {
        if (setting != 1 && setting != 2) throw ConfigError("setting: must be 1 or 2");
        if (algorithms.empty()) throw ConfigError("algorithms: need at least one");
        for (auto a : algorithms) {
            auto it = replicates.find(a);
            if (it == replicates.end() || it->second < 1) {
                throw ConfigError(std::string("replicates.") + algorithm_name(a) +
                                  ": must be >= 1");
            }
        }
        if (log_format != "csv" && log_format != "jsonl") {
            throw ConfigError("log_format: must be 'csv' or 'jsonl'");
        }
        try {
            trial.validate(schema);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("trial: ") + e.what());
        }
        try {
            sampler.validate_for_policy();
        } catch (const std::exception& e) {
            throw ConfigError(std::string("sampler: ") + e.what());
        }
        try {
            spec.validate();
            clip.validate();
            prior.validate();
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    }

    LearnerSetup learner_setup() const { return {spec, prior, sampler, clip, imputation}; }

    std::uint64_t replicate_seed(AlgorithmKind algo, int replicate) const {
        return derive_seed(master_seed, algorithm_name(algo),
                           static_cast<std::uint64_t>(replicate));
    }
    std::uint64_t coefficients_seed() const {
        return derive_seed(master_seed, "coefficients", static_cast<std::uint64_t>(setting));
    }

    nlohmann::ordered_json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& doc);
};

namespace experiment_detail {

template <typename T>
T field(const nlohmann::json& j, const std::string& path, const T& fallback) {
    if (!j.contains(path)) return fallback;
    try {
        return j.at(path).get<T>();
    } catch (const std::exception&) {
        throw ConfigError(path + ": wrong type");
    }
}

inline void reject_unknown_keys(const nlohmann::json& j, const std::string& prefix,
                                std::initializer_list<const char*> known) {
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known) {
            if (key == k) ok = true;
        }
        if (!ok) throw ConfigError(prefix + key + ": unknown field");
    }
}

}  // namespace experiment_detail

inline nlohmann::ordered_json ExperimentConfig::to_json() const {
    nlohmann::ordered_json doc;
    doc["setting"] = setting;
    doc["algorithms"] = nlohmann::ordered_json::array();
    for (auto a : algorithms) doc["algorithms"].push_back(algorithm_name(a));
    doc["replicates"] = nlohmann::ordered_json::object();
    for (const auto& [a, n] : replicates) doc["replicates"][algorithm_name(a)] = n;
    doc["master_seed"] = master_seed;
    doc["out_dir"] = out_dir.string();
    doc["schema"] = schema_to_json(schema);
    nlohmann::ordered_json jt;
    jt["participants"] = trial.participants;
    jt["study_length_days"] = trial.study_length_days;
    jt["enrollment_window_days"] = trial.enrollment_window_days;
    jt["decisions_per_week"] = {trial.decisions_per_week_min, trial.decisions_per_week_max};
    jt["update_days"] = trial.update_days;
    jt["initial_send_prob"] = trial.initial_send_prob;
    nlohmann::ordered_json jw = nlohmann::ordered_json::object();
    for (const auto& [var, weights] : trial.context_weights) {
        const auto v = schema.variable_index(var);
        nlohmann::ordered_json jv = nlohmann::ordered_json::object();
        for (std::size_t l = 0; l < weights.size(); ++l) {
            jv[schema.variable(v).levels[l]] = weights[l];
        }
        jw[var] = std::move(jv);
    }
    jt["context_weights"] = std::move(jw);
    doc["trial"] = std::move(jt);
    doc["sampler"] = {{"chains", sampler.chains},
                      {"warmup_draws", sampler.warmup_draws},
                      {"kept_draws", sampler.kept_draws},
                      {"target_acceptance", sampler.target_acceptance},
                      {"max_depth", sampler.max_depth}};
    doc["spec"] = {{"min_cell_size", spec.min_cell_size},
                   {"max_interaction_terms", spec.max_interaction_terms},
                   {"enable_baseline_rules", spec.enable_baseline_rules}};
    doc["prior"] = {{"family", prior.family == PriorFamily::Gaussian ? "gaussian" : "student_t7"},
                    {"scale_by_order", prior.scale_by_order},
                    {"random_scale_df", prior.random_scale_df}};
    doc["clip"] = {{"lower", clip.lower}, {"upper", clip.upper}};
    nlohmann::ordered_json ji;
    ji["scenario2_mode"] = imputation.mode == Scenario2Mode::Nearest ? "nearest" : "average";
    ji["nearest_levels"] = nlohmann::ordered_json::object();
    for (const auto& [var, m] : imputation.nearest_level) {
        for (const auto& [from, to] : m) ji["nearest_levels"][var][from] = to;
    }
    doc["imputation"] = std::move(ji);
    doc["coefficients_file"] = coefficients_file;
    doc["log_format"] = log_format;
    doc["threads"] = threads;
    return doc;
}

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& doc) {
    using experiment_detail::field;
    experiment_detail::reject_unknown_keys(
        doc, "",
        {"setting", "algorithms", "replicates", "master_seed", "out_dir", "schema", "trial",
         "sampler", "spec", "prior", "clip", "imputation", "coefficients_file", "log_format",
         "threads"});

    ExperimentConfig cfg;
    cfg.setting = field(doc, "setting", cfg.setting);
    if (doc.contains("algorithms")) {
        cfg.algorithms.clear();
        for (const auto& a : doc.at("algorithms")) {
            try {
                cfg.algorithms.push_back(algorithm_from_name(a.get<std::string>()));
            } catch (const std::exception& e) {
                throw ConfigError(std::string("algorithms: ") + e.what());
            }
        }
    }
    if (doc.contains("replicates")) {
        const auto& jr = doc.at("replicates");
        if (jr.is_number_integer()) {
            for (auto& [_, n] : cfg.replicates) n = jr.get<int>();
        } else if (jr.is_object()) {
            for (const auto& [key, value] : jr.items()) {
                try {
                    cfg.replicates[algorithm_from_name(key)] = value.get<int>();
                } catch (const std::exception& e) {
                    throw ConfigError(std::string("replicates: ") + e.what());
                }
            }
        } else {
            throw ConfigError("replicates: must be an integer or an object");
        }
    }
    cfg.master_seed = field<std::uint64_t>(doc, "master_seed", cfg.master_seed);
    cfg.out_dir = field<std::string>(doc, "out_dir", cfg.out_dir.string());
    if (doc.contains("schema")) {
        try {
            cfg.schema = schema_from_json(doc.at("schema"));
        } catch (const std::exception& e) {
            throw ConfigError(std::string("schema: ") + e.what());
        }
    }
    if (doc.contains("trial")) {
        const auto& jt = doc.at("trial");
        experiment_detail::reject_unknown_keys(
            jt, "trial.",
            {"participants", "study_length_days", "enrollment_window_days", "decisions_per_week",
             "update_days", "initial_send_prob", "context_weights"});
        cfg.trial.participants = field(jt, "participants", cfg.trial.participants);
        cfg.trial.study_length_days = field(jt, "study_length_days", cfg.trial.study_length_days);
        cfg.trial.enrollment_window_days =
            field(jt, "enrollment_window_days", cfg.trial.enrollment_window_days);
        if (jt.contains("decisions_per_week")) {
            const auto r = jt.at("decisions_per_week").get<std::vector<int>>();
            if (r.size() != 2) throw ConfigError("trial.decisions_per_week: need [min, max]");
            cfg.trial.decisions_per_week_min = r[0];
            cfg.trial.decisions_per_week_max = r[1];
        }
        cfg.trial.update_days = field(jt, "update_days", cfg.trial.update_days);
        cfg.trial.initial_send_prob = field(jt, "initial_send_prob", cfg.trial.initial_send_prob);
        if (jt.contains("context_weights")) {
            for (const auto& [var, jv] : jt.at("context_weights").items()) {
                std::size_t v;
                try {
                    v = cfg.schema.variable_index(var);
                } catch (const std::exception& e) {
                    throw ConfigError(std::string("trial.context_weights: ") + e.what());
                }
                std::vector<double> weights(cfg.schema.variable(v).levels.size(), 0.0);
                for (const auto& [level, w] : jv.items()) {
                    try {
                        weights.at(cfg.schema.level_index(v, level)) = w.get<double>();
                    } catch (const std::exception& e) {
                        throw ConfigError("trial.context_weights." + var + ": " + e.what());
                    }
                }
                cfg.trial.context_weights[var] = std::move(weights);
            }
        }
    }
    if (doc.contains("sampler")) {
        const auto& js = doc.at("sampler");
        experiment_detail::reject_unknown_keys(
            js, "sampler.",
            {"chains", "warmup_draws", "kept_draws", "target_acceptance", "max_depth"});
        cfg.sampler.chains = field(js, "chains", cfg.sampler.chains);
        cfg.sampler.warmup_draws = field(js, "warmup_draws", cfg.sampler.warmup_draws);
        cfg.sampler.kept_draws = field(js, "kept_draws", cfg.sampler.kept_draws);
        cfg.sampler.target_acceptance = field(js, "target_acceptance", cfg.sampler.target_acceptance);
        cfg.sampler.max_depth = field(js, "max_depth", cfg.sampler.max_depth);
    }
    if (doc.contains("spec")) {
        const auto& js = doc.at("spec");
        experiment_detail::reject_unknown_keys(
            js, "spec.", {"min_cell_size", "max_interaction_terms", "enable_baseline_rules"});
        cfg.spec.min_cell_size = field(js, "min_cell_size", cfg.spec.min_cell_size);
        cfg.spec.max_interaction_terms =
            field(js, "max_interaction_terms", cfg.spec.max_interaction_terms);
        cfg.spec.enable_baseline_rules =
            field(js, "enable_baseline_rules", cfg.spec.enable_baseline_rules);
    }
    if (doc.contains("prior")) {
        const auto& jp = doc.at("prior");
        experiment_detail::reject_unknown_keys(jp, "prior.",
                                               {"family", "scale_by_order", "random_scale_df"});
        const auto family = field<std::string>(jp, "family", "student_t7");
        if (family == "gaussian") {
            cfg.prior.family = PriorFamily::Gaussian;
        } else if (family == "student_t7") {
            cfg.prior.family = PriorFamily::StudentT7;
        } else {
            throw ConfigError("prior.family: must be 'student_t7' or 'gaussian'");
        }
        cfg.prior.scale_by_order = field(jp, "scale_by_order", cfg.prior.scale_by_order);
        cfg.prior.random_scale_df = field(jp, "random_scale_df", cfg.prior.random_scale_df);
    }
    if (doc.contains("clip")) {
        cfg.clip.lower = field(doc.at("clip"), "lower", cfg.clip.lower);
        cfg.clip.upper = field(doc.at("clip"), "upper", cfg.clip.upper);
    }
    if (doc.contains("imputation")) {
        const auto& ji = doc.at("imputation");
        experiment_detail::reject_unknown_keys(ji, "imputation.",
                                               {"scenario2_mode", "nearest_levels"});
        const auto mode = field<std::string>(ji, "scenario2_mode", "average");
        if (mode == "nearest") {
            cfg.imputation.mode = Scenario2Mode::Nearest;
        } else if (mode == "average") {
            cfg.imputation.mode = Scenario2Mode::Average;
        } else {
            throw ConfigError("imputation.scenario2_mode: must be 'average' or 'nearest'");
        }
        if (ji.contains("nearest_levels")) {
            for (const auto& [var, jm] : ji.at("nearest_levels").items()) {
                for (const auto& [from, to] : jm.items()) {
                    cfg.imputation.nearest_level[var][from] = to.get<std::string>();
                }
            }
        }
    }
    cfg.coefficients_file = field<std::string>(doc, "coefficients_file", cfg.coefficients_file);
    cfg.log_format = field<std::string>(doc, "log_format", cfg.log_format);
    cfg.threads = field(doc, "threads", cfg.threads);
    return cfg;
}

// --- simulate ---------------------------------------------------------------

struct SimulateOutcome {
    std::vector<std::pair<std::string, std::string>> outputs;  // (relative path, checksum)
    int aborted_replicates = 0;
};

// Runs every (algorithm, replicate) pair on worker threads and writes one
// decision log plus one failure report per pair, a coefficients file, and the
// manifest. Output bytes are independent of thread scheduling.
inline SimulateOutcome run_simulate(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    std::filesystem::create_directories(cfg.out_dir);

    GenerativeModel model;
    RunManifest manifest;
    if (cfg.coefficients_file.empty()) {
        model = sample_coefficients(cfg.setting, cfg.schema, cfg.coefficients_seed());
    } else {
        model = read_coefficients_csv(cfg.coefficients_file, cfg.setting, cfg.schema);
        manifest.input_checksums.emplace_back(cfg.coefficients_file,
                                              file_checksum_hex(cfg.coefficients_file));
    }
    {
        std::ostringstream os;
        write_coefficients_csv(os, model);
        write_file_atomic(cfg.out_dir / "coefficients.csv", os.str());
    }

    struct Job {
        AlgorithmKind algo;
        int replicate;
    };
    std::vector<Job> jobs;
    for (auto algo : cfg.algorithms) {
        for (int r = 0; r < cfg.replicates.at(algo); ++r) jobs.push_back({algo, r});
    }

    SimulateOutcome outcome;
    outcome.outputs.emplace_back("coefficients.csv",
                                 file_checksum_hex(cfg.out_dir / "coefficients.csv"));
    std::mutex mu;
    std::atomic<std::size_t> next{0};
    std::atomic<int> aborted{0};
    const auto learner = cfg.learner_setup();
    const unsigned n_threads = cfg.threads > 0
                                   ? static_cast<unsigned>(cfg.threads)
                                   : std::max(1u, std::thread::hardware_concurrency());

    auto worker = [&]() {
        for (;;) {
            const std::size_t j = next.fetch_add(1);
            if (j >= jobs.size()) return;
            const auto [algo, replicate] = jobs[j];
            TrialConfig trial = cfg.trial;
            trial.seed = cfg.replicate_seed(algo, replicate);
            const auto result = simulate_trial(trial, algo, model, learner, cfg.schema);
            if (result.aborted) aborted.fetch_add(1);

            char tag[32];
            std::snprintf(tag, sizeof(tag), "replicate_%03d", replicate);
            const auto rel_dir = std::filesystem::path(algorithm_name(algo));
            const auto log_rel = rel_dir / (std::string(tag) + "." + cfg.log_format);
            const auto fail_rel = rel_dir / (std::string(tag) + "_failures.json");

            std::ostringstream log_os;
            if (cfg.log_format == "jsonl") {
                write_decision_log_jsonl(log_os, result.records, cfg.schema);
            } else {
                write_decision_log_csv(log_os, result.records, cfg.schema);
            }
            auto failures = failure_report_to_json(result.failures);
            failures["aborted"] = result.aborted;
            failures["abort_reason"] = result.abort_reason;

            std::lock_guard lk(mu);
            write_file_atomic(cfg.out_dir / log_rel, log_os.str());
            write_file_atomic(cfg.out_dir / fail_rel, failures.dump(2) + "\n");
            outcome.outputs.emplace_back(log_rel.string(),
                                         file_checksum_hex(cfg.out_dir / log_rel));
            outcome.outputs.emplace_back(fail_rel.string(),
                                         file_checksum_hex(cfg.out_dir / fail_rel));
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    outcome.aborted_replicates = aborted.load();

    std::sort(outcome.outputs.begin(), outcome.outputs.end());
    manifest.command = "simulate";
    manifest.seed = cfg.master_seed;
    manifest.resolved_config = cfg.to_json();
    manifest.output_checksums = outcome.outputs;
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    append_manifest(cfg.out_dir, manifest);
    return outcome;
}

// --- regret -----------------------------------------------------------------

// Recovers the simulate configuration from the directory manifest.
inline ExperimentConfig config_from_manifest(const std::filesystem::path& dir,
                                             const std::string& command = "simulate") {
    const auto path = dir / "manifest.json";
    if (!std::filesystem::exists(path)) {
        throw std::runtime_error("no manifest.json in " + dir.string());
    }
    const auto doc = nlohmann::json::parse(read_file(path));
    for (auto it = doc.at("entries").rbegin(); it != doc.at("entries").rend(); ++it) {
        if (it->at("command") == command) return ExperimentConfig::from_json(it->at("config"));
    }
    throw std::runtime_error("manifest in " + dir.string() + " has no '" + command + "' entry");
}

struct RegretOutcome {
    std::vector<std::pair<std::string, std::string>> outputs;
    std::vector<std::string> warnings;
};

// Aggregates each algorithm's replicate logs into a plot-ready mean + IQR
// curve, truncating to the shortest replicate (recorded as a warning).
inline RegretOutcome run_regret(const std::filesystem::path& log_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = config_from_manifest(log_dir);

    RegretOutcome outcome;
    for (auto algo : cfg.algorithms) {
        std::vector<RegretTrace> traces;
        std::size_t min_len = SIZE_MAX, max_len = 0;
        for (int r = 0; r < cfg.replicates.at(algo); ++r) {
            char tag[32];
            std::snprintf(tag, sizeof(tag), "replicate_%03d", r);
            const auto path = log_dir / algorithm_name(algo) /
                              (std::string(tag) + "." + cfg.log_format);
            std::ifstream is(path);
            if (!is) throw std::runtime_error("missing decision log " + path.string());
            const auto records = cfg.log_format == "jsonl"
                                     ? read_decision_log_jsonl(is, cfg.schema)
                                     : read_decision_log_csv(is, cfg.schema);
            traces.push_back(cumulative_regret(records));
            min_len = std::min(min_len, traces.back().cumulative.size());
            max_len = std::max(max_len, traces.back().cumulative.size());
        }
        if (min_len != max_len) {
            outcome.warnings.push_back(std::string(algorithm_name(algo)) +
                                       ": replicate lengths differ (" + std::to_string(min_len) +
                                       ".." + std::to_string(max_len) + "), truncated to " +
                                       std::to_string(min_len));
        }
        const auto curve = aggregate_replicates(traces);
        std::ostringstream os;
        write_regret_curve_csv(os, curve);
        const auto rel = std::string("regret_") + algorithm_name(algo) + ".csv";
        write_file_atomic(log_dir / rel, os.str());
        outcome.outputs.emplace_back(rel, file_checksum_hex(log_dir / rel));
    }

    RunManifest manifest;
    manifest.command = "regret";
    manifest.seed = cfg.master_seed;
    manifest.resolved_config = cfg.to_json();
    manifest.output_checksums = outcome.outputs;
    manifest.warnings = outcome.warnings;
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    append_manifest(log_dir, manifest);
    return outcome;
}

// --- fit / policy-table / calibrate ------------------------------------------

enum class FitModelChoice { Adaptive, Simple, Complicated };

// Fits a decision log and writes the posterior bundle: draw matrix CSV,
// diagnostics JSON, the archived model spec, and a metadata file binding the
// schema, observed levels, and participant list.
inline FitHealth run_fit(const std::filesystem::path& data_file, const ExperimentConfig& cfg,
                         const std::filesystem::path& out_dir,
                         FitModelChoice choice = FitModelChoice::Adaptive) {
    const auto t0 = std::chrono::steady_clock::now();
    std::ifstream is(data_file);
    if (!is) throw std::runtime_error("cannot open " + data_file.string());
    const bool jsonl = data_file.extension() == ".jsonl";
    const auto records = jsonl ? read_decision_log_jsonl(is, cfg.schema)
                               : read_decision_log_csv(is, cfg.schema);

    ModelSpec spec;
    switch (choice) {
        case FitModelChoice::Simple: spec = simple_model_spec(cfg.schema); break;
        case FitModelChoice::Complicated: spec = maximal_model_spec(cfg.schema); break;
        case FitModelChoice::Adaptive: spec = build_model_spec(records, cfg.schema, cfg.spec); break;
    }
    auto sampler = cfg.sampler;
    sampler.seed = cfg.master_seed;
    auto [draws, health] = fit_posterior(records, spec, cfg.schema, cfg.prior, sampler);

    std::filesystem::create_directories(out_dir);
    RunManifest manifest;
    manifest.command = "fit";
    manifest.seed = sampler.seed;
    manifest.resolved_config = cfg.to_json();
    manifest.input_checksums.emplace_back(data_file.string(), file_checksum_hex(data_file));

    write_file_atomic(out_dir / "model_spec.json", model_spec_to_json(spec).dump(2) + "\n");
    if (health.ok()) {
        std::ostringstream os;
        write_posterior_csv(os, draws);
        write_file_atomic(out_dir / "posterior.csv", os.str());
    }
    write_file_atomic(out_dir / "diagnostics.json",
                      diagnostics_to_json(draws, health).dump(2) + "\n");

    const auto observed = ObservedLevels::from_records(records, cfg.schema);
    nlohmann::ordered_json meta;
    meta["schema"] = schema_to_json(cfg.schema);
    meta["rows"] = records.size();
    nlohmann::ordered_json jo = nlohmann::ordered_json::object();
    for (std::size_t v = 0; v < cfg.schema.size(); ++v) {
        auto levels = nlohmann::ordered_json::array();
        for (auto l : observed.by_variable[v]) levels.push_back(cfg.schema.variable(v).levels[l]);
        jo[cfg.schema.variable(v).name] = std::move(levels);
    }
    meta["observed_levels"] = std::move(jo);
    meta["participants"] = draws.participant_ids;
    write_file_atomic(out_dir / "fit_meta.json", meta.dump(2) + "\n");

    for (const char* name : {"model_spec.json", "posterior.csv", "diagnostics.json",
                             "fit_meta.json"}) {
        if (std::filesystem::exists(out_dir / name)) {
            manifest.output_checksums.emplace_back(name, file_checksum_hex(out_dir / name));
        }
    }
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    append_manifest(out_dir, manifest);
    return health;
}

// Rebuilds PosteriorDraws from a fit bundle. Diagnostics are not reloaded;
// the caller checks the stored status.
inline std::pair<PosteriorDraws, ObservedLevels> read_posterior_bundle(
    const std::filesystem::path& fit_dir) {
    const auto meta = nlohmann::json::parse(read_file(fit_dir / "fit_meta.json"));
    const auto diag = nlohmann::json::parse(read_file(fit_dir / "diagnostics.json"));
    if (diag.at("status") != "ok") {
        throw std::runtime_error("fit bundle " + fit_dir.string() + " has status '" +
                                 diag.at("status").get<std::string>() + "'");
    }
    const auto schema = schema_from_json(meta.at("schema"));
    const auto spec = model_spec_from_json(
        nlohmann::json::parse(read_file(fit_dir / "model_spec.json")));

    PosteriorDraws draws;
    draws.spec = spec;
    draws.fixed_design = ExpandedDesign::build(spec, schema, TermScope::PopulationFixed);
    draws.random_design = ExpandedDesign::build(spec, schema, TermScope::ParticipantRandom);
    draws.n_fixed = draws.fixed_design.cols();
    draws.participant_ids = meta.at("participants").get<std::vector<std::int64_t>>();

    std::ifstream is(fit_dir / "posterior.csv");
    if (!is) throw std::runtime_error("missing posterior.csv in " + fit_dir.string());
    std::string line;
    std::getline(is, line);
    draws.param_names = io_detail::split_csv_line(line);
    std::vector<std::vector<double>> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto fields = io_detail::split_csv_line(line);
        if (fields.size() != draws.param_names.size()) {
            throw std::runtime_error("posterior.csv: inconsistent row width");
        }
        std::vector<double> row(fields.size());
        for (std::size_t j = 0; j < fields.size(); ++j) row[j] = io_detail::parse_double(fields[j]);
        rows.push_back(std::move(row));
    }
    draws.draws.resize(static_cast<Eigen::Index>(rows.size()),
                       static_cast<Eigen::Index>(draws.param_names.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            draws.draws(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    // distinct random terms give the scale-column count
    std::vector<std::size_t> seen;
    for (const auto& col : draws.random_design.columns()) {
        bool found = false;
        for (auto t : seen) found = found || t == col.term_index;
        if (!found) seen.push_back(col.term_index);
    }
    draws.n_scales = seen.size();

    ObservedLevels observed;
    observed.by_variable.resize(schema.size());
    for (std::size_t v = 0; v < schema.size(); ++v) {
        for (const auto& level : meta.at("observed_levels").at(schema.variable(v).name)) {
            observed.by_variable[v].insert(static_cast<std::uint32_t>(
                schema.level_index(v, level.get<std::string>())));
        }
    }
    return {std::move(draws), std::move(observed)};
}

// Deployable probabilistic mapping from a fit bundle.
inline void run_policy_table(const std::filesystem::path& fit_dir,
                             const std::filesystem::path& out_csv, const ClipBounds& clip,
                             const ImputationConfig& imputation,
                             std::optional<std::int64_t> participant = std::nullopt) {
    const auto t0 = std::chrono::steady_clock::now();
    auto [draws, observed] = read_posterior_bundle(fit_dir);
    const auto target = participant ? PredictTarget::participant(*participant)
                                    : PredictTarget::population_level();
    const auto table = build_policy_table(draws, draws.fixed_design.schema(), observed, clip,
                                          target, imputation);
    std::ostringstream os;
    write_policy_table_csv(os, table);
    write_file_atomic(out_csv, os.str());

    RunManifest manifest;
    manifest.command = "policy-table";
    manifest.input_checksums.emplace_back((fit_dir / "posterior.csv").string(),
                                          file_checksum_hex(fit_dir / "posterior.csv"));
    manifest.output_checksums.emplace_back(out_csv.filename().string(), file_checksum_hex(out_csv));
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    append_manifest(out_csv.parent_path().empty() ? "." : out_csv.parent_path(), manifest);
}

// Calibration monitor over one decision log.
inline CalibrationReport run_calibrate(const std::filesystem::path& log_file,
                                       const ExperimentConfig& cfg,
                                       const std::filesystem::path& out_csv,
                                       double bin_width = 0.05) {
    const auto t0 = std::chrono::steady_clock::now();
    std::ifstream is(log_file);
    if (!is) throw std::runtime_error("cannot open " + log_file.string());
    const bool jsonl = log_file.extension() == ".jsonl";
    const auto records = jsonl ? read_decision_log_jsonl(is, cfg.schema)
                               : read_decision_log_csv(is, cfg.schema);
    const auto report = calibration_report(records, bin_width);
    std::ostringstream os;
    write_calibration_csv(os, report);
    write_file_atomic(out_csv, os.str());

    RunManifest manifest;
    manifest.command = "calibrate";
    manifest.input_checksums.emplace_back(log_file.string(), file_checksum_hex(log_file));
    manifest.output_checksums.emplace_back(out_csv.filename().string(), file_checksum_hex(out_csv));
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    append_manifest(out_csv.parent_path().empty() ? "." : out_csv.parent_path(), manifest);
    return report;
}

}  // namespace jitai
