#pragma once

// Synthetic trial execution: staggered enrollment, 2-4 decision points per
// week, an 80% send probability before each participant's first update, and
// per-participant learner refits at the scheduled update days that refresh
// that participant's policy table.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "jitai/domain.hpp"
#include "jitai/evaluation.hpp"
#include "jitai/generative.hpp"
#include "jitai/learner.hpp"
#include "jitai/model_spec.hpp"
#include "jitai/policy.hpp"
#include "jitai/rng.hpp"

namespace jitai {

enum class AlgorithmKind { Simple, Ls4l2, Complicated };

inline const char* algorithm_name(AlgorithmKind a) {
    switch (a) {
        case AlgorithmKind::Simple: return "simple";
        case AlgorithmKind::Ls4l2: return "ls4l2";
        case AlgorithmKind::Complicated: return "complicated";
    }
    return "?";
}

inline AlgorithmKind algorithm_from_name(const std::string& s) {
    for (AlgorithmKind a :
         {AlgorithmKind::Simple, AlgorithmKind::Ls4l2, AlgorithmKind::Complicated}) {
        if (s == algorithm_name(a)) return a;
    }
    throw std::invalid_argument("unknown algorithm '" + s + "'");
}

struct TrialConfig {
    int participants = 20;
    int study_length_days = 168;
    int enrollment_window_days = 56;  // uniform stagger over the first 8 weeks
    int decisions_per_week_min = 2;
    int decisions_per_week_max = 4;
    std::vector<int> update_days = {kFirstUpdateDay, kSecondUpdateDay};
    double initial_send_prob = 0.8;
    // Per-variable level weights for context sampling; missing variables
    // default to uniform over the non-Unknown levels.
    std::map<std::string, std::vector<double>> context_weights;
    std::uint64_t seed = 0;

    void validate(const CovariateSchema& schema) const {
        if (participants < 1) throw std::invalid_argument("trial: participants must be >= 1");
        if (study_length_days < 1) throw std::invalid_argument("trial: study length must be >= 1");
        if (enrollment_window_days < 1) {
            throw std::invalid_argument("trial: enrollment window must be >= 1");
        }
        if (decisions_per_week_min < 1 || decisions_per_week_max < decisions_per_week_min) {
            throw std::invalid_argument("trial: bad decisions-per-week range");
        }
        if (!(initial_send_prob > 0.0 && initial_send_prob < 1.0)) {
            throw std::invalid_argument("trial: initial send probability must be in (0,1)");
        }
        for (std::size_t i = 1; i < update_days.size(); ++i) {
            if (update_days[i] <= update_days[i - 1]) {
                throw std::invalid_argument("trial: update days must strictly increase");
            }
        }
        for (const auto& [name, weights] : context_weights) {
            const auto v = schema.variable_index(name);
            if (weights.size() != schema.variable(v).levels.size()) {
                throw std::invalid_argument("trial: context weights for '" + name +
                                            "' must list one weight per level");
            }
            double total = 0.0;
            for (double w : weights) {
                if (w < 0.0) throw std::invalid_argument("trial: negative context weight");
                total += w;
            }
            if (total <= 0.0) throw std::invalid_argument("trial: zero-mass context weights");
        }
    }
};

struct LearnerSetup {
    SpecConfig spec_config;
    PriorSpec prior;
    SamplerConfig sampler;
    ClipBounds clip;
    ImputationConfig imputation;
};

struct TrialResult {
    std::vector<DecisionRecord> records;  // calendar order
    std::vector<UpdateExecution> executed_updates;
    std::vector<std::pair<std::int64_t, int>> expected_updates;
    FailureReport failures;
    bool aborted = false;
    std::string abort_reason;
};

inline std::vector<std::pair<std::int64_t, int>> expected_update_schedule(const TrialConfig& cfg) {
    std::vector<std::pair<std::int64_t, int>> out;
    for (int p = 0; p < cfg.participants; ++p) {
        for (int day : cfg.update_days) {
            if (day <= cfg.study_length_days) out.emplace_back(p, day);
        }
    }
    return out;
}

namespace sim_detail {

struct DecisionEvent {
    int calendar_day = 0;
    std::int64_t participant_id = 0;
    std::int64_t decision_index = 0;
    int days_in_study = 0;
    ContextVector context;
};

struct UpdateEvent {
    int calendar_day = 0;
    std::int64_t participant_id = 0;
    int scheduled_day = 0;
};

inline std::vector<double> level_weights(const TrialConfig& cfg, const CovariateSchema& schema,
                                         std::size_t var) {
    const auto& v = schema.variable(var);
    auto it = cfg.context_weights.find(v.name);
    if (it != cfg.context_weights.end()) return it->second;
    std::vector<double> w(v.levels.size(), 1.0);
    if (auto u = schema.unknown_index(var)) w[*u] = 0.0;
    return w;
}

}  // namespace sim_detail

// Runs one synthetic trial. The learner refits at each participant's update
// days: the data-adaptive algorithm pools all accrued records with
// participant-level deviations, the fixed reference algorithms fit the
// participant's own records. A broken fit aborts the trial with the failure
// report carrying the offending diagnostics.
inline TrialResult simulate_trial(const TrialConfig& cfg, AlgorithmKind algo,
                                  const GenerativeModel& model, const LearnerSetup& learner,
                                  const CovariateSchema& schema) {
    cfg.validate(schema);
    learner.sampler.validate_for_policy();
    learner.clip.validate();
    learner.spec_config.validate();

    // Schedules and contexts are drawn per participant up front so that the
    // interleaving of events cannot perturb their streams.
    std::vector<sim_detail::DecisionEvent> decisions;
    std::vector<sim_detail::UpdateEvent> updates;
    std::vector<std::vector<double>> weights;
    for (std::size_t v = 0; v < schema.size(); ++v) {
        weights.push_back(sim_detail::level_weights(cfg, schema, v));
    }

    for (int p = 0; p < cfg.participants; ++p) {
        Rng schedule_rng(derive_seed(cfg.seed, "schedule", static_cast<std::uint64_t>(p)));
        Rng context_rng(derive_seed(cfg.seed, "context", static_cast<std::uint64_t>(p)));
        const int enroll_day =
            static_cast<int>(schedule_rng.uniform_int(static_cast<std::uint64_t>(
                cfg.enrollment_window_days)));

        std::vector<int> days;
        const int weeks = (cfg.study_length_days + 6) / 7;
        for (int w = 0; w < weeks; ++w) {
            const auto span = static_cast<std::uint64_t>(cfg.decisions_per_week_max -
                                                         cfg.decisions_per_week_min + 1);
            const int count =
                cfg.decisions_per_week_min + static_cast<int>(schedule_rng.uniform_int(span));
            for (int k = 0; k < count; ++k) {
                const int day = 7 * w + static_cast<int>(schedule_rng.uniform_int(7));
                if (day < cfg.study_length_days) days.push_back(day);
            }
        }
        std::stable_sort(days.begin(), days.end());

        for (std::size_t i = 0; i < days.size(); ++i) {
            sim_detail::DecisionEvent ev;
            ev.calendar_day = enroll_day + days[i];
            ev.participant_id = p;
            ev.decision_index = static_cast<std::int64_t>(i);
            ev.days_in_study = days[i];
            ev.context.levels.reserve(schema.size());
            for (std::size_t v = 0; v < schema.size(); ++v) {
                ev.context.levels.push_back(
                    static_cast<std::uint32_t>(context_rng.categorical(weights[v])));
            }
            decisions.push_back(std::move(ev));
        }
        for (int day : cfg.update_days) {
            if (day <= cfg.study_length_days) {
                updates.push_back({enroll_day + day, p, day});
            }
        }
    }

    std::stable_sort(decisions.begin(), decisions.end(), [](const auto& a, const auto& b) {
        if (a.calendar_day != b.calendar_day) return a.calendar_day < b.calendar_day;
        if (a.participant_id != b.participant_id) return a.participant_id < b.participant_id;
        return a.decision_index < b.decision_index;
    });
    std::stable_sort(updates.begin(), updates.end(), [](const auto& a, const auto& b) {
        if (a.calendar_day != b.calendar_day) return a.calendar_day < b.calendar_day;
        return a.participant_id < b.participant_id;
    });

    TrialResult result;
    result.expected_updates = expected_update_schedule(cfg);
    Rng exec_rng(derive_seed(cfg.seed, "exec"));
    std::map<std::int64_t, PolicyTable> tables;

    std::size_t di = 0, ui = 0;
    auto next_is_update = [&]() {
        if (ui >= updates.size()) return false;
        if (di >= decisions.size()) return true;
        // Updates run at the end of their calendar day.
        return updates[ui].calendar_day < decisions[di].calendar_day;
    };

    while (di < decisions.size() || ui < updates.size()) {
        if (next_is_update()) {
            const auto& ev = updates[ui++];
            // Every algorithm learns from the records pooled across
            // participants; they differ in the model they fit to them.
            const std::vector<DecisionRecord>& fit_data = result.records;
            std::vector<DecisionRecord> own_data;
            for (const auto& r : fit_data) {
                if (r.participant_id == ev.participant_id) own_data.push_back(r);
            }

            ModelSpec spec;
            if (algo == AlgorithmKind::Simple) {
                spec = simple_model_spec(schema);
            } else if (algo == AlgorithmKind::Complicated) {
                spec = maximal_model_spec(schema);
            } else {
                // Model complexity from the updating participant's own data;
                // deviation terms mirror the admitted first-order structure
                // when the pooled fit spans several participants.
                spec = build_model_spec(own_data, schema, learner.spec_config);
                std::set<std::int64_t> pids;
                for (const auto& r : fit_data) pids.insert(r.participant_id);
                if (pids.size() >= 2) {
                    for (const auto& t : std::vector<ModelTerm>(spec.terms)) {
                        if (t.period_round != 0 || t.scope != TermScope::PopulationFixed) continue;
                        switch (t.kind) {
                            case TermKind::Intercept:
                            case TermKind::TreatmentMain:
                            case TermKind::Main:
                            case TermKind::TreatmentByCovariate: {
                                auto rt = ModelTerm::make(t.kind, t.factors, 0,
                                                          TermScope::ParticipantRandom);
                                if (!spec.contains(rt)) spec.terms.push_back(std::move(rt));
                                break;
                            }
                            default: break;
                        }
                    }
                }
            }

            auto sampler = learner.sampler;
            sampler.seed = derive_seed(cfg.seed, "fit", static_cast<std::uint64_t>(ev.participant_id),
                                       static_cast<std::uint64_t>(ev.scheduled_day));
            auto [draws, health] = fit_posterior(fit_data, spec, schema, learner.prior, sampler);

            UpdateExecution exec;
            exec.participant_id = ev.participant_id;
            exec.scheduled_day = ev.scheduled_day;
            exec.health = health;
            if (health.ok()) {
                exec.posterior_checksum = fnv1a_bytes(
                    draws.draws.data(), static_cast<std::size_t>(draws.draws.size()) * sizeof(double));
            }
            result.executed_updates.push_back(exec);

            if (!health.ok()) {
                result.aborted = true;
                result.abort_reason = std::string("update for participant ") +
                                      std::to_string(ev.participant_id) + " at day " +
                                      std::to_string(ev.scheduled_day) + " broke: " +
                                      fit_status_name(health.status);
                break;
            }

            const auto observed = ObservedLevels::from_records(fit_data, schema);
            const auto target = algo == AlgorithmKind::Ls4l2
                                    ? PredictTarget::participant(ev.participant_id)
                                    : PredictTarget::population_level();
            tables[ev.participant_id] = build_policy_table(draws, schema, observed, learner.clip,
                                                           target, learner.imputation);
        } else {
            const auto& ev = decisions[di++];
            DecisionRecord rec;
            rec.participant_id = ev.participant_id;
            rec.decision_index = ev.decision_index;
            rec.days_in_study = ev.days_in_study;
            rec.context = ev.context;
            auto it = tables.find(ev.participant_id);
            rec.policy_prob = it == tables.end()
                                  ? cfg.initial_send_prob
                                  : it->second.lookup(ev.context, rec.clock()).send_prob;
            rec.action = {exec_rng.bernoulli(rec.policy_prob) ? 1 : 0};
            rec.true_prob_send = model.true_success_prob(ev.context, Action{1}, rec.clock());
            rec.true_prob_nosend = model.true_success_prob(ev.context, Action{0}, rec.clock());
            const double p_real = rec.action.send ? *rec.true_prob_send : *rec.true_prob_nosend;
            rec.reward = {exec_rng.bernoulli(p_real) ? 1 : 0};
            result.records.push_back(std::move(rec));
        }
    }

    result.failures = failure_report(result.expected_updates, result.executed_updates);
    return result;
}

}  // namespace jitai
