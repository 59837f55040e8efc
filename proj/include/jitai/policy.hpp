#pragma once

// The probabilistic mapping: enumerates every (context, study period)
// combination into a table of clipped Thompson-sampling send probabilities,
// flags rows whose levels never appeared in the training data, and imputes
// them from fitted rows (missing-data scenario 1, new-context scenario 2).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "jitai/domain.hpp"
#include "jitai/learner.hpp"

namespace jitai {

struct ClipBounds {
    double lower = 0.05;
    double upper = 0.95;

    void validate() const {
        if (!(0.0 < lower && lower < upper && upper < 1.0)) {
            throw std::invalid_argument("clip bounds: need 0 < lower < upper < 1");
        }
    }
    double clamp(double p) const { return p < lower ? lower : (p > upper ? upper : p); }
};

// Fraction of kept draws in which sending beats not sending, clamped to the
// exploration bounds. Ties within a draw count as not-greater.
inline double thompson_probability(const PosteriorDraws& draws, const ContextVector& ctx,
                                   StudyClock clock, PredictTarget target, const ClipBounds& clip,
                                   const ParticipantBaseline* attrs = nullptr) {
    clip.validate();
    if (draws.draws.rows() == 0) {
        throw std::invalid_argument("thompson_probability: no posterior draws");
    }
    const auto p_send = predict_success(draws, ctx, Action{1}, clock, target, attrs);
    const auto p_skip = predict_success(draws, ctx, Action{0}, clock, target, attrs);
    Eigen::Index favor = 0;
    for (Eigen::Index d = 0; d < p_send.size(); ++d) {
        if (p_send(d) > p_skip(d)) ++favor;
    }
    const double raw = static_cast<double>(favor) / static_cast<double>(p_send.size());
    return clip.clamp(raw);
}

// Per-variable sets of level indices seen in training data.
struct ObservedLevels {
    std::vector<std::set<std::uint32_t>> by_variable;

    static ObservedLevels from_records(std::span<const DecisionRecord> data,
                                       const CovariateSchema& schema) {
        ObservedLevels o;
        o.by_variable.resize(schema.size());
        for (const auto& r : data) {
            for (std::size_t v = 0; v < schema.size(); ++v) {
                o.by_variable[v].insert(r.context.levels[v]);
            }
        }
        return o;
    }

    bool contains(std::size_t var, std::uint32_t level) const {
        return by_variable[var].count(level) > 0;
    }
};

enum class Provenance { Fitted, Scenario1Imputed, Scenario2Imputed };

inline const char* provenance_name(Provenance p) {
    switch (p) {
        case Provenance::Fitted: return "fitted";
        case Provenance::Scenario1Imputed: return "scenario1-imputed";
        case Provenance::Scenario2Imputed: return "scenario2-imputed";
    }
    return "?";
}

struct PolicyFlag {
    std::string variable;
    std::string level;
    int scenario = 0;  // 1 = missing data, 2 = new context

    friend bool operator==(const PolicyFlag&, const PolicyFlag&) = default;
};

struct PolicyRow {
    ContextVector context;
    PeriodIndicators period;
    double send_prob = 0.0;
    Provenance provenance = Provenance::Fitted;
    std::vector<PolicyFlag> flags;
};

inline constexpr std::array<PeriodIndicators, 3> kPeriodCombos = {
    PeriodIndicators{false, false}, PeriodIndicators{true, false}, PeriodIndicators{true, true}};

// Representative clock for each valid (s1, s2) combination.
inline StudyClock period_clock(PeriodIndicators p) {
    if (p.s2) return StudyClock{kSecondUpdateDay + 1};
    if (p.s1) return StudyClock{kFirstUpdateDay + 1};
    return StudyClock{0};
}

struct PolicyTable {
    CovariateSchema schema;
    ClipBounds clip;
    std::vector<PolicyRow> rows;  // context-major, the three period combos innermost

    std::size_t row_index(const ContextVector& ctx, StudyClock clock) const {
        auto v = validate_context(ctx, schema);
        if (!v.ok) {
            throw std::invalid_argument("policy lookup: invalid context (" + v.variable + ", " +
                                        v.level + ")");
        }
        std::size_t idx = 0;
        for (std::size_t var = 0; var < schema.size(); ++var) {
            idx = idx * schema.variable(var).levels.size() + ctx.levels[var];
        }
        const auto p = period_indicators(clock.days_in_study);
        const std::size_t period_idx = p.s2 ? 2 : (p.s1 ? 1 : 0);
        return idx * kPeriodCombos.size() + period_idx;
    }

    const PolicyRow& lookup(const ContextVector& ctx, StudyClock clock) const {
        return rows.at(row_index(ctx, clock));
    }
};

// Scenario-1 imputation: unweighted mean of fitted sibling probabilities,
// then clipped.
inline double impute_scenario1(std::span<const double> fitted_sibling_probs,
                               const ClipBounds& clip) {
    if (fitted_sibling_probs.empty()) {
        throw std::invalid_argument("impute_scenario1: no fitted sibling rows");
    }
    double sum = 0.0;
    for (double p : fitted_sibling_probs) sum += p;
    return clip.clamp(sum / static_cast<double>(fitted_sibling_probs.size()));
}

enum class Scenario2Mode { Average, Nearest };

struct ImputationConfig {
    Scenario2Mode mode = Scenario2Mode::Average;
    // variable -> (missing level -> substitute level)
    std::map<std::string, std::map<std::string, std::string>> nearest_level;
};

namespace policy_detail {

inline std::vector<ContextVector> enumerate_contexts(const CovariateSchema& schema) {
    std::vector<ContextVector> out;
    ContextVector ctx;
    ctx.levels.assign(schema.size(), 0);
    auto rec = [&](auto&& self, std::size_t v) -> void {
        if (v == schema.size()) {
            out.push_back(ctx);
            return;
        }
        for (std::uint32_t l = 0; l < schema.variable(v).levels.size(); ++l) {
            ctx.levels[v] = l;
            self(self, v + 1);
        }
    };
    rec(rec, 0);
    return out;
}

// Fitted rows that agree with `row` everywhere except the flagged variables
// and share its study period.
inline std::vector<double> fitted_sibling_probs(const PolicyTable& table, const PolicyRow& row,
                                                const std::set<std::size_t>& flagged_vars) {
    std::vector<double> probs;
    for (const auto& cand : table.rows) {
        if (cand.provenance != Provenance::Fitted) continue;
        if (!(cand.period == row.period)) continue;
        bool sibling = true;
        for (std::size_t v = 0; v < table.schema.size(); ++v) {
            if (flagged_vars.count(v)) continue;
            if (cand.context.levels[v] != row.context.levels[v]) {
                sibling = false;
                break;
            }
        }
        if (sibling) probs.push_back(cand.send_prob);
    }
    return probs;
}

}  // namespace policy_detail

// Scenario-2 imputation for every row whose `variable` takes `missing_level`:
// averaging delegates to the scenario-1 rule; nearest copies the probabilities
// of the configured substitute level, which must itself be fitted.
inline void impute_scenario2(PolicyTable& table, const std::string& variable,
                             const std::string& missing_level, Scenario2Mode mode,
                             const ImputationConfig& cfg = {}) {
    const auto var = table.schema.variable_index(variable);
    const auto level = table.schema.level_index(var, missing_level);

    std::optional<std::size_t> substitute;
    if (mode == Scenario2Mode::Nearest) {
        auto vit = cfg.nearest_level.find(variable);
        if (vit == cfg.nearest_level.end() || vit->second.find(missing_level) == vit->second.end()) {
            throw std::invalid_argument("impute_scenario2: no nearest-level mapping for " +
                                        variable + "=" + missing_level);
        }
        substitute = table.schema.level_index(var, vit->second.at(missing_level));
    }

    for (auto& row : table.rows) {
        if (row.context.levels[var] != level) continue;
        if (row.provenance == Provenance::Fitted) continue;
        if (mode == Scenario2Mode::Nearest) {
            ContextVector mapped = row.context;
            mapped.levels[var] = static_cast<std::uint32_t>(*substitute);
            const auto& src = table.rows[table.row_index(mapped, period_clock(row.period))];
            if (src.provenance != Provenance::Fitted) {
                throw std::invalid_argument(
                    "impute_scenario2: nearest level '" +
                    table.schema.variable(var).levels[*substitute] +
                    "' is also unobserved; fall back to average mode");
            }
            row.send_prob = table.clip.clamp(src.send_prob);
        } else {
            auto sibs = policy_detail::fitted_sibling_probs(table, row, {var});
            row.send_prob = impute_scenario1(sibs, table.clip);
        }
        row.provenance = Provenance::Scenario2Imputed;
    }
}

// Builds the complete table. Rows whose levels all appeared in training get
// fitted Thompson probabilities; the rest are flagged by scenario and imputed
// from fitted rows only.
inline PolicyTable build_policy_table(const PosteriorDraws& draws, const CovariateSchema& schema,
                                      const ObservedLevels& observed, const ClipBounds& clip,
                                      PredictTarget target = PredictTarget::population_level(),
                                      const ImputationConfig& imputation = {},
                                      const ParticipantBaseline* attrs = nullptr) {
    clip.validate();
    if (observed.by_variable.size() != schema.size()) {
        throw std::invalid_argument("build_policy_table: observed levels do not match schema");
    }

    PolicyTable table;
    table.schema = schema;
    table.clip = clip;

    const auto contexts = policy_detail::enumerate_contexts(schema);
    table.rows.reserve(contexts.size() * kPeriodCombos.size());
    for (const auto& ctx : contexts) {
        for (const auto period : kPeriodCombos) {
            PolicyRow row;
            row.context = ctx;
            row.period = period;
            for (std::size_t v = 0; v < schema.size(); ++v) {
                const auto& var = schema.variable(v);
                const auto lvl = ctx.levels[v];
                if (observed.contains(v, lvl)) continue;
                const bool is_unknown = var.levels[lvl] == kUnknownLevel;
                row.flags.push_back({var.name, var.levels[lvl], is_unknown ? 1 : 2});
            }
            if (row.flags.empty()) {
                row.provenance = Provenance::Fitted;
                row.send_prob =
                    thompson_probability(draws, ctx, period_clock(period), target, clip, attrs);
            } else {
                const bool any_scenario2 =
                    std::any_of(row.flags.begin(), row.flags.end(),
                                [](const PolicyFlag& f) { return f.scenario == 2; });
                row.provenance = any_scenario2 ? Provenance::Scenario2Imputed
                                               : Provenance::Scenario1Imputed;
                row.send_prob = std::numeric_limits<double>::quiet_NaN();
            }
            table.rows.push_back(std::move(row));
        }
    }

    // Imputation sources are fitted rows only, so imputed values never feed
    // other imputations.
    double global_sum = 0.0;
    std::size_t global_n = 0;
    for (const auto& row : table.rows) {
        if (row.provenance == Provenance::Fitted) {
            global_sum += row.send_prob;
            ++global_n;
        }
    }
    const double global_mean = global_n > 0 ? global_sum / static_cast<double>(global_n) : 0.5;

    for (auto& row : table.rows) {
        if (row.provenance == Provenance::Fitted) continue;
        std::set<std::size_t> flagged_vars;
        bool use_nearest = imputation.mode == Scenario2Mode::Nearest;
        for (const auto& f : row.flags) {
            flagged_vars.insert(schema.variable_index(f.variable));
            if (f.scenario != 2) use_nearest = false;
        }
        if (use_nearest) {
            ContextVector mapped = row.context;
            bool mapped_all = true;
            for (const auto& f : row.flags) {
                auto vit = imputation.nearest_level.find(f.variable);
                if (vit == imputation.nearest_level.end() ||
                    vit->second.find(f.level) == vit->second.end()) {
                    mapped_all = false;
                    break;
                }
                const auto var = schema.variable_index(f.variable);
                mapped.levels[var] = static_cast<std::uint32_t>(
                    schema.level_index(var, vit->second.at(f.level)));
            }
            if (mapped_all) {
                const auto& src = table.rows[table.row_index(mapped, period_clock(row.period))];
                if (src.provenance != Provenance::Fitted) {
                    throw std::invalid_argument(
                        "build_policy_table: nearest level for (" + row.flags.front().variable +
                        "=" + row.flags.front().level +
                        ") is also unobserved; fall back to average mode");
                }
                row.send_prob = clip.clamp(src.send_prob);
                continue;
            }
        }
        auto sibs = policy_detail::fitted_sibling_probs(table, row, flagged_vars);
        row.send_prob = sibs.empty() ? clip.clamp(global_mean) : impute_scenario1(sibs, clip);
    }
    return table;
}

}  // namespace jitai
