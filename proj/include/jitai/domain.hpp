#pragma once

// Core trial vocabulary: covariate schema, contexts, actions, rewards, the
// per-participant study clock, and the decision-log record. All types are
// immutable value objects.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace jitai {

inline constexpr std::string_view kUnknownLevel = "Unknown";

// Study-period indicators flip strictly after the 2- and 4-month updates.
inline constexpr int kFirstUpdateDay = 56;
inline constexpr int kSecondUpdateDay = 112;

struct PeriodIndicators {
    bool s1 = false;
    bool s2 = false;
    friend bool operator==(const PeriodIndicators&, const PeriodIndicators&) = default;
};

inline PeriodIndicators period_indicators(int days_in_study) {
    if (days_in_study < 0) {
        throw std::invalid_argument("period_indicators: days_in_study must be >= 0, got " +
                                    std::to_string(days_in_study));
    }
    return {days_in_study > kFirstUpdateDay, days_in_study > kSecondUpdateDay};
}

struct StudyClock {
    int days_in_study = 0;

    bool s1() const { return period_indicators(days_in_study).s1; }
    bool s2() const { return period_indicators(days_in_study).s2; }

    friend bool operator==(const StudyClock&, const StudyClock&) = default;
};

struct Action {
    int send = 0;  // 1 = notification sent
    friend bool operator==(const Action&, const Action&) = default;
};

struct Reward {
    int opened = 0;  // 1 = app opened within the 30-minute window
    friend bool operator==(const Reward&, const Reward&) = default;
};

struct ContextVariable {
    std::string name;
    std::vector<std::string> levels;
    std::size_t reference = 0;  // index into levels
};

enum class BaselineKind { NumericAge, CategoricalGender };

struct BaselineVariable {
    std::string name;
    BaselineKind kind;
};

// Ordered categorical context variables, fixed for the life of a run.
// Variables carry at most one reserved "Unknown" level; the default trial
// schema includes it for every variable so that missing measurements encode
// as an ordinary level.
class CovariateSchema {
public:
    CovariateSchema() = default;

    static CovariateSchema make(std::vector<ContextVariable> variables,
                                std::vector<BaselineVariable> baseline = {}) {
        CovariateSchema s;
        if (variables.empty()) throw std::invalid_argument("schema: needs at least one variable");
        for (const auto& v : variables) {
            if (v.levels.empty()) {
                throw std::invalid_argument("schema: variable '" + v.name + "' has no levels");
            }
            if (v.reference >= v.levels.size()) {
                throw std::invalid_argument("schema: reference index out of range for '" + v.name + "'");
            }
            int unknown_count = 0;
            for (std::size_t i = 0; i < v.levels.size(); ++i) {
                if (v.levels[i] == kUnknownLevel) ++unknown_count;
                for (std::size_t j = i + 1; j < v.levels.size(); ++j) {
                    if (v.levels[i] == v.levels[j]) {
                        throw std::invalid_argument("schema: duplicate level '" + v.levels[i] +
                                                    "' in variable '" + v.name + "'");
                    }
                }
            }
            if (unknown_count > 1) {
                throw std::invalid_argument("schema: variable '" + v.name +
                                            "' lists Unknown more than once");
            }
            if (v.levels[v.reference] == kUnknownLevel) {
                throw std::invalid_argument("schema: Unknown cannot be the reference level of '" +
                                            v.name + "'");
            }
        }
        for (std::size_t i = 0; i < variables.size(); ++i) {
            for (std::size_t j = i + 1; j < variables.size(); ++j) {
                if (variables[i].name == variables[j].name) {
                    throw std::invalid_argument("schema: duplicate variable name '" +
                                                variables[i].name + "'");
                }
            }
        }
        s.variables_ = std::move(variables);
        s.baseline_ = std::move(baseline);
        return s;
    }

    // Appends "Unknown" to every level list that lacks it.
    static CovariateSchema make_with_unknown(std::vector<ContextVariable> variables,
                                             std::vector<BaselineVariable> baseline = {}) {
        for (auto& v : variables) {
            if (std::find(v.levels.begin(), v.levels.end(), kUnknownLevel) == v.levels.end()) {
                v.levels.emplace_back(kUnknownLevel);
            }
        }
        return make(std::move(variables), std::move(baseline));
    }

    // The five context variables collected in the trial, with example levels
    // as defaults. Reference level is the first entry.
    static CovariateSchema default_trial_schema() {
        return make_with_unknown(
            {
                {"time_of_week", {"weekday", "weekend", "holiday"}, 0},
                {"time_of_day", {"morning", "afternoon", "evening", "night"}, 0},
                {"situation", {"shopping", "social", "working_out", "other"}, 0},
                {"weather", {"warm", "cool", "cold", "very_cold", "hot"}, 0},
                {"past_app_engagement", {"low", "high"}, 0},
            },
            {
                {"age", BaselineKind::NumericAge},
                {"gender", BaselineKind::CategoricalGender},
            });
    }

    const std::vector<ContextVariable>& variables() const { return variables_; }
    const std::vector<BaselineVariable>& baseline_variables() const { return baseline_; }
    std::size_t size() const { return variables_.size(); }

    const ContextVariable& variable(std::size_t i) const { return variables_.at(i); }

    std::size_t variable_index(std::string_view name) const {
        for (std::size_t i = 0; i < variables_.size(); ++i) {
            if (variables_[i].name == name) return i;
        }
        throw std::invalid_argument("schema: no variable named '" + std::string(name) + "'");
    }

    std::size_t level_index(std::size_t var, std::string_view level) const {
        const auto& levels = variables_.at(var).levels;
        for (std::size_t i = 0; i < levels.size(); ++i) {
            if (levels[i] == level) return i;
        }
        throw std::invalid_argument("schema: variable '" + variables_.at(var).name +
                                    "' has no level '" + std::string(level) + "'");
    }

    // Index of Unknown, if this variable carries it.
    std::optional<std::size_t> unknown_index(std::size_t var) const {
        const auto& levels = variables_.at(var).levels;
        for (std::size_t i = 0; i < levels.size(); ++i) {
            if (levels[i] == kUnknownLevel) return i;
        }
        return std::nullopt;
    }

    friend bool operator==(const CovariateSchema& a, const CovariateSchema& b) {
        if (a.variables_.size() != b.variables_.size()) return false;
        for (std::size_t i = 0; i < a.variables_.size(); ++i) {
            if (a.variables_[i].name != b.variables_[i].name ||
                a.variables_[i].levels != b.variables_[i].levels ||
                a.variables_[i].reference != b.variables_[i].reference) {
                return false;
            }
        }
        return true;
    }

private:
    std::vector<ContextVariable> variables_;
    std::vector<BaselineVariable> baseline_;
};

// One level index per schema variable.
struct ContextVector {
    std::vector<std::uint32_t> levels;

    static ContextVector from_names(const CovariateSchema& schema,
                                    const std::vector<std::string>& names) {
        if (names.size() != schema.size()) {
            throw std::invalid_argument("context: expected " + std::to_string(schema.size()) +
                                        " levels, got " + std::to_string(names.size()));
        }
        ContextVector ctx;
        ctx.levels.reserve(names.size());
        for (std::size_t v = 0; v < names.size(); ++v) {
            ctx.levels.push_back(static_cast<std::uint32_t>(schema.level_index(v, names[v])));
        }
        return ctx;
    }

    // Context with every variable set to Unknown (valid only if all variables carry it).
    static ContextVector all_unknown(const CovariateSchema& schema) {
        ContextVector ctx;
        ctx.levels.reserve(schema.size());
        for (std::size_t v = 0; v < schema.size(); ++v) {
            auto u = schema.unknown_index(v);
            if (!u) {
                throw std::invalid_argument("context: variable '" + schema.variable(v).name +
                                            "' has no Unknown level");
            }
            ctx.levels.push_back(static_cast<std::uint32_t>(*u));
        }
        return ctx;
    }

    friend bool operator==(const ContextVector&, const ContextVector&) = default;
};

struct ContextValidation {
    bool ok = true;
    std::string variable;  // first offending variable
    std::string level;     // the offending level (or its index if unresolvable)
};

inline ContextValidation validate_context(const ContextVector& ctx, const CovariateSchema& schema) {
    if (ctx.levels.size() != schema.size()) {
        return {false, "<arity>",
                "expected " + std::to_string(schema.size()) + " variables, got " +
                    std::to_string(ctx.levels.size())};
    }
    for (std::size_t v = 0; v < schema.size(); ++v) {
        if (ctx.levels[v] >= schema.variable(v).levels.size()) {
            return {false, schema.variable(v).name, "<index " + std::to_string(ctx.levels[v]) + ">"};
        }
    }
    return {};
}

// Validates a named assignment without constructing a ContextVector, so the
// offending (variable, level) pair can be reported.
inline ContextValidation validate_context_names(const std::vector<std::string>& names,
                                                const CovariateSchema& schema) {
    if (names.size() != schema.size()) {
        return {false, "<arity>",
                "expected " + std::to_string(schema.size()) + " variables, got " +
                    std::to_string(names.size())};
    }
    for (std::size_t v = 0; v < schema.size(); ++v) {
        const auto& levels = schema.variable(v).levels;
        if (std::find(levels.begin(), levels.end(), names[v]) == levels.end()) {
            return {false, schema.variable(v).name, names[v]};
        }
    }
    return {};
}

// One decision point. true_prob_* carry simulation-only ground truth and are
// both present or both absent.
struct DecisionRecord {
    std::int64_t participant_id = 0;
    std::int64_t decision_index = 0;
    int days_in_study = 0;
    ContextVector context;
    double policy_prob = 0.0;
    Action action;
    Reward reward;
    std::optional<double> true_prob_send;
    std::optional<double> true_prob_nosend;

    StudyClock clock() const { return {days_in_study}; }

    bool has_true_probs() const { return true_prob_send.has_value() && true_prob_nosend.has_value(); }

    friend bool operator==(const DecisionRecord&, const DecisionRecord&) = default;
};

}  // namespace jitai
