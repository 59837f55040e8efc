#pragma once

// Data-adaptive construction of the logistic-regression term list: three
// study-period rounds of cell-count admission rules over the context
// covariates, plus the separate distinct-value rules for baseline age and
// gender. Also provides the fixed term sets used by the "simple" and
// "complicated" reference algorithms.

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "jitai/domain.hpp"

namespace jitai {

enum class TermKind {
    Intercept,
    TreatmentMain,
    Main,
    TreatmentByCovariate,
    TwoWay,
    TreatmentByTwoCovariates,
    BaselineMain,
    BaselineByTreatment,
    BaselineThreeWay,
};

enum class TermScope { PopulationFixed, ParticipantRandom };

inline const char* term_kind_name(TermKind k) {
    switch (k) {
        case TermKind::Intercept: return "intercept";
        case TermKind::TreatmentMain: return "treatment_main";
        case TermKind::Main: return "main";
        case TermKind::TreatmentByCovariate: return "treatment_by_covariate";
        case TermKind::TwoWay: return "two_way";
        case TermKind::TreatmentByTwoCovariates: return "treatment_by_two_covariates";
        case TermKind::BaselineMain: return "baseline_main";
        case TermKind::BaselineByTreatment: return "baseline_by_treatment";
        case TermKind::BaselineThreeWay: return "baseline_three_way";
    }
    return "?";
}

inline TermKind term_kind_from_name(const std::string& s) {
    for (TermKind k : {TermKind::Intercept, TermKind::TreatmentMain, TermKind::Main,
                       TermKind::TreatmentByCovariate, TermKind::TwoWay,
                       TermKind::TreatmentByTwoCovariates, TermKind::BaselineMain,
                       TermKind::BaselineByTreatment, TermKind::BaselineThreeWay}) {
        if (s == term_kind_name(k)) return k;
    }
    throw std::invalid_argument("unknown term kind '" + s + "'");
}

// Number of non-constant factors multiplied in the term, with the treatment
// indicator and a study-period indicator each counting as one factor. The
// round-0 intercept is floored at 1 so every term has a prior scale.
inline int term_interaction_order(TermKind kind, int period_round) {
    int factors = 0;
    switch (kind) {
        case TermKind::Intercept: factors = 0; break;
        case TermKind::TreatmentMain: factors = 1; break;
        case TermKind::Main: factors = 1; break;
        case TermKind::TreatmentByCovariate: factors = 2; break;
        case TermKind::TwoWay: factors = 2; break;
        case TermKind::TreatmentByTwoCovariates: factors = 3; break;
        case TermKind::BaselineMain: factors = 1; break;
        case TermKind::BaselineByTreatment: factors = 2; break;
        case TermKind::BaselineThreeWay: factors = 3; break;
    }
    if (period_round > 0) ++factors;
    return factors < 1 ? 1 : factors;
}

struct ModelTerm {
    TermKind kind = TermKind::Intercept;
    std::vector<std::string> factors;  // covariate / baseline variable names
    int period_round = 0;              // 0 = all data, 1 = xS1, 2 = xS2
    TermScope scope = TermScope::PopulationFixed;

    int interaction_order() const { return term_interaction_order(kind, period_round); }

    static ModelTerm make(TermKind kind, std::vector<std::string> factors = {}, int round = 0,
                          TermScope scope = TermScope::PopulationFixed) {
        return {kind, std::move(factors), round, scope};
    }

    friend bool operator==(const ModelTerm&, const ModelTerm&) = default;
};

struct SpecConfig {
    int min_cell_size = 5;
    int max_interaction_terms = 20;
    bool enable_baseline_rules = false;

    void validate() const {
        if (min_cell_size < 1) throw std::invalid_argument("spec config: min_cell_size must be >= 1");
        if (max_interaction_terms < 0) {
            throw std::invalid_argument("spec config: max_interaction_terms must be >= 0");
        }
    }
};

// Ordered term list. Covariates expand one-hot against the reference level;
// an "Unknown" level gets its own indicator like any other non-reference level.
struct ModelSpec {
    std::vector<ModelTerm> terms;

    bool contains(const ModelTerm& t) const {
        for (const auto& u : terms) {
            if (u == t) return true;
        }
        return false;
    }

    std::size_t interaction_term_count() const {
        std::size_t n = 0;
        for (const auto& t : terms) {
            if (t.interaction_order() >= 2) ++n;
        }
        return n;
    }

    // Structural checks for specs that feed the learner.
    void validate(const CovariateSchema& schema) const {
        int round0_intercepts = 0;
        for (std::size_t i = 0; i < terms.size(); ++i) {
            const auto& t = terms[i];
            if (t.kind == TermKind::Intercept && t.period_round == 0 &&
                t.scope == TermScope::PopulationFixed) {
                ++round0_intercepts;
            }
            if (t.period_round < 0 || t.period_round > 2) {
                throw std::invalid_argument("model spec: period_round out of range");
            }
            if (t.scope == TermScope::ParticipantRandom) {
                switch (t.kind) {
                    case TermKind::Intercept:
                    case TermKind::Main:
                    case TermKind::TreatmentMain:
                    case TermKind::TreatmentByCovariate: break;
                    default:
                        throw std::invalid_argument(
                            "model spec: random scope only for intercept/main/treatment terms");
                }
            }
            switch (t.kind) {
                case TermKind::Main:
                case TermKind::TreatmentByCovariate:
                    if (t.factors.size() != 1) throw std::invalid_argument("model spec: bad factor arity");
                    schema.variable_index(t.factors[0]);
                    break;
                case TermKind::TwoWay:
                case TermKind::TreatmentByTwoCovariates:
                    if (t.factors.size() != 2) throw std::invalid_argument("model spec: bad factor arity");
                    schema.variable_index(t.factors[0]);
                    schema.variable_index(t.factors[1]);
                    break;
                case TermKind::BaselineMain:
                case TermKind::BaselineByTreatment:
                    if (t.factors.size() != 1) throw std::invalid_argument("model spec: bad factor arity");
                    break;
                default:
                    if (!t.factors.empty()) throw std::invalid_argument("model spec: unexpected factors");
                    break;
            }
            for (std::size_t j = i + 1; j < terms.size(); ++j) {
                if (terms[j] == t) throw std::invalid_argument("model spec: duplicate term");
            }
        }
        if (round0_intercepts != 1) {
            throw std::invalid_argument("model spec: expected exactly one round-0 fixed intercept");
        }
    }
};

// --- cell-count admission machinery ------------------------------------------

namespace detail {

// Counts over one round's records for a single covariate: per-level totals and
// per-(level, action) cells. Unknown observations never count toward a cell.
struct LevelCounts {
    std::vector<int> total;                  // by level index
    std::vector<std::array<int, 2>> by_action;  // by level index x action
};

inline LevelCounts count_levels(std::span<const DecisionRecord* const> rows, std::size_t var,
                                const CovariateSchema& schema) {
    const auto n_levels = schema.variable(var).levels.size();
    LevelCounts c{std::vector<int>(n_levels, 0),
                  std::vector<std::array<int, 2>>(n_levels, {0, 0})};
    const auto unknown = schema.unknown_index(var);
    for (const DecisionRecord* r : rows) {
        const auto lvl = r->context.levels[var];
        if (unknown && lvl == *unknown) continue;
        c.total[lvl] += 1;
        c.by_action[lvl][r->action.send ? 1 : 0] += 1;
    }
    return c;
}

// True when at least two levels satisfy the per-level predicate.
template <typename Pred>
bool has_two_qualifying_levels(std::size_t n_levels, Pred&& pred) {
    int qualifying = 0;
    for (std::size_t l = 0; l < n_levels; ++l) {
        if (pred(l) && ++qualifying >= 2) return true;
    }
    return false;
}

// Joint counts for a covariate pair, optionally split by action. Identification
// requires a 2x2 block of levels whose every cell (x both actions, when the
// term involves treatment) reaches the minimum cell size.
inline bool has_fat_2x2_block(std::span<const DecisionRecord* const> rows, std::size_t var_a,
                              std::size_t var_b, const CovariateSchema& schema, int min_cell,
                              bool split_by_action) {
    const auto la = schema.variable(var_a).levels.size();
    const auto lb = schema.variable(var_b).levels.size();
    const auto unknown_a = schema.unknown_index(var_a);
    const auto unknown_b = schema.unknown_index(var_b);
    std::vector<std::array<int, 2>> cells(la * lb, {0, 0});
    for (const DecisionRecord* r : rows) {
        const auto a = r->context.levels[var_a];
        const auto b = r->context.levels[var_b];
        if ((unknown_a && a == *unknown_a) || (unknown_b && b == *unknown_b)) continue;
        cells[a * lb + b][r->action.send ? 1 : 0] += 1;
    }
    auto cell_ok = [&](std::size_t a, std::size_t b) {
        const auto& c = cells[a * lb + b];
        if (split_by_action) return c[0] >= min_cell && c[1] >= min_cell;
        return c[0] + c[1] >= min_cell;
    };
    // A 2x2 all-qualifying block exists iff two rows share >= 2 qualifying columns.
    for (std::size_t a1 = 0; a1 < la; ++a1) {
        for (std::size_t a2 = a1 + 1; a2 < la; ++a2) {
            int shared = 0;
            for (std::size_t b = 0; b < lb; ++b) {
                if (cell_ok(a1, b) && cell_ok(a2, b) && ++shared >= 2) return true;
            }
        }
    }
    return false;
}

}  // namespace detail

// Executes the three admission rounds: round 0 on all data, round 1 on the
// S1 = 1 subset, round 2 on the S2 = 1 subset. Terms admitted in rounds 1 and
// 2 are interacted with the matching period indicator. The treatment main
// effect is always retained so the bandit can learn. Output order and content
// are deterministic given inputs.
inline ModelSpec build_model_spec(std::span<const DecisionRecord> data,
                                  const CovariateSchema& schema, const SpecConfig& cfg) {
    cfg.validate();
    const int m = cfg.min_cell_size;

    ModelSpec spec;
    int interactions = 0;
    auto admit = [&](ModelTerm t) {
        if (t.interaction_order() >= 2) {
            if (interactions >= cfg.max_interaction_terms) return;
            ++interactions;
        }
        spec.terms.push_back(std::move(t));
    };

    std::set<std::int64_t> participants;
    for (const auto& r : data) participants.insert(r.participant_id);

    for (int round = 0; round <= 2; ++round) {
        std::vector<const DecisionRecord*> rows;
        rows.reserve(data.size());
        for (const auto& r : data) {
            const auto p = period_indicators(r.days_in_study);
            if (round == 1 && !p.s1) continue;
            if (round == 2 && !p.s2) continue;
            rows.push_back(&r);
        }
        const auto n_rows = static_cast<int>(rows.size());

        int actions[2] = {0, 0};
        for (const auto* r : rows) actions[r->action.send ? 1 : 0] += 1;

        std::vector<detail::LevelCounts> counts;
        counts.reserve(schema.size());
        for (std::size_t v = 0; v < schema.size(); ++v) {
            counts.push_back(detail::count_levels(rows, v, schema));
        }
        auto main_ok = [&](std::size_t v) {
            return detail::has_two_qualifying_levels(
                counts[v].total.size(), [&](std::size_t l) { return counts[v].total[l] >= m; });
        };
        auto treatment_by_cov_ok = [&](std::size_t v) {
            return detail::has_two_qualifying_levels(counts[v].total.size(), [&](std::size_t l) {
                return counts[v].by_action[l][0] >= m && counts[v].by_action[l][1] >= m;
            });
        };

        // Candidates in priority order: lower interaction order first, then
        // term kind, then schema order.
        if (round == 0) {
            admit(ModelTerm::make(TermKind::Intercept));
            admit(ModelTerm::make(TermKind::TreatmentMain));
        } else {
            if (n_rows >= m) admit(ModelTerm::make(TermKind::Intercept, {}, round));
        }
        if (round > 0 && actions[0] >= m && actions[1] >= m) {
            admit(ModelTerm::make(TermKind::TreatmentMain, {}, round));
        }
        for (std::size_t v = 0; v < schema.size(); ++v) {
            if (main_ok(v)) {
                admit(ModelTerm::make(TermKind::Main, {schema.variable(v).name}, round));
            }
        }
        for (std::size_t a = 0; a < schema.size(); ++a) {
            for (std::size_t b = a + 1; b < schema.size(); ++b) {
                if (detail::has_fat_2x2_block(rows, a, b, schema, m, /*split_by_action=*/false)) {
                    admit(ModelTerm::make(
                        TermKind::TwoWay, {schema.variable(a).name, schema.variable(b).name}, round));
                }
            }
        }
        for (std::size_t v = 0; v < schema.size(); ++v) {
            if (treatment_by_cov_ok(v)) {
                admit(ModelTerm::make(TermKind::TreatmentByCovariate, {schema.variable(v).name},
                                      round));
            }
        }
        for (std::size_t a = 0; a < schema.size(); ++a) {
            for (std::size_t b = a + 1; b < schema.size(); ++b) {
                if (detail::has_fat_2x2_block(rows, a, b, schema, m, /*split_by_action=*/true)) {
                    admit(ModelTerm::make(TermKind::TreatmentByTwoCovariates,
                                          {schema.variable(a).name, schema.variable(b).name}, round));
                }
            }
        }
    }

    // Participant-level deviations: main effects and treatment first-order
    // interactions only, mirroring admitted round-0 fixed terms. Meaningful
    // only when the data pool several participants.
    if (participants.size() >= 2) {
        for (const auto& t : std::vector<ModelTerm>(spec.terms)) {
            if (t.period_round != 0 || t.scope != TermScope::PopulationFixed) continue;
            switch (t.kind) {
                case TermKind::Intercept:
                case TermKind::TreatmentMain:
                case TermKind::Main:
                case TermKind::TreatmentByCovariate:
                    admit(ModelTerm::make(t.kind, t.factors, 0, TermScope::ParticipantRandom));
                    break;
                default: break;
            }
        }
    }

    spec.validate(schema);
    return spec;
}

// --- baseline covariate rules -------------------------------------------------

struct ParticipantBaseline {
    double age = 0.0;
    std::string gender;
};

// Inclusion rules for baseline age and gender: a main effect needs two
// distinct values, an interaction with treatment needs four; the three-way
// age x gender x treatment term needs one cell of the mean-split age x gender
// table to hold at least four participants.
inline std::vector<ModelTerm> baseline_terms(std::span<const ParticipantBaseline> participants,
                                             const SpecConfig& cfg) {
    std::vector<ModelTerm> out;
    if (!cfg.enable_baseline_rules || participants.empty()) return out;

    std::set<double> ages;
    std::set<std::string> genders;
    for (const auto& p : participants) {
        ages.insert(p.age);
        genders.insert(p.gender);
    }

    if (ages.size() >= 2) out.push_back(ModelTerm::make(TermKind::BaselineMain, {"age"}));
    if (ages.size() >= 4) out.push_back(ModelTerm::make(TermKind::BaselineByTreatment, {"age"}));
    if (genders.size() >= 2) out.push_back(ModelTerm::make(TermKind::BaselineMain, {"gender"}));
    if (genders.size() >= 4) out.push_back(ModelTerm::make(TermKind::BaselineByTreatment, {"gender"}));

    double mean_age = 0.0;
    for (const auto& p : participants) mean_age += p.age;
    mean_age /= static_cast<double>(participants.size());
    // 2x2 table: age dichotomized at the mean x first two gender categories.
    std::vector<std::string> gender_slots(genders.begin(), genders.end());
    gender_slots.resize(2);
    int cells[2][2] = {{0, 0}, {0, 0}};
    for (const auto& p : participants) {
        const int hi = p.age >= mean_age ? 1 : 0;
        for (int g = 0; g < 2; ++g) {
            if (p.gender == gender_slots[g]) cells[hi][g] += 1;
        }
    }
    const bool any_cell_four = cells[0][0] >= 4 || cells[0][1] >= 4 || cells[1][0] >= 4 ||
                               cells[1][1] >= 4;
    if (any_cell_four) {
        out.push_back(ModelTerm::make(TermKind::BaselineThreeWay, {"age", "gender"}));
    }
    return out;
}

// --- parameter counting and fixed reference specs ------------------------------

inline std::size_t term_column_count(const ModelTerm& t, const CovariateSchema& schema) {
    auto expanded = [&](const std::string& var) {
        return schema.variable(schema.variable_index(var)).levels.size() - 1;
    };
    switch (t.kind) {
        case TermKind::Intercept:
        case TermKind::TreatmentMain: return 1;
        case TermKind::Main:
        case TermKind::TreatmentByCovariate: return expanded(t.factors[0]);
        case TermKind::TwoWay:
        case TermKind::TreatmentByTwoCovariates:
            return expanded(t.factors[0]) * expanded(t.factors[1]);
        case TermKind::BaselineMain:
        case TermKind::BaselineByTreatment:
        case TermKind::BaselineThreeWay: return 1;
    }
    return 0;
}

// Number of population-level scalar coefficients after one-hot expansion.
inline std::size_t count_parameters(const ModelSpec& spec, const CovariateSchema& schema) {
    std::size_t n = 0;
    for (const auto& t : spec.terms) {
        if (t.scope != TermScope::PopulationFixed) continue;
        n += term_column_count(t, schema);
    }
    return n;
}

// Fixed term set of the "simple" reference algorithm: intercept, treatment,
// and covariate mains, with the whole block repeated inside each study period.
inline ModelSpec simple_model_spec(const CovariateSchema& schema) {
    ModelSpec spec;
    for (int round = 0; round <= 2; ++round) {
        spec.terms.push_back(ModelTerm::make(TermKind::Intercept, {}, round));
        spec.terms.push_back(ModelTerm::make(TermKind::TreatmentMain, {}, round));
        for (const auto& v : schema.variables()) {
            spec.terms.push_back(ModelTerm::make(TermKind::Main, {v.name}, round));
        }
    }
    spec.validate(schema);
    return spec;
}

// Maximal term set of the "complicated" reference algorithm: all mains,
// pairwise covariate interactions, and treatment interactions, repeated
// inside each study period.
inline ModelSpec maximal_model_spec(const CovariateSchema& schema) {
    ModelSpec spec;
    const auto& vars = schema.variables();
    for (int round = 0; round <= 2; ++round) {
        spec.terms.push_back(ModelTerm::make(TermKind::Intercept, {}, round));
        spec.terms.push_back(ModelTerm::make(TermKind::TreatmentMain, {}, round));
        for (const auto& v : vars) {
            spec.terms.push_back(ModelTerm::make(TermKind::Main, {v.name}, round));
        }
        for (std::size_t a = 0; a < vars.size(); ++a) {
            for (std::size_t b = a + 1; b < vars.size(); ++b) {
                spec.terms.push_back(
                    ModelTerm::make(TermKind::TwoWay, {vars[a].name, vars[b].name}, round));
            }
        }
        for (const auto& v : vars) {
            spec.terms.push_back(ModelTerm::make(TermKind::TreatmentByCovariate, {v.name}, round));
        }
        for (std::size_t a = 0; a < vars.size(); ++a) {
            for (std::size_t b = a + 1; b < vars.size(); ++b) {
                spec.terms.push_back(ModelTerm::make(TermKind::TreatmentByTwoCovariates,
                                                     {vars[a].name, vars[b].name}, round));
            }
        }
    }
    spec.validate(schema);
    return spec;
}

// --- JSON form (archived per update for the monitoring audit trail) ------------

inline nlohmann::ordered_json model_spec_to_json(const ModelSpec& spec) {
    nlohmann::ordered_json doc;
    doc["encoding"] = "one_hot_vs_reference_with_unknown_indicator";
    doc["terms"] = nlohmann::ordered_json::array();
    for (const auto& t : spec.terms) {
        nlohmann::ordered_json jt;
        jt["kind"] = term_kind_name(t.kind);
        jt["factors"] = t.factors;
        jt["period_round"] = t.period_round;
        jt["scope"] = t.scope == TermScope::PopulationFixed ? "population_fixed" : "participant_random";
        jt["interaction_order"] = t.interaction_order();
        doc["terms"].push_back(std::move(jt));
    }
    return doc;
}

inline ModelSpec model_spec_from_json(const nlohmann::json& doc) {
    ModelSpec spec;
    for (const auto& jt : doc.at("terms")) {
        ModelTerm t;
        t.kind = term_kind_from_name(jt.at("kind").get<std::string>());
        t.factors = jt.at("factors").get<std::vector<std::string>>();
        t.period_round = jt.at("period_round").get<int>();
        const auto scope = jt.at("scope").get<std::string>();
        if (scope == "population_fixed") {
            t.scope = TermScope::PopulationFixed;
        } else if (scope == "participant_random") {
            t.scope = TermScope::ParticipantRandom;
        } else {
            throw std::invalid_argument("model spec json: bad scope '" + scope + "'");
        }
        spec.terms.push_back(std::move(t));
    }
    return spec;
}

}  // namespace jitai
