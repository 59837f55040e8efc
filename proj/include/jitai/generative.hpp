#pragma once

// Ground-truth reward models for the synthetic trials. Setting 1 has a single
// constant treatment effect; setting 2 makes time of week, time of day, and
// engagement strong treatment moderators, with the treatment effect drifting
// down across study periods. Remaining coefficients follow the
// interaction-order prior table.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jitai/design.hpp"
#include "jitai/domain.hpp"
#include "jitai/model_spec.hpp"
#include "jitai/numeric.hpp"
#include "jitai/prior.hpp"
#include "jitai/rng.hpp"

namespace jitai {

// Term structure of the setting-1 truth: mains and pairwise covariate
// interactions in every period block, but treatment enters only once, as a
// single constant main effect.
inline ModelSpec setting1_spec(const CovariateSchema& schema) {
    ModelSpec spec;
    const auto& vars = schema.variables();
    for (int round = 0; round <= 2; ++round) {
        spec.terms.push_back(ModelTerm::make(TermKind::Intercept, {}, round));
        if (round == 0) spec.terms.push_back(ModelTerm::make(TermKind::TreatmentMain));
        for (const auto& v : vars) {
            spec.terms.push_back(ModelTerm::make(TermKind::Main, {v.name}, round));
        }
        for (std::size_t a = 0; a < vars.size(); ++a) {
            for (std::size_t b = a + 1; b < vars.size(); ++b) {
                spec.terms.push_back(
                    ModelTerm::make(TermKind::TwoWay, {vars[a].name, vars[b].name}, round));
            }
        }
    }
    spec.validate(schema);
    return spec;
}

// The setting-2 truth shares the maximal model's term set.
inline ModelSpec setting2_spec(const CovariateSchema& schema) { return maximal_model_spec(schema); }

// (variable, level) pairs whose treatment interactions get the positive
// moderator shift in setting 2.
struct ModeratorLevels {
    std::vector<std::pair<std::string, std::string>> levels = {
        {"time_of_week", "weekend"},
        {"time_of_day", "night"},
        {"past_app_engagement", "high"},
    };
};

struct GenerativeModel {
    int setting = 1;
    ModelSpec spec;
    ExpandedDesign design;
    Eigen::VectorXd coefficients;

    double linear_predictor(const ContextVector& ctx, Action action, StudyClock clock) const {
        auto v = validate_context(ctx, design.schema());
        if (!v.ok) {
            throw std::invalid_argument("generative model: invalid context (" + v.variable + ", " +
                                        v.level + ")");
        }
        return design.row(ctx, action, clock).dot(coefficients);
    }

    double true_success_prob(const ContextVector& ctx, Action action, StudyClock clock) const {
        return inv_logit(linear_predictor(ctx, action, clock));
    }
};

inline double true_success_prob(const GenerativeModel& model, const ContextVector& ctx,
                                Action action, StudyClock clock) {
    return model.true_success_prob(ctx, action, clock);
}

// Draws one truth. Coefficients are sampled column by column in design order,
// so the result is deterministic given (setting, schema, seed).
inline GenerativeModel sample_coefficients(int setting, const CovariateSchema& schema,
                                           std::uint64_t seed,
                                           const ModeratorLevels& moderators = {}) {
    if (setting != 1 && setting != 2) {
        throw std::invalid_argument("sample_coefficients: setting must be 1 or 2");
    }
    GenerativeModel model;
    model.setting = setting;
    model.spec = setting == 1 ? setting1_spec(schema) : setting2_spec(schema);
    model.design = ExpandedDesign::build(model.spec, schema);

    PriorSpec table;  // the order-scaled Normal table
    Rng rng(derive_seed(seed, "generative", static_cast<std::uint64_t>(setting)));

    auto is_moderator_column = [&](const DesignColumn& col) {
        const auto& term = model.spec.terms[col.term_index];
        if (term.kind != TermKind::TreatmentByCovariate || term.period_round != 0) return false;
        for (const auto& [var, level] : moderators.levels) {
            if (!col.level_matches.empty()) {
                const auto v = col.level_matches[0].first;
                const auto l = col.level_matches[0].second;
                if (schema.variable(v).name == var && schema.variable(v).levels[l] == level) {
                    return true;
                }
            }
        }
        return false;
    };

    model.coefficients.resize(static_cast<Eigen::Index>(model.design.cols()));
    for (std::size_t j = 0; j < model.design.cols(); ++j) {
        const auto& col = model.design.columns()[j];
        const auto& term = model.spec.terms[col.term_index];
        double value;
        if (term.kind == TermKind::TreatmentMain && term.period_round == 0) {
            value = setting == 1 ? rng.normal(0.4, 1.0 / 8.0) : rng.normal(-0.4, 1.0 / 8.0);
        } else if (setting == 2 && is_moderator_column(col)) {
            value = rng.normal(0.5, 1.0 / 16.0);
        } else if (setting == 2 && term.kind == TermKind::TreatmentMain && term.period_round > 0) {
            value = rng.normal(-0.1, 1.0 / 32.0);
        } else {
            value = rng.normal(0.0, prior_scale(col.interaction_order, table));
        }
        model.coefficients(static_cast<Eigen::Index>(j)) = value;
    }
    return model;
}

// --- coefficient file format ----------------------------------------------
// CSV columns: term_id, factors, interaction_order, period_round, value.
// term_id is the expanded column name; factors lists the multiplied parts.

namespace generative_detail {

inline std::string column_factors(const DesignColumn& col, const CovariateSchema& schema) {
    std::string out;
    auto append = [&](const std::string& part) {
        if (!out.empty()) out += "|";
        out += part;
    };
    if (col.with_action) append("A");
    for (const auto& [var, level] : col.level_matches) {
        append(schema.variable(var).name + "=" + schema.variable(var).levels[level]);
    }
    if (col.period_round == 1) append("S1");
    if (col.period_round == 2) append("S2");
    if (out.empty()) out = "1";
    return out;
}

}  // namespace generative_detail

inline void write_coefficients_csv(std::ostream& os, const GenerativeModel& model) {
    os << "term_id,factors,interaction_order,period_round,value\n";
    const auto& schema = model.design.schema();
    char buf[64];
    for (std::size_t j = 0; j < model.design.cols(); ++j) {
        const auto& col = model.design.columns()[j];
        std::snprintf(buf, sizeof(buf), "%.17g", model.coefficients(static_cast<Eigen::Index>(j)));
        os << col.name << "," << generative_detail::column_factors(col, schema) << ","
           << col.interaction_order << "," << col.period_round << "," << buf << "\n";
    }
}

inline void write_coefficients_csv(const std::string& path, const GenerativeModel& model) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    write_coefficients_csv(os, model);
}

// Reads a coefficient file back against the matching setting spec. Column
// names must agree exactly with the design expansion for the given schema.
inline GenerativeModel read_coefficients_csv(std::istream& is, int setting,
                                             const CovariateSchema& schema) {
    GenerativeModel model;
    model.setting = setting;
    model.spec = setting == 1 ? setting1_spec(schema) : setting2_spec(schema);
    model.design = ExpandedDesign::build(model.spec, schema);
    model.coefficients.resize(static_cast<Eigen::Index>(model.design.cols()));

    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("coefficient csv: empty file");
    std::size_t row = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string term_id, factors, order, round, value;
        std::getline(ss, term_id, ',');
        std::getline(ss, factors, ',');
        std::getline(ss, order, ',');
        std::getline(ss, round, ',');
        std::getline(ss, value, ',');
        if (row >= model.design.cols()) throw std::runtime_error("coefficient csv: too many rows");
        if (model.design.columns()[row].name != term_id) {
            throw std::runtime_error("coefficient csv: column '" + term_id +
                                     "' does not match expected '" +
                                     model.design.columns()[row].name + "'");
        }
        model.coefficients(static_cast<Eigen::Index>(row)) = std::stod(value);
        ++row;
    }
    if (row != model.design.cols()) throw std::runtime_error("coefficient csv: missing rows");
    return model;
}

inline GenerativeModel read_coefficients_csv(const std::string& path, int setting,
                                             const CovariateSchema& schema) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    return read_coefficients_csv(is, setting, schema);
}

}  // namespace jitai
