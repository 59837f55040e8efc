#pragma once

// One-hot expansion of a ModelSpec into named design columns, and row
// evaluation for (context, action, study clock) triples. Baseline age enters
// standardized against the roster; gender enters as an indicator against a
// reference category.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jitai/domain.hpp"
#include "jitai/model_spec.hpp"

namespace jitai {

struct BaselineStats {
    double age_mean = 0.0;
    double age_sd = 1.0;
    std::string gender_reference;

    static BaselineStats from_roster(std::span<const ParticipantBaseline> roster) {
        if (roster.empty()) throw std::invalid_argument("baseline stats: empty roster");
        BaselineStats s;
        double sum = 0.0;
        for (const auto& p : roster) sum += p.age;
        s.age_mean = sum / static_cast<double>(roster.size());
        double ss = 0.0;
        for (const auto& p : roster) ss += (p.age - s.age_mean) * (p.age - s.age_mean);
        s.age_sd = roster.size() > 1 ? std::sqrt(ss / static_cast<double>(roster.size() - 1)) : 1.0;
        if (s.age_sd <= 0.0) s.age_sd = 1.0;
        s.gender_reference = roster.front().gender;
        for (const auto& p : roster) {
            if (p.gender < s.gender_reference) s.gender_reference = p.gender;
        }
        return s;
    }
};

struct DesignColumn {
    std::size_t term_index = 0;  // into the originating term list
    std::string name;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> level_matches;  // (variable, level)
    bool with_action = false;
    int period_round = 0;
    bool with_age = false;
    bool with_gender = false;
    int interaction_order = 1;
};

// Expanded columns for all terms of one scope in a ModelSpec.
class ExpandedDesign {
public:
    ExpandedDesign() = default;

    static ExpandedDesign build(const ModelSpec& spec, const CovariateSchema& schema,
                                TermScope scope = TermScope::PopulationFixed,
                                std::optional<BaselineStats> baseline = std::nullopt) {
        ExpandedDesign d;
        d.schema_ = schema;
        d.baseline_ = baseline;
        for (std::size_t ti = 0; ti < spec.terms.size(); ++ti) {
            const auto& t = spec.terms[ti];
            if (t.scope != scope) continue;
            d.expand_term(ti, t);
        }
        return d;
    }

    std::size_t cols() const { return columns_.size(); }
    const std::vector<DesignColumn>& columns() const { return columns_; }
    const CovariateSchema& schema() const { return schema_; }

    double evaluate(const DesignColumn& c, const ContextVector& ctx, Action action,
                    StudyClock clock, const ParticipantBaseline* attrs = nullptr) const {
        if (c.period_round == 1 && !clock.s1()) return 0.0;
        if (c.period_round == 2 && !clock.s2()) return 0.0;
        if (c.with_action && action.send == 0) return 0.0;
        double x = 1.0;
        for (const auto& [var, level] : c.level_matches) {
            if (ctx.levels.at(var) != level) return 0.0;
        }
        if (c.with_age || c.with_gender) {
            if (!attrs || !baseline_) {
                throw std::invalid_argument("design: baseline term requires participant attributes");
            }
            if (c.with_age) x *= (attrs->age - baseline_->age_mean) / baseline_->age_sd;
            if (c.with_gender) x *= attrs->gender != baseline_->gender_reference ? 1.0 : 0.0;
        }
        return x;
    }

    using RowRef = Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

    void fill_row(RowRef out, const ContextVector& ctx, Action action, StudyClock clock,
                  const ParticipantBaseline* attrs = nullptr) const {
        for (std::size_t j = 0; j < columns_.size(); ++j) {
            out(static_cast<Eigen::Index>(j)) = evaluate(columns_[j], ctx, action, clock, attrs);
        }
    }

    Eigen::RowVectorXd row(const ContextVector& ctx, Action action, StudyClock clock,
                           const ParticipantBaseline* attrs = nullptr) const {
        Eigen::RowVectorXd r(static_cast<Eigen::Index>(columns_.size()));
        fill_row(r, ctx, action, clock, attrs);
        return r;
    }

    Eigen::MatrixXd matrix(std::span<const DecisionRecord> data,
                           const std::vector<ParticipantBaseline>* attrs_by_row = nullptr) const {
        Eigen::MatrixXd X(static_cast<Eigen::Index>(data.size()),
                          static_cast<Eigen::Index>(columns_.size()));
        for (std::size_t i = 0; i < data.size(); ++i) {
            const ParticipantBaseline* attrs =
                attrs_by_row ? &(*attrs_by_row)[i] : nullptr;
            fill_row(X.row(static_cast<Eigen::Index>(i)), data[i].context, data[i].action,
                     data[i].clock(), attrs);
        }
        return X;
    }

private:
    void expand_term(std::size_t term_index, const ModelTerm& t) {
        const int order = t.interaction_order();
        auto push = [&](std::string name,
                        std::vector<std::pair<std::uint32_t, std::uint32_t>> matches,
                        bool with_action, bool with_age = false, bool with_gender = false) {
            DesignColumn c;
            c.term_index = term_index;
            c.level_matches = std::move(matches);
            c.with_action = with_action;
            c.period_round = t.period_round;
            c.with_age = with_age;
            c.with_gender = with_gender;
            c.interaction_order = order;
            if (t.period_round == 1) name += name.empty() ? "S1" : ":S1";
            if (t.period_round == 2) name += name.empty() ? "S2" : ":S2";
            c.name = std::move(name);
            columns_.push_back(std::move(c));
        };
        auto non_reference_levels = [&](const std::string& var) {
            const auto v = schema_.variable_index(var);
            std::vector<std::pair<std::uint32_t, std::string>> out;
            const auto& cv = schema_.variable(v);
            for (std::size_t l = 0; l < cv.levels.size(); ++l) {
                if (l == cv.reference) continue;
                out.emplace_back(static_cast<std::uint32_t>(l), cv.name + "=" + cv.levels[l]);
            }
            return std::pair{static_cast<std::uint32_t>(v), out};
        };

        switch (t.kind) {
            case TermKind::Intercept:
                push(t.period_round == 0 ? "intercept" : "", {}, false);
                break;
            case TermKind::TreatmentMain:
                push("A", {}, true);
                break;
            case TermKind::Main: {
                auto [v, levels] = non_reference_levels(t.factors[0]);
                for (const auto& [l, nm] : levels) push(nm, {{v, l}}, false);
                break;
            }
            case TermKind::TreatmentByCovariate: {
                auto [v, levels] = non_reference_levels(t.factors[0]);
                for (const auto& [l, nm] : levels) push("A:" + nm, {{v, l}}, true);
                break;
            }
            case TermKind::TwoWay: {
                auto [va, la] = non_reference_levels(t.factors[0]);
                auto [vb, lb] = non_reference_levels(t.factors[1]);
                for (const auto& [l1, n1] : la) {
                    for (const auto& [l2, n2] : lb) {
                        push(n1 + ":" + n2, {{va, l1}, {vb, l2}}, false);
                    }
                }
                break;
            }
            case TermKind::TreatmentByTwoCovariates: {
                auto [va, la] = non_reference_levels(t.factors[0]);
                auto [vb, lb] = non_reference_levels(t.factors[1]);
                for (const auto& [l1, n1] : la) {
                    for (const auto& [l2, n2] : lb) {
                        push("A:" + n1 + ":" + n2, {{va, l1}, {vb, l2}}, true);
                    }
                }
                break;
            }
            case TermKind::BaselineMain:
                if (t.factors[0] == "age") {
                    push("age", {}, false, true, false);
                } else {
                    push("gender", {}, false, false, true);
                }
                break;
            case TermKind::BaselineByTreatment:
                if (t.factors[0] == "age") {
                    push("A:age", {}, true, true, false);
                } else {
                    push("A:gender", {}, true, false, true);
                }
                break;
            case TermKind::BaselineThreeWay:
                push("A:age:gender", {}, true, true, true);
                break;
        }
    }

    CovariateSchema schema_;
    std::optional<BaselineStats> baseline_;
    std::vector<DesignColumn> columns_;
};

}  // namespace jitai
