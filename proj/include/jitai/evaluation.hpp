#pragma once

// Trial scoring: per-step and cumulative regret against the clipped-optimal
// policy, replicate aggregation with interquartile bands, the binned
// calibration monitor, and the update failure monitor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "jitai/domain.hpp"
#include "jitai/generative.hpp"
#include "jitai/learner.hpp"

namespace jitai {

inline constexpr double kOptimalActionWeight = 0.95;

// Shortfall of the realized action's success probability against the
// clipped-optimal mixture (95% optimal, 5% other).
inline double step_regret(double p_opt, double p_other, double p_chosen) {
    for (double p : {p_opt, p_other, p_chosen}) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw std::invalid_argument("step_regret: probabilities must lie in [0,1]");
        }
    }
    if (p_opt < p_other) throw std::invalid_argument("step_regret: p_opt must be >= p_other");
    if (p_chosen != p_opt && p_chosen != p_other) {
        throw std::invalid_argument("step_regret: p_chosen must be one of p_opt/p_other");
    }
    return kOptimalActionWeight * p_opt + (1.0 - kOptimalActionWeight) * p_other - p_chosen;
}

// Expected-regret variant: scores the policy's send probability instead of
// the realized action.
inline double expected_step_regret(double p_send, double p_nosend, double send_prob) {
    const double p_opt = std::max(p_send, p_nosend);
    const double p_other = std::min(p_send, p_nosend);
    return kOptimalActionWeight * p_opt + (1.0 - kOptimalActionWeight) * p_other -
           (send_prob * p_send + (1.0 - send_prob) * p_nosend);
}

struct RegretTrace {
    std::vector<double> step;
    std::vector<double> cumulative;

    double final_cumulative() const {
        return cumulative.empty() ? 0.0 : cumulative.back();
    }
};

enum class RegretMode { Realized, Expected };

// Scores records in their given (decision-time) order. The optimal action
// maximizes the true success probability, ties breaking to not-send.
inline RegretTrace cumulative_regret(std::span<const DecisionRecord> records,
                                     RegretMode mode = RegretMode::Realized) {
    RegretTrace trace;
    trace.step.reserve(records.size());
    trace.cumulative.reserve(records.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (!r.has_true_probs()) {
            throw std::invalid_argument("cumulative_regret: record " + std::to_string(i) +
                                        " lacks true probabilities");
        }
        const double ps = *r.true_prob_send;
        const double pn = *r.true_prob_nosend;
        double value;
        if (mode == RegretMode::Expected) {
            value = expected_step_regret(ps, pn, r.policy_prob);
        } else {
            // A* = argmax, tie -> action 0 (regret is unaffected by the tie rule)
            const double p_opt = ps > pn ? ps : pn;
            const double p_other = ps > pn ? pn : ps;
            const double p_chosen = r.action.send ? ps : pn;
            value = step_regret(p_opt, p_other, p_chosen);
        }
        acc += value;
        trace.step.push_back(value);
        trace.cumulative.push_back(acc);
    }
    return trace;
}

// Recomputes the true probabilities from a generative model instead of
// trusting the logged ones.
inline RegretTrace cumulative_regret(std::span<const DecisionRecord> records,
                                     const GenerativeModel& model,
                                     RegretMode mode = RegretMode::Realized) {
    std::vector<DecisionRecord> scored(records.begin(), records.end());
    for (auto& r : scored) {
        r.true_prob_send = model.true_success_prob(r.context, Action{1}, r.clock());
        r.true_prob_nosend = model.true_success_prob(r.context, Action{0}, r.clock());
    }
    return cumulative_regret(scored, mode);
}

struct AggregateCurve {
    std::vector<double> mean;
    std::vector<double> q25;
    std::vector<double> q75;

    std::size_t size() const { return mean.size(); }
};

namespace eval_detail {

// Linear-interpolation quantile on a sorted copy (the common "type 7" rule).
inline double quantile(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

}  // namespace eval_detail

// Pointwise mean and interquartile band over cumulative-regret traces,
// truncated to the shortest trace.
inline AggregateCurve aggregate_replicates(std::span<const RegretTrace> traces) {
    if (traces.empty()) throw std::invalid_argument("aggregate_replicates: no traces");
    std::size_t len = traces.front().cumulative.size();
    for (const auto& t : traces) len = std::min(len, t.cumulative.size());

    AggregateCurve curve;
    curve.mean.resize(len);
    curve.q25.resize(len);
    curve.q75.resize(len);
    std::vector<double> column(traces.size());
    for (std::size_t i = 0; i < len; ++i) {
        double sum = 0.0;
        for (std::size_t k = 0; k < traces.size(); ++k) {
            column[k] = traces[k].cumulative[i];
            sum += column[k];
        }
        curve.mean[i] = sum / static_cast<double>(traces.size());
        curve.q25[i] = eval_detail::quantile(column, 0.25);
        curve.q75[i] = eval_detail::quantile(column, 0.75);
    }
    return curve;
}

// --- calibration monitor -----------------------------------------------------

struct CalibrationBin {
    double low = 0.0;
    double high = 0.0;
    std::size_t n = 0;
    double p_hat = 0.0;           // empirical send fraction
    double ci_low = 0.0;
    double ci_high = 0.0;
    bool has_ci = false;
    bool covers_midpoint = false;  // geometric bin midpoint
    double mean_logged_prob = 0.0;
};

struct CalibrationReport {
    double bin_width = 0.05;
    std::vector<CalibrationBin> bins;
};

// Bins decision points by logged policy probability (left-closed bins; 1.0
// folds into the last bin) and attaches 95% normal confidence intervals to
// the empirical send fractions.
inline CalibrationReport calibration_report(std::span<const DecisionRecord> records,
                                            double bin_width = 0.05) {
    const double inv = 1.0 / bin_width;
    const auto n_bins = static_cast<std::size_t>(std::lround(inv));
    if (n_bins < 1 || std::abs(inv - static_cast<double>(n_bins)) > 1e-9) {
        throw std::invalid_argument("calibration_report: bin width must divide 1 evenly");
    }

    CalibrationReport report;
    report.bin_width = bin_width;
    report.bins.resize(n_bins);
    std::vector<std::size_t> sends(n_bins, 0);
    std::vector<double> prob_sum(n_bins, 0.0);
    for (std::size_t b = 0; b < n_bins; ++b) {
        report.bins[b].low = bin_width * static_cast<double>(b);
        report.bins[b].high = bin_width * static_cast<double>(b + 1);
    }
    for (const auto& r : records) {
        if (!(r.policy_prob >= 0.0 && r.policy_prob <= 1.0)) {
            throw std::invalid_argument("calibration_report: policy_prob outside [0,1]");
        }
        auto b = static_cast<std::size_t>(r.policy_prob * inv);
        if (b >= n_bins) b = n_bins - 1;
        report.bins[b].n += 1;
        sends[b] += r.action.send ? 1 : 0;
        prob_sum[b] += r.policy_prob;
    }
    for (std::size_t b = 0; b < n_bins; ++b) {
        auto& bin = report.bins[b];
        if (bin.n == 0) continue;
        bin.p_hat = static_cast<double>(sends[b]) / static_cast<double>(bin.n);
        bin.mean_logged_prob = prob_sum[b] / static_cast<double>(bin.n);
        const double half =
            1.96 * std::sqrt(bin.p_hat * (1.0 - bin.p_hat) / static_cast<double>(bin.n));
        bin.ci_low = bin.p_hat - half;
        bin.ci_high = bin.p_hat + half;
        bin.has_ci = true;
        const double midpoint = bin.low + bin_width / 2.0;
        bin.covers_midpoint = bin.ci_low <= midpoint && midpoint <= bin.ci_high;
    }
    return report;
}

// --- failure monitor ----------------------------------------------------------

struct UpdateExecution {
    std::int64_t participant_id = 0;
    int scheduled_day = 0;
    FitHealth health;
    std::uint64_t posterior_checksum = 0;
};

struct FailureEntry {
    std::int64_t participant_id = 0;
    int scheduled_day = 0;
    bool executed = false;
    FitStatus status = FitStatus::Ok;
    std::vector<std::string> offending;
    std::uint64_t posterior_checksum = 0;
    bool flagged = false;
    std::string flag_reason;
};

struct FailureReport {
    std::vector<FailureEntry> entries;

    std::size_t flag_count() const {
        std::size_t n = 0;
        for (const auto& e : entries) n += e.flagged ? 1 : 0;
        return n;
    }
};

// One entry per expected (participant, update day): missing executions and
// broken fits are flagged, with the offending diagnostics attached.
inline FailureReport failure_report(
    std::span<const std::pair<std::int64_t, int>> expected_schedule,
    std::span<const UpdateExecution> executed) {
    FailureReport report;
    for (const auto& [pid, day] : expected_schedule) {
        FailureEntry entry;
        entry.participant_id = pid;
        entry.scheduled_day = day;
        const UpdateExecution* match = nullptr;
        for (const auto& e : executed) {
            if (e.participant_id == pid && e.scheduled_day == day) match = &e;
        }
        if (!match) {
            entry.flagged = true;
            entry.flag_reason = "missing-update";
        } else {
            entry.executed = true;
            entry.status = match->health.status;
            entry.offending = match->health.offending;
            entry.posterior_checksum = match->posterior_checksum;
            if (!match->health.ok()) {
                entry.flagged = true;
                entry.flag_reason = fit_status_name(match->health.status);
            }
        }
        report.entries.push_back(std::move(entry));
    }
    return report;
}

// --- plot-ready CSV emitters ---------------------------------------------------

inline void write_regret_curve_csv(std::ostream& os, const AggregateCurve& curve) {
    os << "decision_index,mean,q25,q75\n";
    char buf[160];
    for (std::size_t i = 0; i < curve.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", i, curve.mean[i], curve.q25[i],
                      curve.q75[i]);
        os << buf;
    }
}

inline void write_calibration_csv(std::ostream& os, const CalibrationReport& report) {
    os << "bin_low,bin_high,n,p_hat,ci_low,ci_high,covers\n";
    char buf[200];
    for (const auto& b : report.bins) {
        if (b.has_ci) {
            std::snprintf(buf, sizeof(buf), "%.6g,%.6g,%zu,%.17g,%.17g,%.17g,%d\n", b.low, b.high,
                          b.n, b.p_hat, b.ci_low, b.ci_high, b.covers_midpoint ? 1 : 0);
        } else {
            std::snprintf(buf, sizeof(buf), "%.6g,%.6g,%zu,,,,\n", b.low, b.high, b.n);
        }
        os << buf;
    }
}

}  // namespace jitai
