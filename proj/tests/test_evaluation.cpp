#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <sstream>

#include "jitai/evaluation.hpp"
#include "jitai/generative.hpp"
#include "jitai/rng.hpp"

using namespace jitai;

namespace {

DecisionRecord scored_rec(double p_send, double p_nosend, int action, double policy_prob = 0.8,
                          int day = 0) {
    DecisionRecord r;
    r.participant_id = 1;
    r.days_in_study = day;
    r.context.levels = {0};
    r.policy_prob = policy_prob;
    r.action = {action};
    r.reward = {0};
    r.true_prob_send = p_send;
    r.true_prob_nosend = p_nosend;
    return r;
}

}  // namespace

TEST_CASE("step regret fixtures") {
    CHECK(step_regret(0.6, 0.4, 0.6) == Catch::Approx(-0.01).margin(1e-15));
    CHECK(step_regret(0.6, 0.4, 0.4) == Catch::Approx(0.19).margin(1e-15));
    CHECK(step_regret(0.5, 0.5, 0.5) == Catch::Approx(0.0).margin(1e-15));

    CHECK_THROWS_AS(step_regret(1.2, 0.4, 0.4), std::invalid_argument);
    CHECK_THROWS_AS(step_regret(0.4, 0.6, 0.4), std::invalid_argument);
    CHECK_THROWS_AS(step_regret(0.6, 0.4, 0.5), std::invalid_argument);
}

TEST_CASE("step regret bounds hit at the two chosen-action cases") {
    for (double p_opt : {0.3, 0.6, 0.9}) {
        for (double gap : {0.0, 0.1, 0.25}) {
            const double p_other = p_opt - gap;
            if (p_other < 0.0) continue;
            CHECK(step_regret(p_opt, p_other, p_opt) == Catch::Approx(-0.05 * gap).margin(1e-12));
            CHECK(step_regret(p_opt, p_other, p_other) == Catch::Approx(0.95 * gap).margin(1e-12));
        }
    }
}

TEST_CASE("the clipped-optimal policy has zero expected regret") {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const double ps = rng.uniform();
        const double pn = rng.uniform();
        const double optimal_send_prob = ps >= pn ? 0.95 : 0.05;
        CHECK(std::abs(expected_step_regret(ps, pn, optimal_send_prob)) < 1e-12);
    }
}

TEST_CASE("cumulative regret") {
    SECTION("empty log gives an empty trace") {
        auto trace = cumulative_regret(std::span<const DecisionRecord>{});
        CHECK(trace.step.empty());
        CHECK(trace.cumulative.empty());
    }
    SECTION("all-optimal log accumulates -0.01 per step") {
        std::vector<DecisionRecord> log;
        for (int t = 0; t < 25; ++t) log.push_back(scored_rec(0.6, 0.4, 1));
        auto trace = cumulative_regret(log);
        for (int t = 0; t < 25; ++t) {
            CHECK(trace.cumulative[static_cast<std::size_t>(t)] ==
                  Catch::Approx(-0.01 * (t + 1)).margin(1e-12));
        }
    }
    SECTION("mixed log equals independently recomputed step sums") {
        Rng rng(17);
        std::vector<DecisionRecord> log;
        for (int t = 0; t < 10; ++t) {
            const double ps = rng.uniform();
            const double pn = rng.uniform();
            log.push_back(scored_rec(ps, pn, static_cast<int>(rng.uniform_int(2))));
        }
        auto trace = cumulative_regret(log);
        double acc = 0.0;
        for (std::size_t t = 0; t < log.size(); ++t) {
            const double ps = *log[t].true_prob_send;
            const double pn = *log[t].true_prob_nosend;
            const double p_opt = std::max(ps, pn);
            const double p_other = std::min(ps, pn);
            const double p_chosen = log[t].action.send ? ps : pn;
            acc += 0.95 * p_opt + 0.05 * p_other - p_chosen;
            CHECK(trace.cumulative[t] == Catch::Approx(acc).margin(1e-12));
        }
    }
    SECTION("missing true probabilities error") {
        std::vector<DecisionRecord> log = {scored_rec(0.6, 0.4, 1)};
        log[0].true_prob_send.reset();
        log[0].true_prob_nosend.reset();
        CHECK_THROWS_AS(cumulative_regret(log), std::invalid_argument);
    }
    SECTION("model overload recomputes the same trace as logged probabilities") {
        auto schema = CovariateSchema::make({{"x", {"no", "yes"}, 0}});
        auto model = sample_coefficients(1, schema, 8);
        Rng rng(3);
        std::vector<DecisionRecord> log;
        for (int t = 0; t < 30; ++t) {
            DecisionRecord r;
            r.participant_id = 0;
            r.days_in_study = static_cast<int>(rng.uniform_int(160));
            r.context.levels = {static_cast<std::uint32_t>(rng.uniform_int(2))};
            r.policy_prob = 0.8;
            r.action = {static_cast<int>(rng.uniform_int(2))};
            r.true_prob_send = model.true_success_prob(r.context, Action{1}, r.clock());
            r.true_prob_nosend = model.true_success_prob(r.context, Action{0}, r.clock());
            log.push_back(r);
        }
        auto from_log = cumulative_regret(log);
        auto from_model = cumulative_regret(log, model);
        REQUIRE(from_log.cumulative.size() == from_model.cumulative.size());
        for (std::size_t t = 0; t < from_log.cumulative.size(); ++t) {
            CHECK(from_log.cumulative[t] == Catch::Approx(from_model.cumulative[t]).margin(1e-12));
        }
    }
}

TEST_CASE("replicate aggregation") {
    SECTION("identical traces collapse the bands") {
        RegretTrace t;
        for (int i = 0; i < 10; ++i) {
            t.step.push_back(0.1);
            t.cumulative.push_back(0.1 * (i + 1));
        }
        std::vector<RegretTrace> traces = {t, t, t};
        auto curve = aggregate_replicates(traces);
        for (std::size_t i = 0; i < curve.size(); ++i) {
            CHECK(curve.mean[i] == Catch::Approx(curve.q25[i]));
            CHECK(curve.mean[i] == Catch::Approx(curve.q75[i]));
        }
    }
    SECTION("constant traces 0 and 2 average to 1") {
        RegretTrace a, b;
        for (int i = 0; i < 5; ++i) {
            a.cumulative.push_back(0.0);
            b.cumulative.push_back(2.0);
        }
        std::vector<RegretTrace> traces = {a, b};
        auto curve = aggregate_replicates(traces);
        for (double m : curve.mean) CHECK(m == Catch::Approx(1.0));
    }
    SECTION("quartiles match a sort-based reference and ignore permutation") {
        Rng rng(23);
        std::vector<RegretTrace> traces(50);
        for (auto& t : traces) {
            double acc = 0.0;
            for (int i = 0; i < 40; ++i) {
                acc += rng.normal();
                t.cumulative.push_back(acc);
            }
        }
        auto curve = aggregate_replicates(traces);

        // independent reference: explicit sort and linear interpolation
        for (std::size_t i = 0; i < curve.size(); i += 7) {
            std::vector<double> col;
            for (const auto& t : traces) col.push_back(t.cumulative[i]);
            std::sort(col.begin(), col.end());
            auto ref = [&](double q) {
                const double pos = q * (col.size() - 1);
                const auto lo = static_cast<std::size_t>(pos);
                const double frac = pos - lo;
                return lo + 1 < col.size() ? col[lo] * (1 - frac) + col[lo + 1] * frac
                                           : col.back();
            };
            CHECK(curve.q25[i] == Catch::Approx(ref(0.25)).margin(1e-12));
            CHECK(curve.q75[i] == Catch::Approx(ref(0.75)).margin(1e-12));
        }

        auto shuffled = traces;
        std::reverse(shuffled.begin(), shuffled.end());
        auto curve2 = aggregate_replicates(shuffled);
        for (std::size_t i = 0; i < curve.size(); ++i) {
            CHECK(curve.mean[i] == Catch::Approx(curve2.mean[i]).margin(1e-12));
            CHECK(curve.q25[i] == Catch::Approx(curve2.q25[i]).margin(1e-12));
        }
    }
    SECTION("traces truncate to the shortest") {
        RegretTrace a, b;
        for (int i = 0; i < 10; ++i) a.cumulative.push_back(1.0);
        for (int i = 0; i < 6; ++i) b.cumulative.push_back(2.0);
        std::vector<RegretTrace> traces = {a, b};
        CHECK(aggregate_replicates(traces).size() == 6);
    }
    SECTION("empty input errors") {
        CHECK_THROWS_AS(aggregate_replicates({}), std::invalid_argument);
    }
}

TEST_CASE("calibration report") {
    SECTION("hand-computed Wald interval for 77 of 100") {
        std::vector<DecisionRecord> log;
        for (int i = 0; i < 100; ++i) log.push_back(scored_rec(0.5, 0.5, i < 77 ? 1 : 0, 0.78));
        auto report = calibration_report(log);
        const auto& bin = report.bins[15];  // [0.75, 0.80)
        REQUIRE(bin.n == 100);
        CHECK(bin.p_hat == Catch::Approx(0.77));
        const double half = 1.96 * std::sqrt(0.77 * 0.23 / 100.0);
        CHECK(half == Catch::Approx(0.0825).margin(5e-5));
        CHECK(bin.ci_low == Catch::Approx(0.77 - half).margin(1e-12));
        CHECK(bin.ci_high == Catch::Approx(0.77 + half).margin(1e-12));
        CHECK(bin.covers_midpoint);  // 0.775 inside
    }
    SECTION("empty bins carry no interval") {
        std::vector<DecisionRecord> log = {scored_rec(0.5, 0.5, 1, 0.30)};
        auto report = calibration_report(log);
        int occupied = 0;
        for (const auto& bin : report.bins) {
            if (bin.n == 0) {
                CHECK_FALSE(bin.has_ci);
            } else {
                ++occupied;
            }
        }
        CHECK(occupied == 1);
    }
    SECTION("bin width must divide one") {
        CHECK_THROWS_AS(calibration_report({}, 0.07), std::invalid_argument);
        CHECK_NOTHROW(calibration_report({}, 0.1));
    }
    SECTION("probability 1.0 folds into the last bin") {
        std::vector<DecisionRecord> log = {scored_rec(0.5, 0.5, 1, 1.0)};
        auto report = calibration_report(log);
        CHECK(report.bins.back().n == 1);
    }
    SECTION("fairly drawn actions cover the within-bin mean about 95% of the time") {
        int covered = 0;
        const int runs = 200;
        for (int run = 0; run < runs; ++run) {
            Rng rng(derive_seed(900, "calib", static_cast<std::uint64_t>(run)));
            std::vector<DecisionRecord> log;
            for (int i = 0; i < 400; ++i) {
                log.push_back(scored_rec(0.5, 0.5, rng.bernoulli(0.8) ? 1 : 0, 0.8));
            }
            auto report = calibration_report(log);
            const auto& bin = report.bins[16];  // [0.80, 0.85)
            REQUIRE(bin.n == 400);
            if (bin.ci_low <= bin.mean_logged_prob && bin.mean_logged_prob <= bin.ci_high) {
                ++covered;
            }
        }
        CHECK(covered >= 180);
        CHECK(covered <= 200);
    }
}

TEST_CASE("failure report") {
    std::vector<std::pair<std::int64_t, int>> expected = {{1, 56}, {1, 112}, {2, 56}, {2, 112}};

    SECTION("all executed and healthy: zero flags") {
        std::vector<UpdateExecution> executed;
        for (const auto& [pid, day] : expected) executed.push_back({pid, day, {}, 42});
        auto report = failure_report(expected, executed);
        REQUIRE(report.entries.size() == 4);
        CHECK(report.flag_count() == 0);
        for (const auto& e : report.entries) CHECK(e.posterior_checksum == 42);
    }
    SECTION("one absent update is exactly one missing flag") {
        std::vector<UpdateExecution> executed = {{1, 56, {}, 1}, {1, 112, {}, 2}, {2, 56, {}, 3}};
        auto report = failure_report(expected, executed);
        CHECK(report.flag_count() == 1);
        const auto& last = report.entries.back();
        CHECK_FALSE(last.executed);
        CHECK(last.flag_reason == "missing-update");
    }
    SECTION("broken-mixing is flagged with diagnostics attached") {
        FitHealth broken;
        broken.status = FitStatus::BrokenMixing;
        broken.offending = {"split_rhat[A]=1.210000"};
        std::vector<UpdateExecution> executed = {
            {1, 56, broken, 9}, {1, 112, {}, 1}, {2, 56, {}, 2}, {2, 112, {}, 3}};
        auto report = failure_report(expected, executed);
        CHECK(report.flag_count() == 1);
        CHECK(report.entries[0].flag_reason == "broken-mixing");
        REQUIRE(report.entries[0].offending.size() == 1);
    }
}

TEST_CASE("csv emitters produce plot-ready tables") {
    RegretTrace t;
    for (int i = 0; i < 3; ++i) t.cumulative.push_back(0.5 * (i + 1));
    std::vector<RegretTrace> traces = {t, t};
    auto curve = aggregate_replicates(traces);
    std::stringstream regret_csv;
    write_regret_curve_csv(regret_csv, curve);
    CHECK(regret_csv.str().rfind("decision_index,mean,q25,q75\n0,0.5", 0) == 0);

    std::vector<DecisionRecord> log;
    for (int i = 0; i < 10; ++i) log.push_back(scored_rec(0.5, 0.5, 1, 0.42));
    std::stringstream calib_csv;
    write_calibration_csv(calib_csv, calibration_report(log));
    CHECK(calib_csv.str().find("bin_low,bin_high,n,p_hat,ci_low,ci_high,covers") == 0);
    CHECK(calib_csv.str().find("0.4,0.45,10,1,") != std::string::npos);
}
