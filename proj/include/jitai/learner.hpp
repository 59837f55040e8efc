#pragma once

// Hierarchical Bayesian logistic regression over a ModelSpec's design matrix:
// population coefficients with interaction-order-scaled shrinkage priors,
// participant-level deviations with a shared per-term scale (non-centered),
// NUTS sampling, and the convergence checks that define a "broken" fit.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jitai/design.hpp"
#include "jitai/diagnostics.hpp"
#include "jitai/domain.hpp"
#include "jitai/model_spec.hpp"
#include "jitai/numeric.hpp"
#include "jitai/nuts.hpp"
#include "jitai/prior.hpp"
#include "jitai/rng.hpp"

namespace jitai {

struct SamplerConfig {
    int chains = 4;
    int warmup_draws = 1000;
    int kept_draws = 1000;  // per chain
    std::uint64_t seed = 0;
    double target_acceptance = 0.8;
    int max_depth = 10;

    void validate() const {
        if (chains < 2) throw std::invalid_argument("sampler: chains must be >= 2");
        if (warmup_draws < 0) throw std::invalid_argument("sampler: warmup_draws must be >= 0");
        if (kept_draws < 1) throw std::invalid_argument("sampler: kept_draws must be >= 1");
        if (!(target_acceptance > 0.0 && target_acceptance < 1.0)) {
            throw std::invalid_argument("sampler: target_acceptance must be in (0,1)");
        }
    }

    // Policy-facing fits need enough draws for stable tail fractions.
    void validate_for_policy() const {
        validate();
        if (kept_draws < 500) {
            throw std::invalid_argument("sampler: policy use requires kept_draws >= 500 per chain");
        }
    }
};

enum class FitStatus { Ok, BrokenNoDraws, BrokenMixing };

inline const char* fit_status_name(FitStatus s) {
    switch (s) {
        case FitStatus::Ok: return "ok";
        case FitStatus::BrokenNoDraws: return "broken-no-draws";
        case FitStatus::BrokenMixing: return "broken-mixing";
    }
    return "?";
}

struct FitHealth {
    FitStatus status = FitStatus::Ok;
    std::vector<std::string> offending;  // diagnostics that triggered breakage

    bool ok() const { return status == FitStatus::Ok; }
};

inline constexpr double kRhatBreakThreshold = 1.05;
inline constexpr double kDivergenceBreakFraction = 0.01;

struct BaselineRoster {
    std::map<std::int64_t, ParticipantBaseline> by_participant;
    BaselineStats stats;

    static BaselineRoster make(const std::map<std::int64_t, ParticipantBaseline>& entries) {
        BaselineRoster r;
        r.by_participant = entries;
        std::vector<ParticipantBaseline> values;
        values.reserve(entries.size());
        for (const auto& [_, v] : entries) values.push_back(v);
        r.stats = BaselineStats::from_roster(values);
        return r;
    }
};

// Sampled coefficient draws in transformed space, aligned to the spec's
// expanded coefficient order: population coefficients first, then one shared
// scale per random term, then per-participant deviations.
struct PosteriorDraws {
    Eigen::MatrixXd draws;  // total kept draws x parameters
    std::vector<std::string> param_names;
    Eigen::VectorXd rhat;
    Eigen::VectorXd ess;
    int divergences = 0;
    int sampled_iterations = 0;  // kept iterations across chains
    int chains = 0;
    double wall_seconds = 0.0;

    ModelSpec spec;
    ExpandedDesign fixed_design;
    ExpandedDesign random_design;
    std::vector<std::int64_t> participant_ids;  // deviation block order
    std::size_t n_fixed = 0;
    std::size_t n_scales = 0;

    std::size_t n_random_cols() const { return random_design.cols(); }

    std::optional<std::size_t> participant_block(std::int64_t pid) const {
        for (std::size_t i = 0; i < participant_ids.size(); ++i) {
            if (participant_ids[i] == pid) return i;
        }
        return std::nullopt;
    }

    double divergence_fraction() const {
        return sampled_iterations > 0 ? static_cast<double>(divergences) / sampled_iterations : 0.0;
    }
};

namespace learner_detail {

// Design rows stored sparse: one-hot products leave most entries zero.
struct SparseRows {
    std::vector<int> col;
    std::vector<double> val;
    std::vector<std::size_t> rowptr;  // size n+1

    static SparseRows from_dense(const Eigen::MatrixXd& m) {
        SparseRows s;
        s.rowptr.push_back(0);
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                if (m(i, j) != 0.0) {
                    s.col.push_back(static_cast<int>(j));
                    s.val.push_back(m(i, j));
                }
            }
            s.rowptr.push_back(s.col.size());
        }
        return s;
    }
};

struct HierarchicalLogistic {
    SparseRows x;  // n x p fixed design
    SparseRows z;  // n x q random design
    Eigen::VectorXd y;
    std::vector<int> row_participant;  // index into participant block order
    Eigen::VectorXd fixed_scale;       // prior scale per fixed column
    Eigen::VectorXd random_scale;      // hyperprior scale per random term
    std::vector<int> col_term;         // random column -> random term index
    PriorFamily family = PriorFamily::StudentT7;
    double random_scale_df = 3.0;
    int n_participants = 0;
    Eigen::Index n_fixed_cols = 0;
    Eigen::Index n_random_cols = 0;
    mutable Eigen::ArrayXd eta_, expnabs_, resid_;  // per-instance scratch

    Eigen::Index p() const { return n_fixed_cols; }
    Eigen::Index q() const { return n_random_cols; }
    Eigen::Index k() const { return random_scale.size(); }
    Eigen::Index dim() const { return p() + k() + n_participants * q(); }

    // theta = [beta, log tau, u]; returns log posterior and fills grad.
    double operator()(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const {
        const auto np = p(), nq = q(), nk = k();
        const auto n = static_cast<Eigen::Index>(y.size());
        const auto beta = theta.head(np);
        const auto lambda = theta.segment(np, nk);
        grad.setZero(theta.size());

        Eigen::VectorXd tau(nk);
        for (Eigen::Index i = 0; i < nk; ++i) tau(i) = std::exp(lambda(i));

        eta_.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            double eta = 0.0;
            for (std::size_t s = x.rowptr[i]; s < x.rowptr[i + 1]; ++s) {
                eta += x.val[s] * beta(x.col[s]);
            }
            const auto block = np + nk + static_cast<Eigen::Index>(row_participant[i]) * nq;
            for (std::size_t s = z.rowptr[i]; s < z.rowptr[i + 1]; ++s) {
                eta += z.val[s] * tau(col_term[z.col[s]]) * theta(block + z.col[s]);
            }
            eta_(i) = eta;
        }

        // With t = exp(-|eta|): log1p_exp(eta) = max(eta, 0) + log1p(t) and
        // sigmoid(eta) = (eta >= 0 ? 1 : t) / (1 + t); one exp per row, SIMD.
        expnabs_ = (-eta_.abs()).exp();
        double logp = (y.array() * eta_).sum() -
                      (eta_.max(0.0) + expnabs_.log1p()).sum();
        resid_ = y.array() -
                 (eta_ >= 0.0).select(1.0, expnabs_) / (1.0 + expnabs_);

        for (Eigen::Index i = 0; i < n; ++i) {
            const double resid = resid_(i);
            for (std::size_t s = x.rowptr[i]; s < x.rowptr[i + 1]; ++s) {
                grad(x.col[s]) += x.val[s] * resid;
            }
            const auto block = np + nk + static_cast<Eigen::Index>(row_participant[i]) * nq;
            for (std::size_t s = z.rowptr[i]; s < z.rowptr[i + 1]; ++s) {
                const int c = z.col[s];
                const int t = col_term[c];
                grad(block + c) += z.val[s] * tau(t) * resid;
                grad(np + t) += z.val[s] * tau(t) * theta(block + c) * resid;
            }
        }

        // Population priors, zero-centered with per-column scales.
        for (Eigen::Index j = 0; j < np; ++j) {
            const double s = fixed_scale(j);
            const double b = beta(j);
            if (family == PriorFamily::Gaussian) {
                logp += -0.5 * b * b / (s * s);
                grad(j) += -b / (s * s);
            } else {
                constexpr double nu = 7.0;
                logp += -0.5 * (nu + 1.0) * std::log1p(b * b / (nu * s * s));
                grad(j) += -(nu + 1.0) * b / (nu * s * s + b * b);
            }
        }
        // Half-t hyperpriors on the shared deviation scales (log parameterization).
        for (Eigen::Index t = 0; t < nk; ++t) {
            const double a = random_scale(t);
            const double nu = random_scale_df;
            const double tt = tau(t);
            logp += -0.5 * (nu + 1.0) * std::log1p(tt * tt / (nu * a * a)) + lambda(t);
            grad(np + t) += -(nu + 1.0) * tt * tt / (nu * a * a + tt * tt) + 1.0;
        }
        // Standard-normal deviations (non-centered parameterization).
        const auto nu_block = theta.tail(theta.size() - np - nk);
        logp += -0.5 * nu_block.squaredNorm();
        grad.tail(theta.size() - np - nk) += -nu_block;
        return logp;
    }
};

}  // namespace learner_detail

// Fits the spec to the data. Zero rows are legal: the posterior then equals
// the prior and is sampled as such. Numerical failure yields
// status broken-no-draws with no partial output.
inline std::pair<PosteriorDraws, FitHealth> fit_posterior(
    std::span<const DecisionRecord> data, const ModelSpec& spec, const CovariateSchema& schema,
    const PriorSpec& prior, const SamplerConfig& cfg, const BaselineRoster* roster = nullptr) {
    cfg.validate();
    prior.validate();
    spec.validate(schema);
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto v = validate_context(data[i].context, schema);
        if (!v.ok) {
            throw std::invalid_argument("fit: record " + std::to_string(i) +
                                        " has invalid context (" + v.variable + ", " + v.level + ")");
        }
    }

    const auto t_start = std::chrono::steady_clock::now();

    PosteriorDraws out;
    out.spec = spec;
    std::optional<BaselineStats> stats;
    if (roster) stats = roster->stats;
    out.fixed_design = ExpandedDesign::build(spec, schema, TermScope::PopulationFixed, stats);
    out.random_design = ExpandedDesign::build(spec, schema, TermScope::ParticipantRandom, stats);

    std::set<std::int64_t> pid_set;
    for (const auto& r : data) pid_set.insert(r.participant_id);
    if (out.random_design.cols() > 0) {
        out.participant_ids.assign(pid_set.begin(), pid_set.end());
    }

    learner_detail::HierarchicalLogistic model;
    model.family = prior.family;
    model.random_scale_df = prior.random_scale_df;
    model.n_participants = static_cast<int>(out.participant_ids.size());

    std::vector<ParticipantBaseline> attrs_by_row;
    const std::vector<ParticipantBaseline>* attrs_ptr = nullptr;
    if (roster) {
        attrs_by_row.reserve(data.size());
        for (const auto& r : data) {
            auto it = roster->by_participant.find(r.participant_id);
            if (it == roster->by_participant.end()) {
                throw std::invalid_argument("fit: participant " +
                                            std::to_string(r.participant_id) + " missing from roster");
            }
            attrs_by_row.push_back(it->second);
        }
        attrs_ptr = &attrs_by_row;
    }

    model.x = learner_detail::SparseRows::from_dense(out.fixed_design.matrix(data, attrs_ptr));
    model.z = learner_detail::SparseRows::from_dense(out.random_design.matrix(data, attrs_ptr));
    model.n_fixed_cols = static_cast<Eigen::Index>(out.fixed_design.cols());
    model.n_random_cols = static_cast<Eigen::Index>(out.random_design.cols());
    model.y.resize(static_cast<Eigen::Index>(data.size()));
    model.row_participant.resize(data.size(), 0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        model.y(static_cast<Eigen::Index>(i)) = data[i].reward.opened ? 1.0 : 0.0;
        if (!out.participant_ids.empty()) {
            model.row_participant[i] =
                static_cast<int>(*out.participant_block(data[i].participant_id));
        }
    }

    model.fixed_scale.resize(static_cast<Eigen::Index>(out.fixed_design.cols()));
    for (std::size_t j = 0; j < out.fixed_design.cols(); ++j) {
        model.fixed_scale(static_cast<Eigen::Index>(j)) =
            prior_scale(out.fixed_design.columns()[j].interaction_order, prior);
    }

    // Distinct random terms, in design order; each gets one shared scale.
    std::vector<std::size_t> random_terms;
    model.col_term.resize(out.random_design.cols());
    for (std::size_t c = 0; c < out.random_design.cols(); ++c) {
        const auto ti = out.random_design.columns()[c].term_index;
        std::size_t slot = random_terms.size();
        for (std::size_t k = 0; k < random_terms.size(); ++k) {
            if (random_terms[k] == ti) slot = k;
        }
        if (slot == random_terms.size()) random_terms.push_back(ti);
        model.col_term[c] = static_cast<int>(slot);
    }
    model.random_scale.resize(static_cast<Eigen::Index>(random_terms.size()));
    for (std::size_t k = 0; k < random_terms.size(); ++k) {
        model.random_scale(static_cast<Eigen::Index>(k)) =
            prior_scale(spec.terms[random_terms[k]].interaction_order(), prior);
    }

    const auto np = model.p();
    const auto nk = model.k();
    const auto nq = model.q();
    const auto n_participants = static_cast<Eigen::Index>(out.participant_ids.size());
    const auto dim = model.dim();

    NutsConfig nuts_cfg;
    nuts_cfg.warmup = cfg.warmup_draws;
    nuts_cfg.draws = cfg.kept_draws;
    nuts_cfg.max_depth = cfg.max_depth;
    nuts_cfg.target_accept = cfg.target_acceptance;

    std::vector<Eigen::MatrixXd> chain_draws;  // transformed: [beta, tau, b]
    int divergences = 0;
    try {
        for (int c = 0; c < cfg.chains; ++c) {
            Rng rng(derive_seed(cfg.seed, "chain", static_cast<std::uint64_t>(c)));
            Eigen::VectorXd init(dim);
            for (Eigen::Index j = 0; j < np; ++j) init(j) = 0.1 * model.fixed_scale(j) * rng.normal();
            for (Eigen::Index t = 0; t < nk; ++t) {
                init(np + t) = std::log(0.5 * model.random_scale(t)) + 0.1 * rng.normal();
            }
            for (Eigen::Index j = np + nk; j < dim; ++j) init(j) = 0.1 * rng.normal();

            auto res = run_nuts_chain(model, init, nuts_cfg, rng);
            divergences += res.divergences;

            Eigen::MatrixXd transformed(res.draws.rows(), dim);
            for (Eigen::Index d = 0; d < res.draws.rows(); ++d) {
                transformed.row(d).head(np) = res.draws.row(d).head(np);
                for (Eigen::Index t = 0; t < nk; ++t) {
                    transformed(d, np + t) = std::exp(res.draws(d, np + t));
                }
                for (Eigen::Index pi = 0; pi < n_participants; ++pi) {
                    for (Eigen::Index cc = 0; cc < nq; ++cc) {
                        const auto idx = np + nk + pi * nq + cc;
                        transformed(d, idx) =
                            transformed(d, np + model.col_term[cc]) * res.draws(d, idx);
                    }
                }
            }
            chain_draws.push_back(std::move(transformed));
        }
    } catch (const std::exception& e) {
        FitHealth health;
        health.status = FitStatus::BrokenNoDraws;
        health.offending.push_back(e.what());
        return {PosteriorDraws{}, health};
    }

    out.n_fixed = static_cast<std::size_t>(np);
    out.n_scales = static_cast<std::size_t>(nk);
    out.chains = cfg.chains;
    out.divergences = divergences;
    out.sampled_iterations = cfg.chains * cfg.kept_draws;
    out.param_names.reserve(static_cast<std::size_t>(dim));
    for (const auto& col : out.fixed_design.columns()) out.param_names.push_back(col.name);
    for (std::size_t k = 0; k < random_terms.size(); ++k) {
        const auto& t = out.spec.terms[random_terms[k]];
        std::string nm = std::string("tau:") + term_kind_name(t.kind);
        for (const auto& f : t.factors) nm += ":" + f;
        out.param_names.push_back(nm);
    }
    for (auto pid : out.participant_ids) {
        for (const auto& col : out.random_design.columns()) {
            out.param_names.push_back("b[" + std::to_string(pid) + "]:" + col.name);
        }
    }

    out.draws.resize(static_cast<Eigen::Index>(cfg.chains) * cfg.kept_draws, dim);
    for (int c = 0; c < cfg.chains; ++c) {
        out.draws.middleRows(static_cast<Eigen::Index>(c) * cfg.kept_draws, cfg.kept_draws) =
            chain_draws[static_cast<std::size_t>(c)];
    }
    if (!out.draws.allFinite()) {
        FitHealth health;
        health.status = FitStatus::BrokenNoDraws;
        health.offending.push_back("non-finite draws");
        return {PosteriorDraws{}, health};
    }

    out.rhat.resize(dim);
    out.ess.resize(dim);
    FitHealth health;
    for (Eigen::Index j = 0; j < dim; ++j) {
        out.rhat(j) = split_rhat(chain_draws, j);
        out.ess(j) = effective_sample_size(chain_draws, j);
        if (out.rhat(j) > kRhatBreakThreshold) {
            health.offending.push_back("split_rhat[" + out.param_names[static_cast<std::size_t>(j)] +
                                       "]=" + std::to_string(out.rhat(j)));
        }
    }
    if (out.divergence_fraction() > kDivergenceBreakFraction) {
        health.offending.push_back("divergence_fraction=" +
                                   std::to_string(out.divergence_fraction()));
    }
    if (!health.offending.empty()) health.status = FitStatus::BrokenMixing;

    out.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return {std::move(out), health};
}

struct PredictTarget {
    bool population = true;
    std::int64_t participant_id = 0;

    static PredictTarget population_level() { return {true, 0}; }
    static PredictTarget participant(std::int64_t pid) { return {false, pid}; }
};

// Per-draw success probabilities for one (context, action, clock) triple.
// Population-level targets use zero participant deviations.
inline Eigen::VectorXd predict_success(const PosteriorDraws& draws, const ContextVector& ctx,
                                       Action action, StudyClock clock, PredictTarget target,
                                       const ParticipantBaseline* attrs = nullptr) {
    if (draws.draws.rows() == 0) throw std::invalid_argument("predict: no posterior draws");
    auto v = validate_context(ctx, draws.fixed_design.schema());
    if (!v.ok) {
        throw std::invalid_argument("predict: invalid context (" + v.variable + ", " + v.level + ")");
    }
    const Eigen::RowVectorXd x = draws.fixed_design.row(ctx, action, clock, attrs);
    Eigen::VectorXd eta =
        draws.draws.leftCols(static_cast<Eigen::Index>(draws.n_fixed)) * x.transpose();
    if (!target.population) {
        if (auto block = draws.participant_block(target.participant_id)) {
            const Eigen::RowVectorXd zr = draws.random_design.row(ctx, action, clock, attrs);
            const auto offset = static_cast<Eigen::Index>(draws.n_fixed + draws.n_scales +
                                                          *block * draws.n_random_cols());
            eta += draws.draws.middleCols(offset,
                                          static_cast<Eigen::Index>(draws.n_random_cols())) *
                   zr.transpose();
        }
    }
    for (Eigen::Index i = 0; i < eta.size(); ++i) eta(i) = inv_logit(eta(i));
    return eta;
}

}  // namespace jitai
