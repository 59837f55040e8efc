#pragma once

// Self-contained no-U-turn sampler: multinomial sampling over dynamically
// doubled trajectories, dual-averaging step-size adaptation toward a target
// acceptance statistic, and a diagonal metric estimated during warmup.

#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

#include "jitai/rng.hpp"

namespace jitai {

struct NutsConfig {
    int warmup = 1000;
    int draws = 1000;
    int max_depth = 10;
    double target_accept = 0.8;
    double divergence_drop = 1000.0;  // joint log-density drop that flags a divergence
};

struct ChainResult {
    Eigen::MatrixXd draws;  // draws x dim
    int divergences = 0;    // post-warmup transitions containing a divergent leaf
    double step_size = 0.0;
    double mean_accept = 0.0;  // post-warmup average acceptance statistic
    Eigen::VectorXd inv_mass;
};

namespace nuts_detail {

struct PhasePoint {
    Eigen::VectorXd q;
    Eigen::VectorXd p;
    Eigen::VectorXd grad;
    double logp = 0.0;  // target log density at q

    double joint(const Eigen::VectorXd& inv_mass) const {
        return logp - 0.5 * p.dot(inv_mass.cwiseProduct(p));
    }
};

// One leapfrog step of size eps (signed). Returns false if the density is not
// finite at the new point.
template <typename F>
bool leapfrog(const F& logp_grad, const Eigen::VectorXd& inv_mass, double eps, PhasePoint& z) {
    z.p += 0.5 * eps * z.grad;
    z.q += eps * inv_mass.cwiseProduct(z.p);
    z.logp = logp_grad(z.q, z.grad);
    if (!std::isfinite(z.logp)) return false;
    z.p += 0.5 * eps * z.grad;
    return true;
}

inline bool uturn(const Eigen::VectorXd& q_minus, const Eigen::VectorXd& p_minus,
                  const Eigen::VectorXd& q_plus, const Eigen::VectorXd& p_plus,
                  const Eigen::VectorXd& inv_mass) {
    const Eigen::VectorXd dq = inv_mass.cwiseProduct(q_plus - q_minus);
    return p_plus.dot(dq) < 0.0 || p_minus.dot(dq) < 0.0;
}

struct Subtree {
    PhasePoint minus;  // backward-most state
    PhasePoint plus;   // forward-most state
    Eigen::VectorXd sample;
    double log_weight = -std::numeric_limits<double>::infinity();
    double sum_accept = 0.0;
    int leaves = 0;
    bool stop = false;  // divergence or internal U-turn
    bool diverged = false;
};

inline double log_sum_exp(double a, double b) {
    const double m = a > b ? a : b;
    if (m == -std::numeric_limits<double>::infinity()) return m;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Builds a balanced subtree of 2^depth leapfrog states extending from `edge`
// in `direction`, accumulating the multinomial weight and acceptance sums.
template <typename F>
Subtree build_subtree(const F& logp_grad, const Eigen::VectorXd& inv_mass, double eps,
                      int direction, int depth, const PhasePoint& edge, double joint0,
                      double divergence_drop, Rng& rng) {
    if (depth == 0) {
        Subtree leaf;
        PhasePoint z = edge;
        const bool finite = leapfrog(logp_grad, inv_mass, direction * eps, z);
        leaf.leaves = 1;
        if (!finite) {
            leaf.stop = true;
            leaf.diverged = true;
            return leaf;
        }
        const double joint = z.joint(inv_mass);
        const double delta = joint - joint0;
        leaf.sum_accept = delta > 0.0 ? 1.0 : std::exp(delta);
        if (delta < -divergence_drop) {
            leaf.stop = true;
            leaf.diverged = true;
            return leaf;
        }
        leaf.log_weight = joint;
        leaf.sample = z.q;
        leaf.minus = z;
        leaf.plus = std::move(z);
        return leaf;
    }

    Subtree first = build_subtree(logp_grad, inv_mass, eps, direction, depth - 1, edge, joint0,
                                  divergence_drop, rng);
    if (first.stop) return first;
    const PhasePoint& next_edge = direction > 0 ? first.plus : first.minus;
    Subtree second = build_subtree(logp_grad, inv_mass, eps, direction, depth - 1, next_edge,
                                   joint0, divergence_drop, rng);
    first.sum_accept += second.sum_accept;
    first.leaves += second.leaves;
    if (second.stop) {
        first.stop = true;
        first.diverged = first.diverged || second.diverged;
        return first;
    }
    const double total = log_sum_exp(first.log_weight, second.log_weight);
    if (std::log(rng.uniform_pos()) < second.log_weight - total) {
        first.sample = std::move(second.sample);
    }
    first.log_weight = total;
    if (direction > 0) {
        first.plus = std::move(second.plus);
    } else {
        first.minus = std::move(second.minus);
    }
    if (uturn(first.minus.q, first.minus.p, first.plus.q, first.plus.p, inv_mass)) {
        first.stop = true;
    }
    return first;
}

struct Transition {
    Eigen::VectorXd q;
    double accept_stat = 0.0;
    bool diverged = false;
};

template <typename F>
Transition transition(const F& logp_grad, const Eigen::VectorXd& inv_mass, double eps,
                      int max_depth, double divergence_drop, const Eigen::VectorXd& q0,
                      double logp0, const Eigen::VectorXd& grad0, Rng& rng) {
    const auto dim = q0.size();
    PhasePoint init;
    init.q = q0;
    init.grad = grad0;
    init.logp = logp0;
    init.p.resize(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
        init.p(i) = rng.normal() / std::sqrt(inv_mass(i));
    }
    const double joint0 = init.joint(inv_mass);

    PhasePoint minus = init;
    PhasePoint plus = init;
    Eigen::VectorXd sample = q0;
    double log_weight = joint0;
    double sum_accept = 0.0;
    int leaves = 0;
    bool diverged = false;

    for (int depth = 0; depth < max_depth; ++depth) {
        const int direction = rng.bernoulli(0.5) ? 1 : -1;
        const PhasePoint& edge = direction > 0 ? plus : minus;
        Subtree sub = build_subtree(logp_grad, inv_mass, eps, direction, depth, edge, joint0,
                                    divergence_drop, rng);
        sum_accept += sub.sum_accept;
        leaves += sub.leaves;
        diverged = diverged || sub.diverged;
        if (sub.stop) break;
        // Biased progressive sampling favors the new half of the trajectory.
        const double accept_new = std::exp(sub.log_weight - log_weight);
        if (rng.uniform() < accept_new) sample = sub.sample;
        log_weight = log_sum_exp(log_weight, sub.log_weight);
        if (direction > 0) {
            plus = std::move(sub.plus);
        } else {
            minus = std::move(sub.minus);
        }
        if (uturn(minus.q, minus.p, plus.q, plus.p, inv_mass)) break;
    }

    Transition t;
    t.q = std::move(sample);
    t.accept_stat = leaves > 0 ? sum_accept / leaves : 0.0;
    t.diverged = diverged;
    return t;
}

// Doubles/halves the step size until one leapfrog step crosses 50% acceptance.
template <typename F>
double find_initial_step(const F& logp_grad, const Eigen::VectorXd& inv_mass,
                         const Eigen::VectorXd& q0, double logp0, const Eigen::VectorXd& grad0,
                         Rng& rng) {
    double eps = 1.0;
    PhasePoint z;
    z.q = q0;
    z.grad = grad0;
    z.logp = logp0;
    z.p.resize(q0.size());
    for (Eigen::Index i = 0; i < q0.size(); ++i) z.p(i) = rng.normal() / std::sqrt(inv_mass(i));
    const double joint0 = z.joint(inv_mass);

    auto delta_at = [&](double step) {
        PhasePoint trial = z;
        if (!leapfrog(logp_grad, inv_mass, step, trial)) {
            return -std::numeric_limits<double>::infinity();
        }
        return trial.joint(inv_mass) - joint0;
    };
    double delta = delta_at(eps);
    const double dir = delta > std::log(0.5) ? 1.0 : -1.0;
    for (int iter = 0; iter < 100; ++iter) {
        eps *= dir > 0 ? 2.0 : 0.5;
        delta = delta_at(eps);
        if (dir > 0 ? delta <= std::log(0.5) : delta > std::log(0.5)) break;
        if (eps > 1e7 || eps < 1e-10) break;
    }
    return eps;
}

struct DualAveraging {
    double mu = 0.0;
    double log_eps = 0.0;
    double log_eps_bar = 0.0;
    double h_bar = 0.0;
    int count = 0;
    double target = 0.8;

    void reset(double eps0, double target_accept) {
        mu = std::log(10.0 * eps0);
        log_eps = std::log(eps0);
        log_eps_bar = 0.0;
        h_bar = 0.0;
        count = 0;
        target = target_accept;
    }
    void update(double accept_stat) {
        constexpr double gamma = 0.05, t0 = 10.0, kappa = 0.75;
        ++count;
        const double m = static_cast<double>(count);
        h_bar = (1.0 - 1.0 / (m + t0)) * h_bar + (target - accept_stat) / (m + t0);
        log_eps = mu - std::sqrt(m) / gamma * h_bar;
        const double w = std::pow(m, -kappa);
        log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
    }
    double current() const { return std::exp(log_eps); }
    double adapted() const { return std::exp(log_eps_bar); }
};

}  // namespace nuts_detail

// Runs one chain. logp_grad(q, grad) must return the log target density and
// fill the gradient. Throws std::runtime_error if the density is not finite
// at the initial point.
template <typename F>
ChainResult run_nuts_chain(const F& logp_grad, const Eigen::VectorXd& init, const NutsConfig& cfg,
                           Rng& rng) {
    using namespace nuts_detail;
    const auto dim = init.size();

    Eigen::VectorXd q = init;
    Eigen::VectorXd grad(dim);
    double logp = logp_grad(q, grad);
    if (!std::isfinite(logp)) {
        throw std::runtime_error("nuts: log density not finite at the initial point");
    }

    Eigen::VectorXd inv_mass = Eigen::VectorXd::Ones(dim);
    DualAveraging da;
    da.reset(find_initial_step(logp_grad, inv_mass, q, logp, grad, rng), cfg.target_accept);

    // Warmup: step-size adaptation throughout; draws from the middle window
    // feed a diagonal metric estimate, after which the step size re-adapts.
    const int w_collect_start = cfg.warmup / 4;
    const int w_collect_end = (cfg.warmup * 3) / 4;
    Eigen::VectorXd welford_mean = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd welford_m2 = Eigen::VectorXd::Zero(dim);
    long welford_n = 0;

    for (int it = 0; it < cfg.warmup; ++it) {
        auto t = transition(logp_grad, inv_mass, da.current(), cfg.max_depth, cfg.divergence_drop,
                            q, logp, grad, rng);
        q = std::move(t.q);
        logp = logp_grad(q, grad);
        da.update(t.accept_stat);
        if (it >= w_collect_start && it < w_collect_end) {
            ++welford_n;
            const Eigen::VectorXd delta = q - welford_mean;
            welford_mean += delta / static_cast<double>(welford_n);
            welford_m2 += delta.cwiseProduct(q - welford_mean);
        }
        if (it + 1 == w_collect_end && welford_n > 1) {
            const double n = static_cast<double>(welford_n);
            Eigen::VectorXd var = welford_m2 / (n - 1.0);
            // Regularize toward a small diagonal, as adaptive HMC samplers do.
            var = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
            inv_mass = var.cwiseMax(1e-8);
            da.reset(find_initial_step(logp_grad, inv_mass, q, logp, grad, rng),
                     cfg.target_accept);
        }
    }

    const double eps = cfg.warmup > 0 ? da.adapted() : da.current();

    ChainResult result;
    result.draws.resize(cfg.draws, dim);
    result.step_size = eps;
    result.inv_mass = inv_mass;
    double accept_sum = 0.0;
    for (int it = 0; it < cfg.draws; ++it) {
        auto t = transition(logp_grad, inv_mass, eps, cfg.max_depth, cfg.divergence_drop, q, logp,
                            grad, rng);
        q = std::move(t.q);
        logp = logp_grad(q, grad);
        if (t.diverged) ++result.divergences;
        accept_sum += t.accept_stat;
        result.draws.row(it) = q.transpose();
    }
    result.mean_accept = cfg.draws > 0 ? accept_sum / cfg.draws : 0.0;
    return result;
}

}  // namespace jitai
