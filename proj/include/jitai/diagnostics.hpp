#pragma once

// MCMC convergence diagnostics: split-R-hat and effective sample size over
// per-chain draw matrices.

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace jitai {

namespace diag_detail {

// Splits each chain in half, producing 2C sequences for one parameter.
inline std::vector<Eigen::VectorXd> split_sequences(const std::vector<Eigen::MatrixXd>& chains,
                                                    Eigen::Index param) {
    std::vector<Eigen::VectorXd> seqs;
    for (const auto& c : chains) {
        const Eigen::Index n = c.rows();
        const Eigen::Index half = n / 2;
        if (half < 2) continue;
        seqs.push_back(c.col(param).head(half));
        seqs.push_back(c.col(param).segment(n - half, half));
    }
    return seqs;
}

struct Pooled {
    double w = 0.0;       // mean within-sequence variance
    double var_plus = 0.0;  // pooled variance estimate
    std::vector<double> means;
    double grand_mean = 0.0;
};

inline Pooled pool(const std::vector<Eigen::VectorXd>& seqs) {
    Pooled p;
    const auto m = seqs.size();
    const double n = static_cast<double>(seqs.front().size());
    p.means.reserve(m);
    double w_sum = 0.0;
    for (const auto& s : seqs) {
        const double mean = s.mean();
        p.means.push_back(mean);
        p.grand_mean += mean;
        w_sum += (s.array() - mean).square().sum() / (n - 1.0);
    }
    p.grand_mean /= static_cast<double>(m);
    p.w = w_sum / static_cast<double>(m);
    double b_over_n = 0.0;
    if (m > 1) {
        for (double mu : p.means) b_over_n += (mu - p.grand_mean) * (mu - p.grand_mean);
        b_over_n /= static_cast<double>(m - 1);
    }
    p.var_plus = (n - 1.0) / n * p.w + b_over_n;
    return p;
}

}  // namespace diag_detail

// Split-R-hat for one parameter. Returns 1.0 for degenerate (constant) draws.
inline double split_rhat(const std::vector<Eigen::MatrixXd>& chains, Eigen::Index param) {
    auto seqs = diag_detail::split_sequences(chains, param);
    if (seqs.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    auto p = diag_detail::pool(seqs);
    if (p.w <= 0.0) return p.var_plus <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    return std::sqrt(p.var_plus / p.w);
}

// Effective sample size via pooled autocorrelations with Geyer's initial
// monotone positive-pair truncation.
inline double effective_sample_size(const std::vector<Eigen::MatrixXd>& chains,
                                    Eigen::Index param) {
    auto seqs = diag_detail::split_sequences(chains, param);
    if (seqs.empty()) return std::numeric_limits<double>::quiet_NaN();
    auto p = diag_detail::pool(seqs);
    const auto m = seqs.size();
    const Eigen::Index n = seqs.front().size();
    const double total = static_cast<double>(m) * static_cast<double>(n);
    if (p.var_plus <= 0.0) return total;

    auto mean_autocov = [&](Eigen::Index lag) {
        double acc = 0.0;
        for (std::size_t s = 0; s < m; ++s) {
            const auto& x = seqs[s];
            const double mu = p.means[s];
            double c = 0.0;
            for (Eigen::Index i = 0; i + lag < n; ++i) c += (x(i) - mu) * (x(i + lag) - mu);
            acc += c / static_cast<double>(n);
        }
        return acc / static_cast<double>(m);
    };

    // rho_0 = 1 implicitly; accumulate paired sums until they go negative.
    double tau = 1.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (Eigen::Index lag = 1; lag + 1 < n; lag += 2) {
        const double rho_a = 1.0 - (p.w - mean_autocov(lag)) / p.var_plus;
        const double rho_b = 1.0 - (p.w - mean_autocov(lag + 1)) / p.var_plus;
        double pair = rho_a + rho_b;
        if (pair < 0.0) break;
        if (pair > prev_pair) pair = prev_pair;  // enforce monotonicity
        prev_pair = pair;
        tau += 2.0 * pair;
        if (lag > 2000) break;
    }
    double ess = total / tau;
    return ess > total ? total : ess;
}

}  // namespace jitai
