#pragma once

// Dense grid-quadrature oracle for small posteriors, independent of the
// sampling path under test. Works on any unnormalized log density.

#include <cmath>
#include <functional>
#include <vector>

namespace test_support {

struct GridMoments {
    std::vector<double> mean;
    std::vector<double> sd;
};

inline GridMoments grid_moments_1d(const std::function<double(double)>& logpost, double lo = -6.0,
                                   double hi = 6.0, int n = 4001) {
    std::vector<double> xs(n), lp(n);
    double max_lp = -1e300;
    for (int i = 0; i < n; ++i) {
        xs[i] = lo + (hi - lo) * i / (n - 1);
        lp[i] = logpost(xs[i]);
        if (lp[i] > max_lp) max_lp = lp[i];
    }
    double z = 0.0, m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double w = std::exp(lp[i] - max_lp);
        z += w;
        m1 += w * xs[i];
        m2 += w * xs[i] * xs[i];
    }
    m1 /= z;
    m2 /= z;
    return {{m1}, {std::sqrt(m2 - m1 * m1)}};
}

inline GridMoments grid_moments_2d(const std::function<double(double, double)>& logpost,
                                   double lo = -6.0, double hi = 6.0, int n = 401) {
    std::vector<double> xs(n);
    for (int i = 0; i < n; ++i) xs[i] = lo + (hi - lo) * i / (n - 1);
    double max_lp = -1e300;
    std::vector<double> lp(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double v = logpost(xs[i], xs[j]);
            lp[static_cast<std::size_t>(i) * n + j] = v;
            if (v > max_lp) max_lp = v;
        }
    }
    double z = 0.0, mx = 0.0, my = 0.0, mxx = 0.0, myy = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double w = std::exp(lp[static_cast<std::size_t>(i) * n + j] - max_lp);
            z += w;
            mx += w * xs[i];
            my += w * xs[j];
            mxx += w * xs[i] * xs[i];
            myy += w * xs[j] * xs[j];
        }
    }
    mx /= z;
    my /= z;
    mxx /= z;
    myy /= z;
    return {{mx, my}, {std::sqrt(mxx - mx * mx), std::sqrt(myy - my * my)}};
}

// Exact log densities used to assemble reference posteriors in tests.
inline double log_student_t(double x, double nu, double scale) {
    return -0.5 * (nu + 1.0) * std::log1p(x * x / (nu * scale * scale));
}

inline double log_gaussian(double x, double scale) { return -0.5 * x * x / (scale * scale); }

inline double log_bernoulli_logit(int y, double eta) {
    const double log1pexp = eta > 35.0 ? eta : (eta < -35.0 ? std::exp(eta) : std::log1p(std::exp(eta)));
    return y * eta - log1pexp;
}

}  // namespace test_support
