#pragma once

// Shrinkage prior schedule: zero-centered priors whose scale decreases
// geometrically with interaction order, so higher-order interaction terms are
// shrunk harder toward zero.

#include <stdexcept>
#include <vector>

namespace jitai {

enum class PriorFamily { StudentT7, Gaussian };

struct PriorSpec {
    // Scale (standard deviation parameter) by interaction order, 1-based.
    std::vector<double> scale_by_order = {1.0, 0.25, 0.0625, 0.0156};
    PriorFamily family = PriorFamily::StudentT7;
    // Half-Student-t degrees of freedom for the shared random-effect scale
    // hyperprior; its scale matches the term's fixed-effect prior scale.
    double random_scale_df = 3.0;

    void validate() const {
        if (scale_by_order.empty()) throw std::invalid_argument("prior: empty scale table");
        for (std::size_t i = 0; i < scale_by_order.size(); ++i) {
            if (scale_by_order[i] <= 0.0) throw std::invalid_argument("prior: scales must be positive");
            if (i > 0 && scale_by_order[i] >= scale_by_order[i - 1]) {
                throw std::invalid_argument("prior: scales must strictly decrease with order");
            }
        }
    }
};

// Scale for a given interaction order; orders beyond the table extend
// geometrically, a quarter per additional order.
inline double prior_scale(int order, const PriorSpec& prior) {
    if (order < 1) throw std::invalid_argument("prior_scale: order must be >= 1");
    prior.validate();
    const auto n = prior.scale_by_order.size();
    if (static_cast<std::size_t>(order) <= n) {
        return prior.scale_by_order[static_cast<std::size_t>(order) - 1];
    }
    constexpr double ratio = 0.25;
    double scale = prior.scale_by_order[n - 1];
    for (int k = static_cast<int>(n); k < order; ++k) scale *= ratio;
    return scale;
}

}  // namespace jitai
