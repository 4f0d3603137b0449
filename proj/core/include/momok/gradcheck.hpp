#pragma once

#include <functional>
#include <string>

#include "momok/param_store.hpp"
#include "momok/rng.hpp"

namespace momok {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t samples = 0;
    std::string worst_group;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// loss_fn(with_grad): recomputes the loss; when with_grad is true it must also
// accumulate analytic gradients into `store` (which arrives zeroed). The loss
// must be deterministic given the store — any stochastic draws have to be
// frozen by seed inside loss_fn. For `sample_count` randomly chosen scalar
// parameters the analytic gradient is compared against the central difference
// (loss(θ+eps) − loss(θ−eps)) / (θ⁺ − θ⁻), using the perturbation actually
// realized in 32-bit storage. Relative error uses the denominator
// max(|a| + |n|, 1e-4) so that parameters with vanishing gradients do not
// drown the check in curvature noise.
GradCheckReport finite_diff_check(ParamStore& store,
                                  const std::function<double(bool with_grad)>& loss_fn,
                                  double eps, std::size_t sample_count, Rng& rng);

}  // namespace momok
