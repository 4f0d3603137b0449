#include "momok/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace momok {

GradCheckReport finite_diff_check(ParamStore& store,
                                  const std::function<double(bool)>& loss_fn,
                                  double eps, std::size_t sample_count, Rng& rng) {
    if (eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps must be > 0");

    store.zero_grads();
    loss_fn(true);

    // Snapshot analytic gradients before the probing evaluations run.
    std::vector<std::vector<double>> analytic;
    analytic.reserve(store.groups().size());
    for (const auto& g : store.groups()) analytic.push_back(g.grad);

    const std::size_t total = store.param_count();
    GradCheckReport report;
    if (total == 0) return report;

    for (std::size_t s = 0; s < sample_count; ++s) {
        std::size_t flat = static_cast<std::size_t>(rng.below(total));
        std::size_t gi = 0;
        while (flat >= store.groups()[gi].size()) {
            flat -= store.groups()[gi].size();
            ++gi;
        }
        auto& group = store.groups()[gi];
        const float original = group.value[flat];

        const float plus = static_cast<float>(static_cast<double>(original) + eps);
        const float minus = static_cast<float>(static_cast<double>(original) - eps);
        const double realized = static_cast<double>(plus) - static_cast<double>(minus);
        if (realized == 0.0) continue;

        group.value[flat] = plus;
        const double loss_plus = loss_fn(false);
        group.value[flat] = minus;
        const double loss_minus = loss_fn(false);
        group.value[flat] = original;

        const double numeric = (loss_plus - loss_minus) / realized;
        const double a = analytic[gi][flat];
        const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-4);
        ++report.samples;
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_group = group.name;
            report.worst_index = flat;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    return report;
}

}  // namespace momok
