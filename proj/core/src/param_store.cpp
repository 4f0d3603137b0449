#include "momok/param_store.hpp"

#include <cmath>
#include <stdexcept>

#include "momok/errors.hpp"

namespace momok {

ParamGroup& ParamStore::add(const std::string& name, std::vector<std::size_t> shape) {
    if (index_.count(name))
        throw std::invalid_argument("ParamStore: duplicate group '" + name + "'");
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    ParamGroup g;
    g.name = name;
    g.shape = std::move(shape);
    g.value.assign(n, 0.0f);
    g.grad.assign(n, 0.0);
    g.adam_m.assign(n, 0.0);
    g.adam_v.assign(n, 0.0);
    index_[name] = groups_.size();
    groups_.push_back(std::move(g));
    return groups_.back();
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) != 0; }

ParamGroup& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
        throw std::invalid_argument("ParamStore: unknown group '" + name + "'");
    return groups_[it->second];
}

const ParamGroup& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
        throw std::invalid_argument("ParamStore: unknown group '" + name + "'");
    return groups_[it->second];
}

std::span<const float> ParamStore::values(const std::string& name) const {
    return at(name).value;
}

std::span<float> ParamStore::values(const std::string& name) { return at(name).value; }

std::span<double> ParamStore::grads(const std::string& name) { return at(name).grad; }

void ParamStore::zero_grads() {
    for (auto& g : groups_)
        std::fill(g.grad.begin(), g.grad.end(), 0.0);
}

std::size_t ParamStore::param_count() const {
    std::size_t n = 0;
    for (const auto& g : groups_) n += g.size();
    return n;
}

void adam_step(ParamStore& store, const AdamConfig& cfg, std::int64_t step_index) {
    if (step_index < 1) throw std::invalid_argument("adam_step: step_index must be >= 1");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_index));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_index));
    for (auto& g : store.groups()) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double grad = g.grad[i];
            if (!std::isfinite(grad))
                throw NumericError("adam_step: non-finite gradient in group '" + g.name + "'");
            g.adam_m[i] = cfg.beta1 * g.adam_m[i] + (1.0 - cfg.beta1) * grad;
            g.adam_v[i] = cfg.beta2 * g.adam_v[i] + (1.0 - cfg.beta2) * grad * grad;
            const double m_hat = g.adam_m[i] / bc1;
            const double v_hat = g.adam_v[i] / bc2;
            g.value[i] = static_cast<float>(
                static_cast<double>(g.value[i]) - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
            g.grad[i] = 0.0;
        }
    }
}

}  // namespace momok
