#include "momok/remoke.hpp"

#include <stdexcept>

namespace momok {

void experts_add_params(ParamStore& store, const ExpertsSpec& spec) {
    if (spec.experts < 1) throw std::invalid_argument("experts: K must be >= 1");
    for (std::size_t i = 0; i < spec.experts; ++i) mlp_add_params(store, spec.expert(i));
    mlp_add_params(store, spec.gate());
    mlp_add_params(store, spec.noise());
}

void experts_init(ParamStore& store, const ExpertsSpec& spec, Rng& rng) {
    for (std::size_t i = 0; i < spec.experts; ++i) {
        Rng sub = rng.split(hash_combine(hash_str("expert"), i));
        mlp_init_xavier(store, spec.expert(i), sub);
    }
    Rng gate_rng = rng.split("gate");
    mlp_init_xavier(store, spec.gate(), gate_rng);
    Rng noise_rng = rng.split("noise");
    mlp_init_xavier(store, spec.noise(), noise_rng);
}

ViewSet expert_views(const ParamStore& store, const ExpertsSpec& spec,
                     std::span<const double> raw) {
    if (raw.size() != spec.raw_dim)
        throw std::invalid_argument("expert_views: raw dim " + std::to_string(raw.size()) +
                                    " does not match spec raw_dim " +
                                    std::to_string(spec.raw_dim));
    ViewSet views;
    views.experts = spec.experts;
    views.dim = spec.dim;
    views.data.resize(spec.experts * spec.dim);
    for (std::size_t i = 0; i < spec.experts; ++i)
        mlp_forward(store, spec.expert(i), raw.data(), views.view(i).data(), nullptr);
    return views;
}

void relation_temps_add_params(ParamStore& store, const RelationTempsSpec& spec,
                               std::span<const std::string> modalities) {
    if (!spec.enabled) return;
    if (spec.per_modality) {
        for (const auto& m : modalities) store.add(spec.group(m), {spec.n_relations});
    } else {
        store.add(spec.group(""), {spec.n_relations});
    }
    // eps starts at 0, i.e. temperature 0.5.
}

double relation_temperature(const ParamStore& store, const RelationTempsSpec& spec,
                            const std::string& modality, std::int32_t relation) {
    if (!spec.enabled) return 0.5;
    const auto eps = store.values(spec.group(modality));
    return sigmoid(eps[static_cast<std::size_t>(relation)]);
}

std::vector<double> gate_weights(const ParamStore& store, const ExpertsSpec& spec,
                                 const ViewSet& views, double temperature,
                                 bool train_mode, Rng* rng) {
    const std::size_t K = views.experts;
    std::vector<double> logits(K);
    double u;
    for (std::size_t i = 0; i < K; ++i) {
        mlp_forward(store, spec.gate(), views.view(i).data(), &u, nullptr);
        logits[i] = u;
    }
    if (train_mode) {
        if (!rng) throw std::invalid_argument("gate_weights: train mode requires an rng");
        for (std::size_t i = 0; i < K; ++i) {
            double nu;
            mlp_forward(store, spec.noise(), views.view(i).data(), &nu, nullptr);
            const double std_dev = softplus(nu);
            const double z = rng->normal();
            if (std_dev > kNoiseStdFloor) logits[i] += std_dev * z;
        }
    }
    return softmax_temp(logits, temperature);
}

std::vector<double> fuse_intra_modality(const ViewSet& views,
                                        std::span<const double> weights) {
    if (weights.size() != views.experts)
        throw std::invalid_argument("fuse_intra_modality: weight count != K");
    std::vector<double> out(views.dim, 0.0);
    for (std::size_t i = 0; i < views.experts; ++i) {
        const auto v = views.view(i);
        for (std::size_t d = 0; d < views.dim; ++d) out[d] += weights[i] * v[d];
    }
    return out;
}

}  // namespace momok
