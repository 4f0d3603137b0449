#include "momok/mujod.hpp"

#include <cmath>
#include <stdexcept>

namespace momok {

double tucker_score(std::span<const double> h, std::span<const double> r,
                    std::span<const double> t, std::span<const float> core,
                    std::size_t d, std::size_t d_r) {
    if (h.size() != d || t.size() != d || r.size() != d_r ||
        core.size() != d * d_r * d)
        throw std::invalid_argument("tucker_score: shape mismatch");
    double total = 0.0;
    const float* c = core.data();
    for (std::size_t i = 0; i < d; ++i) {
        double per_i = 0.0;
        for (std::size_t k = 0; k < d_r; ++k) {
            double per_k = 0.0;
            for (std::size_t j = 0; j < d; ++j)
                per_k += static_cast<double>(c[(i * d_r + k) * d + j]) * t[j];
            per_i += per_k * r[k];
        }
        total += per_i * h[i];
    }
    return total;
}

void tucker_rel_matrix(std::span<const float> core, std::span<const double> rel,
                       std::size_t d, std::size_t d_r, double* matrix) {
    for (std::size_t i = 0; i < d * d; ++i) matrix[i] = 0.0;
    const float* c = core.data();
    for (std::size_t i = 0; i < d; ++i) {
        double* row = matrix + i * d;
        for (std::size_t k = 0; k < d_r; ++k) {
            const double rk = rel[k];
            if (rk == 0.0) continue;
            const float* slice = c + (i * d_r + k) * d;
            for (std::size_t j = 0; j < d; ++j)
                row[j] += rk * static_cast<double>(slice[j]);
        }
    }
}

void scorer_add_params(ParamStore& store, const ScorerSpec& spec) {
    store.add(spec.rel_group(), {spec.n_relations, spec.relation_dim});
    store.add(spec.core_group(), {spec.dim, spec.relation_dim, spec.dim});
}

void scorer_init(ParamStore& store, const ScorerSpec& spec, Rng& rng) {
    Rng rel_rng = rng.split("rel");
    for (auto& v : store.values(spec.rel_group()))
        v = static_cast<float>(0.02 * rel_rng.normal());
    Rng core_rng = rng.split("core");
    const double scale = 1.0 / std::sqrt(static_cast<double>(spec.dim));
    for (auto& v : store.values(spec.core_group()))
        v = static_cast<float>(core_rng.uniform(-1.0, 1.0) * scale);
}

void joint_fusion_add_params(ParamStore& store, const JointFusionSpec& spec) {
    for (const auto& m : spec.modalities) mlp_add_params(store, spec.proj(m));
    if (spec.adaptive) store.add(spec.attn_group(), {spec.dim});
}

void joint_fusion_init(ParamStore& store, const JointFusionSpec& spec, Rng& rng) {
    for (const auto& m : spec.modalities) {
        Rng sub = rng.split("proj." + m);
        mlp_init_xavier(store, spec.proj(m), sub);
    }
    if (spec.adaptive) {
        Rng attn_rng = rng.split("attn");
        for (auto& v : store.values(spec.attn_group()))
            v = static_cast<float>(0.02 * attn_rng.normal());
    }
}

JointFusionResult fuse_joint(const ParamStore& store, const JointFusionSpec& spec,
                             std::span<const std::vector<double>> embeddings) {
    const std::size_t n_mod = spec.modalities.size();
    if (embeddings.size() != n_mod)
        throw std::invalid_argument("fuse_joint: embedding count != modality count");
    if (n_mod < 2)
        throw std::invalid_argument("fuse_joint: needs at least 2 modalities");

    std::vector<std::vector<double>> projected(n_mod);
    for (std::size_t m = 0; m < n_mod; ++m)
        projected[m] = mlp_apply(store, spec.proj(spec.modalities[m]), embeddings[m]);

    JointFusionResult result;
    if (spec.adaptive) {
        const auto attn = store.values(spec.attn_group());
        std::vector<double> scores(n_mod, 0.0);
        for (std::size_t m = 0; m < n_mod; ++m)
            for (std::size_t i = 0; i < spec.dim; ++i)
                scores[m] += static_cast<double>(attn[i]) * projected[m][i];
        result.alpha = softmax_temp(scores, 1.0);
    } else {
        result.alpha.assign(n_mod, 1.0 / static_cast<double>(n_mod));
    }
    result.joint.assign(spec.dim, 0.0);
    for (std::size_t m = 0; m < n_mod; ++m)
        for (std::size_t i = 0; i < spec.dim; ++i)
            result.joint[i] += result.alpha[m] * projected[m][i];
    return result;
}

}  // namespace momok
