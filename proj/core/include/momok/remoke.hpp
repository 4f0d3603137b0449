#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "momok/nn.hpp"
#include "momok/param_store.hpp"
#include "momok/rng.hpp"

namespace momok {

// Gate-noise standard deviations at or below this floor are treated as zero,
// so a floored gate is exactly deterministic in train mode.
inline constexpr double kNoiseStdFloor = 1e-6;

// Per-modality bank of K expert networks with a shared gate projection and a
// shared noise projection. Group prefixes:
//   <modality>.expert<i>.{W1,b1,W2,b2}
//   <modality>.gate.{...}   raw gate logit, dim -> 1
//   <modality>.noise.{...}  raw noise-std logit, dim -> 1
struct ExpertsSpec {
    std::string modality;
    std::size_t experts = 3;        // K
    std::size_t raw_dim = 0;        // input feature dim
    std::size_t expert_hidden = 0;
    std::size_t dim = 0;            // view/embedding dim d
    std::size_t gate_hidden = 0;

    MlpSpec expert(std::size_t i) const {
        return {modality + ".expert" + std::to_string(i), raw_dim, expert_hidden, dim};
    }
    MlpSpec gate() const { return {modality + ".gate", dim, gate_hidden, 1}; }
    MlpSpec noise() const { return {modality + ".noise", dim, gate_hidden, 1}; }
};

void experts_add_params(ParamStore& store, const ExpertsSpec& spec);
void experts_init(ParamStore& store, const ExpertsSpec& spec, Rng& rng);

// K multi-perspective views of one entity within one modality.
struct ViewSet {
    std::size_t experts = 0;
    std::size_t dim = 0;
    std::vector<double> data;  // K × dim

    std::span<const double> view(std::size_t i) const {
        return {data.data() + i * dim, dim};
    }
    std::span<double> view(std::size_t i) { return {data.data() + i * dim, dim}; }
};

// K independent expert forward passes over one raw feature vector.
ViewSet expert_views(const ParamStore& store, const ExpertsSpec& spec,
                     std::span<const double> raw);

// Relation-aware softmax temperature sigma(eps_r) in (0, 1). One eps per
// relation, optionally one table per modality.
struct RelationTempsSpec {
    bool enabled = true;
    bool per_modality = false;
    std::size_t n_relations = 0;

    std::string group(const std::string& modality) const {
        return per_modality ? "reltemp." + modality + ".eps" : "reltemp.eps";
    }
};

void relation_temps_add_params(ParamStore& store, const RelationTempsSpec& spec,
                               std::span<const std::string> modalities);
double relation_temperature(const ParamStore& store, const RelationTempsSpec& spec,
                            const std::string& modality, std::int32_t relation);

// Noisy gate weights: logit_i = U_m(V_i) + delta_i with
// delta_i ~ N(0, softplus(U'_m(V_i))) in train mode (zero otherwise or when
// the std is floored), then softmax at the given temperature. Always consumes
// K normal draws in train mode so stream alignment is data-independent.
std::vector<double> gate_weights(const ParamStore& store, const ExpertsSpec& spec,
                                 const ViewSet& views, double temperature,
                                 bool train_mode, Rng* rng);

// Convex combination of the views.
std::vector<double> fuse_intra_modality(const ViewSet& views,
                                        std::span<const double> weights);

}  // namespace momok
