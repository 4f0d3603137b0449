#pragma once

#include <span>
#include <string>
#include <vector>

#include "momok/nn.hpp"
#include "momok/param_store.hpp"

namespace momok {

// Full trilinear contraction sum_{i,k,j} core[i][k][j] h_i r_k t_j with core
// flattened as [d, d_r, d].
double tucker_score(std::span<const double> h, std::span<const double> r,
                    std::span<const double> t, std::span<const float> core,
                    std::size_t d, std::size_t d_r);

// A = core ×2 rel, a d×d matrix with A[i][j] = sum_k core[i][k][j] rel_k.
// Scoring against many candidates reduces to h^T A t.
void tucker_rel_matrix(std::span<const float> core, std::span<const double> rel,
                       std::size_t d, std::size_t d_r, double* matrix);

// Per-modality Tucker scorer groups: "<name>.rel" [n_relations, d_r] and
// "<name>.core" [d, d_r, d].
struct ScorerSpec {
    std::string name;  // modality name or "joint"
    std::size_t dim = 0;
    std::size_t relation_dim = 0;
    std::size_t n_relations = 0;

    std::string rel_group() const { return name + ".rel"; }
    std::string core_group() const { return name + ".core"; }
};

void scorer_add_params(ParamStore& store, const ScorerSpec& spec);
void scorer_init(ParamStore& store, const ScorerSpec& spec, Rng& rng);

// Adaptive cross-modality fusion: a_m = <attn, P_m(e_m)>, alpha = softmax(a),
// output = sum_m alpha_m P_m(e_m). Projections are two-layer ReLU networks
// "proj.<modality>"; the attention vector is the "attn.w" group. With
// adaptive=false the weights are uniform and "attn.w" is not consulted.
struct JointFusionSpec {
    std::vector<std::string> modalities;
    std::size_t dim = 0;
    std::size_t proj_hidden = 0;
    bool adaptive = true;

    MlpSpec proj(const std::string& modality) const {
        return {"proj." + modality, dim, proj_hidden, dim};
    }
    std::string attn_group() const { return "attn.w"; }
};

void joint_fusion_add_params(ParamStore& store, const JointFusionSpec& spec);
void joint_fusion_init(ParamStore& store, const JointFusionSpec& spec, Rng& rng);

struct JointFusionResult {
    std::vector<double> joint;  // d
    std::vector<double> alpha;  // one weight per modality
};

// Requires >= 2 modality embeddings (contract violation otherwise).
JointFusionResult fuse_joint(const ParamStore& store, const JointFusionSpec& spec,
                             std::span<const std::vector<double>> embeddings);

}  // namespace momok
