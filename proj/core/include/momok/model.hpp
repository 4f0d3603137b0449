#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "momok/dataset.hpp"
#include "momok/exid.hpp"
#include "momok/mujod.hpp"
#include "momok/param_store.hpp"
#include "momok/remoke.hpp"
#include "momok/rng.hpp"

namespace momok {

enum class Modality : int { structure = 0, image = 1, text = 2 };
inline constexpr std::size_t kModalityCount = 3;

const char* modality_name(Modality m);
std::optional<Modality> modality_from_name(std::string_view name);

struct ModelConfig {
    std::size_t dim = 250;
    std::size_t relation_dim = 0;  // 0 -> dim
    std::size_t experts = 3;       // K
    std::size_t expert_hidden = 0;
    std::size_t gate_hidden = 0;
    std::size_t proj_hidden = 0;
    std::size_t q_hidden = 0;
    std::size_t struct_dim = 0;
    std::vector<Modality> modalities = {Modality::structure, Modality::image,
                                        Modality::text};
    bool use_noise = true;
    bool use_relation_temperature = true;
    bool use_adaptive_fusion = true;
    bool use_joint_training = true;
    bool per_modality_temperature = false;
    bool club_unnormalized = false;
    // Data-pipeline flag recorded in checkpoints so evaluation reloads
    // features the same way training saw them.
    bool standardize_features = true;

    std::size_t rdim() const { return relation_dim ? relation_dim : dim; }
    std::size_t ehid() const { return expert_hidden ? expert_hidden : dim; }
    std::size_t ghid() const { return gate_hidden ? gate_hidden : dim; }
    std::size_t phid() const { return proj_hidden ? proj_hidden : dim; }
    std::size_t qhid() const { return q_hidden ? q_hidden : dim; }
    std::size_t sdim() const { return struct_dim ? struct_dim : dim; }
    bool has_joint() const { return use_joint_training && modalities.size() >= 2; }
};

struct LossOptions {
    bool train_mode = false;
    std::uint64_t noise_seed = 0;
    bool with_grad = false;
};

// The assembled MoMoK model: per-modality expert banks with noisy
// relation-temperature gating, adaptive joint fusion, and one Tucker scorer
// per modality plus the joint channel. All backward passes are written out by
// hand; losses accumulate gradients into the owning store (callers zero the
// buffers between steps).
class MomokModel {
public:
    MomokModel(const ModelConfig& cfg, std::size_t n_entities, std::size_t n_relations,
               const FeatureTable* image_features, const FeatureTable* text_features);

    void init_params(Rng rng);
    void init_qnets(Rng rng);

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    ParamStore& q_params() { return q_params_; }
    const ParamStore& q_params() const { return q_params_; }
    const ModelConfig& config() const { return cfg_; }
    std::size_t n_entities() const { return n_entities_; }
    std::size_t n_relations() const { return n_relations_; }

    // Scoring channels: enabled modalities in declaration order, then "joint".
    const std::vector<std::string>& channel_names() const { return channel_names_; }
    std::size_t n_channels() const { return channel_names_.size(); }
    int channel_index(std::string_view name) const;

    double temperature(Modality m, std::int32_t r) const;

    // --- single-entity reference path (eval mode, no caches) ---
    ViewSet entity_views(Modality m, std::int32_t e) const;
    std::vector<double> entity_embedding(Modality m, std::int32_t e,
                                         std::int32_t r) const;
    double channel_score(std::size_t channel, std::int32_t h, std::int32_t r,
                         std::int32_t t) const;
    // Ensemble score sum_m S_m(h, r, t) over every channel.
    double inference_score(std::int32_t h, std::int32_t r, std::int32_t t) const;

    std::vector<double> score_all_tails(std::size_t channel, std::int32_t h,
                                        std::int32_t r) const;
    std::vector<double> score_all_heads(std::size_t channel, std::int32_t r,
                                        std::int32_t t) const;

    // --- batched losses ---
    // 1-vs-all cross entropy of one channel, summed over batch triples and
    // both prediction directions.
    double modality_loss(const TripleBatch& batch, std::size_t channel,
                         const LossOptions& opts);
    // Sum of modality losses over all channels.
    double kgc_loss(const TripleBatch& batch, const LossOptions& opts);
    // CLUB penalty over batch entities; gradients (scaled by grad_scale) reach
    // expert parameters only, Q stays frozen.
    double club_loss(const TripleBatch& batch, const LossOptions& opts,
                     double grad_scale = 1.0);
    // Q likelihood objective; gradients reach Q parameters only.
    double exid_loss(const TripleBatch& batch, const LossOptions& opts);

    struct TrainLosses {
        double kgc = 0.0;
        double club = 0.0;
    };
    // Single fused pass: kgc over all channels plus (optionally) the CLUB term
    // with gradients scaled by lambda.
    TrainLosses train_loss(const TripleBatch& batch, const LossOptions& opts,
                           double lambda, bool with_club);

    // --- evaluation support ---
    struct EvalContext;
    std::shared_ptr<const EvalContext> make_eval_context() const;

    struct RelationSnapshot {
        std::int32_t relation = 0;
        // Per channel: candidate embeddings [nE x d] and A = core x2 rel [d x d].
        std::vector<std::vector<double>> embeddings;
        std::vector<std::vector<double>> rel_matrix;
        // Per enabled modality: gate weights [nE x K].
        std::vector<std::vector<double>> gates;
        // Fusion weights [nE x M] (empty when there is no joint channel).
        std::vector<double> alphas;
    };
    RelationSnapshot relation_snapshot(const EvalContext& ctx, std::int32_t r) const;

    // Checkpoint with meta groups (vocab sizes, data flags) appended.
    void save(const std::string& path) const;
    void load(const std::string& path);

private:
    struct ViewsState;
    struct ViewsGrad;
    struct RelState;

    void build_groups();
    std::span<const float> raw_feature(Modality m, std::int32_t e) const;
    void check_entity(std::int32_t e) const;
    void check_relation(std::int32_t r) const;

    ViewsState build_views(std::span<const std::int32_t> entities, bool train_mode,
                           std::uint64_t noise_seed, bool with_gates,
                           bool with_cache) const;
    RelState compute_rel_state(const ViewsState& views, std::int32_t r,
                               bool with_cache) const;
    void rel_state_backward(const ViewsState& views, const RelState& rel,
                            std::vector<std::vector<double>>& dF,
                            std::vector<double>& dJ, ViewsGrad& grad);
    // Shared loss kernel over relation groups; channel_mask selects channels.
    double scored_loss(const TripleBatch& batch, const LossOptions& opts,
                       std::span<const std::uint8_t> channel_mask,
                       double* per_channel /*optional, n_channels*/,
                       ViewsState* shared_views, ViewsGrad* shared_grad);
    double club_on_views(const ViewsState& views,
                         std::span<const std::int32_t> entities, ViewsGrad* grad,
                         double grad_scale);
    void views_backward(const ViewsState& views, ViewsGrad& grad);

    ModelConfig cfg_;
    std::size_t n_entities_ = 0;
    std::size_t n_relations_ = 0;
    const FeatureTable* image_ = nullptr;
    const FeatureTable* text_ = nullptr;

    std::vector<Modality> mods_;            // enabled modalities
    std::vector<ExpertsSpec> expert_specs_; // parallel to mods_
    std::vector<QNetSpec> q_specs_;         // parallel to mods_
    RelationTempsSpec temp_spec_;
    JointFusionSpec fusion_spec_;
    std::vector<ScorerSpec> scorer_specs_;  // parallel to channels
    std::vector<std::string> channel_names_;

    ParamStore params_;
    ParamStore q_params_;
};

// Reconstruction from a checkpoint: infer the architecture from group shapes
// and meta groups. Throws CompatError on vocab-size mismatch with the store.
ModelConfig infer_model_config(const ParamStore& loaded);
void check_checkpoint_vocab(const ParamStore& loaded, std::size_t n_entities,
                            std::size_t n_relations);

}  // namespace momok
