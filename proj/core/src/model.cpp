#include "momok/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "momok/checkpoint.hpp"
#include "momok/errors.hpp"

namespace momok {

namespace {
constexpr const char* kModalityNames[kModalityCount] = {"structure", "image", "text"};
}

const char* modality_name(Modality m) { return kModalityNames[static_cast<int>(m)]; }

std::optional<Modality> modality_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kModalityCount; ++i)
        if (name == kModalityNames[i]) return static_cast<Modality>(i);
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Internal state
// ---------------------------------------------------------------------------

// Expert views plus raw gate state for a set of entities. Everything that the
// backward pass needs is cached here; relation-dependent state (gate softmax,
// fusion) lives in RelState because it differs per relation.
struct MomokModel::ViewsState {
    bool train_mode = false;
    bool with_gates = false;
    bool with_cache = false;
    std::vector<std::int32_t> entities;  // covered entity ids
    std::vector<std::int32_t> local;     // global id -> row, -1 when absent

    struct PerModality {
        std::vector<double> input;      // n x raw
        std::vector<double> hid;        // n x K x He   (cache)
        std::vector<double> V;          // n x K x d
        std::vector<double> gate_hid;   // n x K x Hg   (cache)
        std::vector<double> u;          // n x K
        std::vector<double> noise_hid;  // n x K x Hg   (cache, train)
        std::vector<double> nu;         // n x K        (train)
        std::vector<double> z;          // n x K        (train)
        std::vector<double> logits;     // n x K
    };
    std::vector<PerModality> mods;

    std::size_t n() const { return entities.size(); }
    std::int32_t row_of(std::int32_t entity) const { return local[entity]; }
};

struct MomokModel::ViewsGrad {
    struct PerModality {
        std::vector<double> dV;      // n x K x d
        std::vector<double> dlogit;  // n x K
    };
    std::vector<PerModality> mods;
};

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

MomokModel::MomokModel(const ModelConfig& cfg, std::size_t n_entities,
                       std::size_t n_relations, const FeatureTable* image_features,
                       const FeatureTable* text_features)
    : cfg_(cfg),
      n_entities_(n_entities),
      n_relations_(n_relations),
      image_(image_features),
      text_(text_features) {
    if (cfg_.dim < 1 || cfg_.experts < 1)
        throw std::invalid_argument("ModelConfig: dim and experts must be >= 1");
    if (n_entities_ < 1 || n_relations_ < 1)
        throw std::invalid_argument("MomokModel: empty vocabulary");
    if (cfg_.modalities.empty())
        throw std::invalid_argument("ModelConfig: at least one modality required");

    for (Modality m : cfg_.modalities) {
        if (std::count(mods_.begin(), mods_.end(), m))
            throw std::invalid_argument("ModelConfig: duplicate modality");
        mods_.push_back(m);
    }
    std::sort(mods_.begin(), mods_.end());

    for (Modality m : mods_) {
        std::size_t raw = 0;
        if (m == Modality::structure) {
            raw = cfg_.sdim();
        } else {
            const FeatureTable* table = m == Modality::image ? image_ : text_;
            if (!table)
                throw std::invalid_argument(std::string("MomokModel: modality '") +
                                            modality_name(m) +
                                            "' enabled but no feature table given");
            if (table->n_rows() != n_entities_)
                throw CompatError(std::string("feature table for '") + modality_name(m) +
                                  "' has " + std::to_string(table->n_rows()) +
                                  " rows, expected " + std::to_string(n_entities_));
            raw = table->dim;
        }
        ExpertsSpec spec;
        spec.modality = modality_name(m);
        spec.experts = cfg_.experts;
        spec.raw_dim = raw;
        spec.expert_hidden = cfg_.ehid();
        spec.dim = cfg_.dim;
        spec.gate_hidden = cfg_.ghid();
        expert_specs_.push_back(spec);

        QNetSpec q;
        q.modality = modality_name(m);
        q.dim = cfg_.dim;
        q.hidden = cfg_.qhid();
        q_specs_.push_back(q);

        channel_names_.push_back(modality_name(m));
    }
    if (cfg_.has_joint()) channel_names_.push_back("joint");

    temp_spec_.enabled = cfg_.use_relation_temperature;
    temp_spec_.per_modality = cfg_.per_modality_temperature;
    temp_spec_.n_relations = n_relations_;

    fusion_spec_.dim = cfg_.dim;
    fusion_spec_.proj_hidden = cfg_.phid();
    fusion_spec_.adaptive = cfg_.use_adaptive_fusion;
    for (Modality m : mods_) fusion_spec_.modalities.push_back(modality_name(m));

    for (const auto& name : channel_names_) {
        ScorerSpec s;
        s.name = name;
        s.dim = cfg_.dim;
        s.relation_dim = cfg_.rdim();
        s.n_relations = n_relations_;
        scorer_specs_.push_back(s);
    }

    build_groups();
}

void MomokModel::build_groups() {
    if (std::count(mods_.begin(), mods_.end(), Modality::structure))
        params_.add("structure.feat", {n_entities_, cfg_.sdim()});
    for (const auto& spec : expert_specs_) experts_add_params(params_, spec);
    if (cfg_.has_joint()) joint_fusion_add_params(params_, fusion_spec_);
    std::vector<std::string> mod_names;
    for (Modality m : mods_) mod_names.push_back(modality_name(m));
    relation_temps_add_params(params_, temp_spec_, mod_names);
    for (const auto& spec : scorer_specs_) scorer_add_params(params_, spec);

    auto& vocab = params_.add("meta.vocab", {2});
    vocab.value[0] = static_cast<float>(n_entities_);
    vocab.value[1] = static_cast<float>(n_relations_);
    auto& flags = params_.add("meta.flags", {1});
    flags.value[0] = cfg_.standardize_features ? 1.0f : 0.0f;

    for (const auto& spec : q_specs_) qnet_add_params(q_params_, spec);
}

void MomokModel::init_params(Rng rng) {
    if (params_.has("structure.feat")) {
        Rng feat_rng = rng.split("feat");
        for (auto& v : params_.values("structure.feat"))
            v = static_cast<float>(0.02 * feat_rng.normal());
    }
    for (const auto& spec : expert_specs_) {
        Rng sub = rng.split("experts." + spec.modality);
        experts_init(params_, spec, sub);
    }
    if (cfg_.has_joint()) {
        Rng sub = rng.split("fusion");
        joint_fusion_init(params_, fusion_spec_, sub);
    }
    for (const auto& spec : scorer_specs_) {
        Rng sub = rng.split("scorer." + spec.name);
        scorer_init(params_, spec, sub);
    }
    // reltemp stays zero: temperature starts at 0.5.
}

void MomokModel::init_qnets(Rng rng) {
    for (const auto& spec : q_specs_) {
        Rng sub = rng.split("qnet." + spec.modality);
        qnet_init(q_params_, spec, sub);
    }
}

int MomokModel::channel_index(std::string_view name) const {
    for (std::size_t i = 0; i < channel_names_.size(); ++i)
        if (channel_names_[i] == name) return static_cast<int>(i);
    return -1;
}

double MomokModel::temperature(Modality m, std::int32_t r) const {
    check_relation(r);
    return relation_temperature(params_, temp_spec_, modality_name(m), r);
}

std::span<const float> MomokModel::raw_feature(Modality m, std::int32_t e) const {
    if (m == Modality::structure) {
        const auto feat = params_.values("structure.feat");
        return feat.subspan(static_cast<std::size_t>(e) * cfg_.sdim(), cfg_.sdim());
    }
    const FeatureTable* table = m == Modality::image ? image_ : text_;
    return table->row(static_cast<std::size_t>(e));
}

void MomokModel::check_entity(std::int32_t e) const {
    if (e < 0 || static_cast<std::size_t>(e) >= n_entities_)
        throw std::invalid_argument("entity id " + std::to_string(e) + " out of range");
}

void MomokModel::check_relation(std::int32_t r) const {
    if (r < 0 || static_cast<std::size_t>(r) >= n_relations_)
        throw std::invalid_argument("relation id " + std::to_string(r) + " out of range");
}

// ---------------------------------------------------------------------------
// Views
// ---------------------------------------------------------------------------

MomokModel::ViewsState MomokModel::build_views(std::span<const std::int32_t> entities,
                                               bool train_mode, std::uint64_t noise_seed,
                                               bool with_gates, bool with_cache) const {
    ViewsState state;
    state.train_mode = train_mode;
    state.with_gates = with_gates;
    state.with_cache = with_cache;
    state.entities.assign(entities.begin(), entities.end());
    state.local.assign(n_entities_, -1);
    for (std::size_t i = 0; i < state.entities.size(); ++i) {
        check_entity(state.entities[i]);
        state.local[state.entities[i]] = static_cast<std::int32_t>(i);
    }

    const std::size_t n = state.n();
    const std::size_t K = cfg_.experts;
    const std::size_t d = cfg_.dim;
    state.mods.resize(mods_.size());

    for (std::size_t mi = 0; mi < mods_.size(); ++mi) {
        const ExpertsSpec& spec = expert_specs_[mi];
        auto& pm = state.mods[mi];
        const std::size_t raw = spec.raw_dim;
        pm.input.resize(n * raw);
        pm.V.resize(n * K * d);
        if (with_cache) pm.hid.resize(n * K * spec.expert_hidden);
        if (with_gates) {
            pm.u.resize(n * K);
            pm.logits.resize(n * K);
            if (with_cache) pm.gate_hid.resize(n * K * spec.gate_hidden);
            if (train_mode) {
                pm.nu.resize(n * K);
                pm.z.resize(n * K);
                if (with_cache) pm.noise_hid.resize(n * K * spec.gate_hidden);
            }
        }

        for (std::size_t li = 0; li < n; ++li) {
            const std::int32_t e = state.entities[li];
            const auto feat = raw_feature(mods_[mi], e);
            double* x = pm.input.data() + li * raw;
            for (std::size_t k = 0; k < raw; ++k) x[k] = feat[k];

            for (std::size_t i = 0; i < K; ++i) {
                double* v = pm.V.data() + (li * K + i) * d;
                double* hid = with_cache
                                  ? pm.hid.data() + (li * K + i) * spec.expert_hidden
                                  : nullptr;
                mlp_forward(params_, spec.expert(i), x, v, hid);
            }
            if (!with_gates) continue;

            // Content-addressed noise: one stream per (modality, entity), so
            // draws are independent of which entity subset is materialized.
            Rng noise_rng(hash_combine(hash_combine(noise_seed, hash_str(spec.modality)),
                                       static_cast<std::uint64_t>(e)));
            for (std::size_t i = 0; i < K; ++i) {
                const double* v = pm.V.data() + (li * K + i) * d;
                double* ghid = with_cache
                                   ? pm.gate_hid.data() + (li * K + i) * spec.gate_hidden
                                   : nullptr;
                double u;
                mlp_forward(params_, spec.gate(), v, &u, ghid);
                pm.u[li * K + i] = u;
                double logit = u;
                if (train_mode) {
                    double* nhid = with_cache ? pm.noise_hid.data() +
                                                    (li * K + i) * spec.gate_hidden
                                              : nullptr;
                    double nu;
                    mlp_forward(params_, spec.noise(), v, &nu, nhid);
                    const double z = noise_rng.normal();
                    pm.nu[li * K + i] = nu;
                    pm.z[li * K + i] = z;
                    const double std_dev = softplus(nu);
                    if (cfg_.use_noise && std_dev > kNoiseStdFloor)
                        logit += std_dev * z;
                }
                pm.logits[li * K + i] = logit;
            }
        }
    }
    return state;
}

// Relation-dependent forward state: gate softmax at this relation's
// temperature, intra-modality fusion, and (when a joint channel exists) the
// projection/attention fusion.
struct MomokModel::RelState {
    std::int32_t relation = 0;
    std::vector<double> tau;                    // per modality
    std::vector<std::vector<double>> w;         // per mod: n x K
    std::vector<std::vector<double>> F;         // per mod: n x d
    std::vector<std::vector<double>> proj_hid;  // per mod: n x Hp (cache)
    std::vector<std::vector<double>> P;         // per mod: n x d
    std::vector<double> alpha;                  // n x M
    std::vector<double> J;                      // n x d
    bool has_joint = false;

    // Candidate embedding matrix for a channel: base channels read the fused
    // modality embeddings, the joint channel reads J.
    const std::vector<double>& channel_embeddings(std::size_t channel,
                                                  std::size_t n_mods) const {
        return channel < n_mods ? F[channel] : J;
    }
};

MomokModel::RelState MomokModel::compute_rel_state(const ViewsState& views,
                                                   std::int32_t r,
                                                   bool with_cache) const {
    check_relation(r);
    RelState rel;
    rel.relation = r;
    rel.has_joint = cfg_.has_joint();
    const std::size_t n = views.n();
    const std::size_t K = cfg_.experts;
    const std::size_t d = cfg_.dim;
    const std::size_t M = mods_.size();

    rel.tau.resize(M);
    rel.w.resize(M);
    rel.F.resize(M);
    for (std::size_t mi = 0; mi < M; ++mi) {
        rel.tau[mi] = relation_temperature(params_, temp_spec_,
                                           expert_specs_[mi].modality, r);
        rel.w[mi].assign(n * K, 0.0);
        rel.F[mi].assign(n * d, 0.0);
        const auto& pm = views.mods[mi];
        for (std::size_t li = 0; li < n; ++li) {
            const double* logits = pm.logits.data() + li * K;
            double* w = rel.w[mi].data() + li * K;
            softmax_temp_into({logits, K}, rel.tau[mi], {w, K});
            double* F = rel.F[mi].data() + li * d;
            for (std::size_t i = 0; i < K; ++i) {
                const double* v = pm.V.data() + (li * K + i) * d;
                const double wi = w[i];
                for (std::size_t k = 0; k < d; ++k) F[k] += wi * v[k];
            }
        }
    }

    if (rel.has_joint) {
        const std::size_t hp = cfg_.phid();
        rel.P.resize(M);
        if (with_cache) rel.proj_hid.resize(M);
        for (std::size_t mi = 0; mi < M; ++mi) {
            rel.P[mi].assign(n * d, 0.0);
            if (with_cache) rel.proj_hid[mi].assign(n * hp, 0.0);
            const MlpSpec proj = fusion_spec_.proj(expert_specs_[mi].modality);
            for (std::size_t li = 0; li < n; ++li)
                mlp_forward(params_, proj, rel.F[mi].data() + li * d,
                            rel.P[mi].data() + li * d,
                            with_cache ? rel.proj_hid[mi].data() + li * hp : nullptr);
        }
        rel.alpha.assign(n * M, 0.0);
        rel.J.assign(n * d, 0.0);
        std::vector<double> scores(M);
        for (std::size_t li = 0; li < n; ++li) {
            double* alpha = rel.alpha.data() + li * M;
            if (cfg_.use_adaptive_fusion) {
                const auto attn = params_.values(fusion_spec_.attn_group());
                for (std::size_t mi = 0; mi < M; ++mi) {
                    double acc = 0.0;
                    const double* p = rel.P[mi].data() + li * d;
                    for (std::size_t k = 0; k < d; ++k)
                        acc += static_cast<double>(attn[k]) * p[k];
                    scores[mi] = acc;
                }
                softmax_temp_into(scores, 1.0, {alpha, M});
            } else {
                for (std::size_t mi = 0; mi < M; ++mi)
                    alpha[mi] = 1.0 / static_cast<double>(M);
            }
            double* J = rel.J.data() + li * d;
            for (std::size_t mi = 0; mi < M; ++mi) {
                const double* p = rel.P[mi].data() + li * d;
                for (std::size_t k = 0; k < d; ++k) J[k] += alpha[mi] * p[k];
            }
        }
    }
    return rel;
}

// ---------------------------------------------------------------------------
// Single-entity reference path
// ---------------------------------------------------------------------------

ViewSet MomokModel::entity_views(Modality m, std::int32_t e) const {
    check_entity(e);
    const auto it = std::find(mods_.begin(), mods_.end(), m);
    if (it == mods_.end())
        throw std::invalid_argument(std::string("modality '") + modality_name(m) +
                                    "' is not enabled");
    const ExpertsSpec& spec = expert_specs_[static_cast<std::size_t>(it - mods_.begin())];
    const auto feat = raw_feature(m, e);
    std::vector<double> raw(feat.begin(), feat.end());
    return expert_views(params_, spec, raw);
}

std::vector<double> MomokModel::entity_embedding(Modality m, std::int32_t e,
                                                 std::int32_t r) const {
    check_relation(r);
    const auto it = std::find(mods_.begin(), mods_.end(), m);
    if (it == mods_.end())
        throw std::invalid_argument(std::string("modality '") + modality_name(m) +
                                    "' is not enabled");
    const ExpertsSpec& spec = expert_specs_[static_cast<std::size_t>(it - mods_.begin())];
    const ViewSet views = entity_views(m, e);
    const double tau = temperature(m, r);
    const auto weights = gate_weights(params_, spec, views, tau, false, nullptr);
    return fuse_intra_modality(views, weights);
}

double MomokModel::channel_score(std::size_t channel, std::int32_t h, std::int32_t r,
                                 std::int32_t t) const {
    if (channel >= channel_names_.size())
        throw std::invalid_argument("channel index out of range");
    check_entity(h);
    check_entity(t);
    check_relation(r);

    auto embed = [&](std::int32_t e) -> std::vector<double> {
        if (channel < mods_.size()) return entity_embedding(mods_[channel], e, r);
        std::vector<std::vector<double>> per_mod;
        for (Modality m : mods_) per_mod.push_back(entity_embedding(m, e, r));
        return fuse_joint(params_, fusion_spec_, per_mod).joint;
    };
    const auto h_emb = embed(h);
    const auto t_emb = embed(t);
    const ScorerSpec& sc = scorer_specs_[channel];
    const auto rel = params_.values(sc.rel_group());
    std::vector<double> rel_row(cfg_.rdim());
    for (std::size_t k = 0; k < rel_row.size(); ++k)
        rel_row[k] = rel[static_cast<std::size_t>(r) * cfg_.rdim() + k];
    return tucker_score(h_emb, rel_row, t_emb, params_.values(sc.core_group()),
                        cfg_.dim, cfg_.rdim());
}

double MomokModel::inference_score(std::int32_t h, std::int32_t r, std::int32_t t) const {
    double total = 0.0;
    for (std::size_t c = 0; c < channel_names_.size(); ++c)
        total += channel_score(c, h, r, t);
    return total;
}

std::vector<double> MomokModel::score_all_tails(std::size_t channel, std::int32_t h,
                                                std::int32_t r) const {
    if (channel >= channel_names_.size())
        throw std::invalid_argument("channel index out of range");
    check_entity(h);
    const auto ctx = make_eval_context();
    const auto snap = relation_snapshot(*ctx, r);
    const std::size_t d = cfg_.dim;
    const auto& E = snap.embeddings[channel];
    const auto& A = snap.rel_matrix[channel];
    std::vector<double> qt(d, 0.0);
    const double* h_emb = E.data() + static_cast<std::size_t>(h) * d;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) qt[j] += A[i * d + j] * h_emb[i];
    std::vector<double> scores(n_entities_, 0.0);
    for (std::size_t e = 0; e < n_entities_; ++e) {
        const double* t_emb = E.data() + e * d;
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += qt[j] * t_emb[j];
        scores[e] = acc;
    }
    return scores;
}

std::vector<double> MomokModel::score_all_heads(std::size_t channel, std::int32_t r,
                                                std::int32_t t) const {
    if (channel >= channel_names_.size())
        throw std::invalid_argument("channel index out of range");
    check_entity(t);
    const auto ctx = make_eval_context();
    const auto snap = relation_snapshot(*ctx, r);
    const std::size_t d = cfg_.dim;
    const auto& E = snap.embeddings[channel];
    const auto& A = snap.rel_matrix[channel];
    std::vector<double> qh(d, 0.0);
    const double* t_emb = E.data() + static_cast<std::size_t>(t) * d;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) qh[i] += A[i * d + j] * t_emb[j];
    std::vector<double> scores(n_entities_, 0.0);
    for (std::size_t e = 0; e < n_entities_; ++e) {
        const double* h_emb = E.data() + e * d;
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) acc += qh[i] * h_emb[i];
        scores[e] = acc;
    }
    return scores;
}

// ---------------------------------------------------------------------------
// Batched losses
// ---------------------------------------------------------------------------

namespace {

// One 1-vs-all cross-entropy direction. The query embedding is mapped through
// A (tail mode: q = A^T h, head mode: q = A t), every candidate is scored by a
// dot product, and gradients land in the shared per-candidate buffer dE plus
// the dA accumulator Msum.
double ce_direction(const std::vector<double>& E, const std::vector<double>& A,
                    std::size_t n, std::size_t d, std::int32_t query,
                    std::int32_t gold, bool tail_mode, std::vector<double>* dE,
                    std::vector<double>& Msum, std::vector<double>& scores,
                    std::vector<double>& q, std::vector<double>& dq) {
    const double* qe = E.data() + static_cast<std::size_t>(query) * d;
    std::fill(q.begin(), q.end(), 0.0);
    if (tail_mode) {
        for (std::size_t i = 0; i < d; ++i) {
            const double hi = qe[i];
            if (hi == 0.0) continue;
            const double* row = A.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) q[j] += row[j] * hi;
        }
    } else {
        for (std::size_t i = 0; i < d; ++i) {
            const double* row = A.data() + i * d;
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += row[j] * qe[j];
            q[i] = acc;
        }
    }
    for (std::size_t e = 0; e < n; ++e) {
        const double* emb = E.data() + e * d;
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) acc += q[k] * emb[k];
        scores[e] = acc;
    }
    const double lse = log_sum_exp(scores);
    const double loss = lse - scores[static_cast<std::size_t>(gold)];
    if (!dE) return loss;

    std::fill(dq.begin(), dq.end(), 0.0);
    for (std::size_t e = 0; e < n; ++e) {
        double ds = std::exp(scores[e] - lse);
        if (e == static_cast<std::size_t>(gold)) ds -= 1.0;
        const double* emb = E.data() + e * d;
        double* dErow = dE->data() + e * d;
        for (std::size_t k = 0; k < d; ++k) {
            dq[k] += ds * emb[k];
            dErow[k] += ds * q[k];
        }
    }
    double* dquery = dE->data() + static_cast<std::size_t>(query) * d;
    if (tail_mode) {
        // dh = A dq, dA = h ⊗ dq
        for (std::size_t i = 0; i < d; ++i) {
            const double* row = A.data() + i * d;
            double* mrow = Msum.data() + i * d;
            double acc = 0.0;
            const double hi = qe[i];
            for (std::size_t j = 0; j < d; ++j) {
                acc += row[j] * dq[j];
                mrow[j] += hi * dq[j];
            }
            dquery[i] += acc;
        }
    } else {
        // dt = A^T dq, dA = dq ⊗ t
        for (std::size_t i = 0; i < d; ++i) {
            const double* row = A.data() + i * d;
            double* mrow = Msum.data() + i * d;
            const double dqi = dq[i];
            for (std::size_t j = 0; j < d; ++j) {
                dquery[j] += row[j] * dqi;
                mrow[j] += dqi * qe[j];
            }
        }
    }
    return loss;
}

}  // namespace

double MomokModel::scored_loss(const TripleBatch& batch, const LossOptions& opts,
                               std::span<const std::uint8_t> channel_mask,
                               double* per_channel, ViewsState* shared_views,
                               ViewsGrad* shared_grad) {
    const bool with_grad = opts.with_grad;
    const std::size_t d = cfg_.dim;
    const std::size_t dr = cfg_.rdim();
    const std::size_t M = mods_.size();

    ViewsState own_views;
    ViewsGrad own_grad;
    ViewsState* views = shared_views;
    ViewsGrad* grad = nullptr;
    if (!views) {
        std::vector<std::int32_t> all(n_entities_);
        for (std::size_t i = 0; i < n_entities_; ++i) all[i] = static_cast<std::int32_t>(i);
        own_views = build_views(all, opts.train_mode, opts.noise_seed, true, with_grad);
        views = &own_views;
    }
    const std::size_t n = views->n();
    if (with_grad) {
        if (shared_views) {
            grad = shared_grad;
        } else {
            own_grad.mods.resize(M);
            for (std::size_t mi = 0; mi < M; ++mi) {
                own_grad.mods[mi].dV.assign(n * cfg_.experts * d, 0.0);
                own_grad.mods[mi].dlogit.assign(n * cfg_.experts, 0.0);
            }
            grad = &own_grad;
        }
    }

    std::map<std::int32_t, std::vector<const Triple*>> groups;
    for (const auto& tr : batch.triples) {
        check_entity(tr.h);
        check_entity(tr.t);
        check_relation(tr.r);
        groups[tr.r].push_back(&tr);
    }

    double total = 0.0;
    std::vector<double> scores(n), A(d * d), Msum(d * d), q(d), dq(d);
    std::vector<double> rel_row(dr);
    std::vector<std::vector<double>> dF;
    std::vector<double> dJ;

    for (const auto& [r, triples] : groups) {
        RelState rel = compute_rel_state(*views, r, with_grad);
        if (with_grad) {
            dF.assign(M, std::vector<double>(n * d, 0.0));
            dJ.assign(rel.has_joint ? n * d : 0, 0.0);
        }
        for (std::size_t c = 0; c < channel_names_.size(); ++c) {
            if (!channel_mask[c]) continue;
            const auto& E = rel.channel_embeddings(c, M);
            const ScorerSpec& sc = scorer_specs_[c];
            const auto rel_vals = params_.values(sc.rel_group());
            for (std::size_t k = 0; k < dr; ++k)
                rel_row[k] = rel_vals[static_cast<std::size_t>(r) * dr + k];
            tucker_rel_matrix(params_.values(sc.core_group()), rel_row, d, dr, A.data());
            std::fill(Msum.begin(), Msum.end(), 0.0);
            std::vector<double>* dE = nullptr;
            if (with_grad) dE = c < M ? &dF[c] : &dJ;

            double channel_loss = 0.0;
            for (const Triple* tr : triples) {
                channel_loss +=
                    ce_direction(E, A, n, d, tr->h, tr->t, true, dE, Msum, scores, q, dq);
                channel_loss +=
                    ce_direction(E, A, n, d, tr->t, tr->h, false, dE, Msum, scores, q, dq);
            }
            total += channel_loss;
            if (per_channel) per_channel[c] += channel_loss;

            if (with_grad) {
                auto gcore = params_.grads(sc.core_group());
                auto grel = params_.grads(sc.rel_group());
                const auto core = params_.values(sc.core_group());
                for (std::size_t i = 0; i < d; ++i) {
                    const double* mrow = Msum.data() + i * d;
                    for (std::size_t k = 0; k < dr; ++k) {
                        const double rk = rel_row[k];
                        const float* cslice = core.data() + (i * dr + k) * d;
                        double* gslice = gcore.data() + (i * dr + k) * d;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < d; ++j) {
                            gslice[j] += rk * mrow[j];
                            acc += static_cast<double>(cslice[j]) * mrow[j];
                        }
                        grel[static_cast<std::size_t>(r) * dr + k] += acc;
                    }
                }
            }
        }
        if (with_grad) rel_state_backward(*views, rel, dF, dJ, *grad);
    }
    if (with_grad && !shared_views) views_backward(*views, *grad);
    return total;
}

void MomokModel::rel_state_backward(const ViewsState& views, const RelState& rel,
                                    std::vector<std::vector<double>>& dF,
                                    std::vector<double>& dJ, ViewsGrad& grad) {
    const std::size_t n = views.n();
    const std::size_t K = cfg_.experts;
    const std::size_t d = cfg_.dim;
    const std::size_t M = mods_.size();

    if (rel.has_joint && !dJ.empty()) {
        const std::size_t hp = cfg_.phid();
        const bool adaptive = cfg_.use_adaptive_fusion;
        std::span<const float> attn;
        std::span<double> dattn;
        if (adaptive) {
            attn = params_.values(fusion_spec_.attn_group());
            dattn = params_.grads(fusion_spec_.attn_group());
        }
        std::vector<double> dP(d), dalpha(M), da(M);
        for (std::size_t li = 0; li < n; ++li) {
            const double* dJrow = dJ.data() + li * d;
            const double* alpha = rel.alpha.data() + li * M;
            if (adaptive) {
                for (std::size_t mi = 0; mi < M; ++mi) {
                    const double* p = rel.P[mi].data() + li * d;
                    double acc = 0.0;
                    for (std::size_t k = 0; k < d; ++k) acc += dJrow[k] * p[k];
                    dalpha[mi] = acc;
                }
                std::fill(da.begin(), da.end(), 0.0);
                softmax_backward({alpha, M}, dalpha, da);
            }
            for (std::size_t mi = 0; mi < M; ++mi) {
                const double* p = rel.P[mi].data() + li * d;
                for (std::size_t k = 0; k < d; ++k) {
                    dP[k] = alpha[mi] * dJrow[k];
                    if (adaptive) dP[k] += da[mi] * static_cast<double>(attn[k]);
                }
                if (adaptive)
                    for (std::size_t k = 0; k < d; ++k) dattn[k] += da[mi] * p[k];
                const MlpSpec proj = fusion_spec_.proj(expert_specs_[mi].modality);
                mlp_backward(params_, proj, rel.F[mi].data() + li * d,
                             rel.proj_hid[mi].data() + li * hp, dP.data(),
                             dF[mi].data() + li * d);
            }
        }
    }

    std::vector<double> dw(K), dlp(K);
    for (std::size_t mi = 0; mi < M; ++mi) {
        const auto& pm = views.mods[mi];
        auto& g = grad.mods[mi];
        const double tau = rel.tau[mi];
        double dtau = 0.0;
        for (std::size_t li = 0; li < n; ++li) {
            const double* dFrow = dF[mi].data() + li * d;
            const double* w = rel.w[mi].data() + li * K;
            const double* logits = pm.logits.data() + li * K;
            for (std::size_t i = 0; i < K; ++i) {
                const double* v = pm.V.data() + (li * K + i) * d;
                double* dv = g.dV.data() + (li * K + i) * d;
                const double wi = w[i];
                double acc = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    acc += dFrow[k] * v[k];
                    dv[k] += wi * dFrow[k];
                }
                dw[i] = acc;
            }
            std::fill(dlp.begin(), dlp.end(), 0.0);
            softmax_backward({w, K}, dw, dlp);
            for (std::size_t i = 0; i < K; ++i) {
                g.dlogit[li * K + i] += dlp[i] / tau;
                dtau -= dlp[i] * logits[i] / (tau * tau);
            }
        }
        if (temp_spec_.enabled) {
            auto deps = params_.grads(temp_spec_.group(expert_specs_[mi].modality));
            deps[static_cast<std::size_t>(rel.relation)] += dtau * tau * (1.0 - tau);
        }
    }
}

void MomokModel::views_backward(const ViewsState& views, ViewsGrad& grad) {
    const std::size_t n = views.n();
    const std::size_t K = cfg_.experts;
    const std::size_t d = cfg_.dim;
    const bool noise_active = views.train_mode && cfg_.use_noise;

    for (std::size_t mi = 0; mi < mods_.size(); ++mi) {
        const ExpertsSpec& spec = expert_specs_[mi];
        const auto& pm = views.mods[mi];
        auto& g = grad.mods[mi];
        const bool structural = mods_[mi] == Modality::structure;
        std::span<double> feat_grad;
        if (structural) feat_grad = params_.grads("structure.feat");

        for (std::size_t li = 0; li < n; ++li) {
            for (std::size_t i = 0; i < K; ++i) {
                const std::size_t idx = li * K + i;
                const double* v = pm.V.data() + idx * d;
                double* dv = g.dV.data() + idx * d;
                if (views.with_gates) {
                    const double dlog = g.dlogit[idx];
                    if (dlog != 0.0) {
                        mlp_backward(params_, spec.gate(), v,
                                     pm.gate_hid.data() + idx * spec.gate_hidden, &dlog,
                                     dv);
                        if (noise_active) {
                            const double nu = pm.nu[idx];
                            const double std_dev = softplus(nu);
                            if (std_dev > kNoiseStdFloor) {
                                const double dnu = dlog * pm.z[idx] * sigmoid(nu);
                                mlp_backward(params_, spec.noise(), v,
                                             pm.noise_hid.data() + idx * spec.gate_hidden,
                                             &dnu, dv);
                            }
                        }
                    }
                }
                bool any = false;
                for (std::size_t k = 0; k < d; ++k)
                    if (dv[k] != 0.0) {
                        any = true;
                        break;
                    }
                if (!any) continue;
                const double* x = pm.input.data() + li * spec.raw_dim;
                double* dx = nullptr;
                if (structural)
                    dx = feat_grad.data() +
                         static_cast<std::size_t>(views.entities[li]) * spec.raw_dim;
                mlp_backward(params_, spec.expert(i), x,
                             pm.hid.data() + idx * spec.expert_hidden, dv, dx);
            }
        }
    }
}

double MomokModel::club_on_views(const ViewsState& views,
                                 std::span<const std::int32_t> entities,
                                 ViewsGrad* grad, double grad_scale) {
    const std::size_t K = cfg_.experts;
    const std::size_t d = cfg_.dim;
    if (K < 2) return 0.0;
    const std::size_t B = entities.size();
    if (B < 2)
        throw std::invalid_argument("club_loss: batch must contain >= 2 entities");

    std::vector<std::int32_t> rows(B);
    for (std::size_t b = 0; b < B; ++b) {
        rows[b] = views.row_of(entities[b]);
        if (rows[b] < 0)
            throw std::invalid_argument("club_loss: entity missing from views");
    }

    double total = 0.0;
    BatchViews bv;
    bv.n = B;
    bv.experts = K;
    bv.dim = d;
    bv.data.resize(B * K * d);
    std::vector<double> dbuf;
    for (std::size_t mi = 0; mi < mods_.size(); ++mi) {
        const auto& V = views.mods[mi].V;
        for (std::size_t b = 0; b < B; ++b)
            std::copy_n(V.data() + static_cast<std::size_t>(rows[b]) * K * d, K * d,
                        bv.data.data() + b * K * d);
        double* dptr = nullptr;
        if (grad) {
            dbuf.assign(B * K * d, 0.0);
            dptr = dbuf.data();
        }
        total += club_loss_modality(q_params_, q_specs_[mi], bv, cfg_.club_unnormalized,
                                    grad_scale, dptr);
        if (grad) {
            auto& dV = grad->mods[mi].dV;
            for (std::size_t b = 0; b < B; ++b) {
                const double* src = dbuf.data() + b * K * d;
                double* dst = dV.data() + static_cast<std::size_t>(rows[b]) * K * d;
                for (std::size_t k = 0; k < K * d; ++k) dst[k] += src[k];
            }
        }
    }
    return total;
}

double MomokModel::modality_loss(const TripleBatch& batch, std::size_t channel,
                                 const LossOptions& opts) {
    if (channel >= channel_names_.size())
        throw std::invalid_argument("channel index out of range");
    std::vector<std::uint8_t> mask(channel_names_.size(), 0);
    mask[channel] = 1;
    return scored_loss(batch, opts, mask, nullptr, nullptr, nullptr);
}

double MomokModel::kgc_loss(const TripleBatch& batch, const LossOptions& opts) {
    std::vector<std::uint8_t> mask(channel_names_.size(), 1);
    return scored_loss(batch, opts, mask, nullptr, nullptr, nullptr);
}

double MomokModel::club_loss(const TripleBatch& batch, const LossOptions& opts,
                             double grad_scale) {
    ViewsState views = build_views(batch.entities, opts.train_mode, opts.noise_seed,
                                   false, opts.with_grad);
    if (!opts.with_grad) return club_on_views(views, batch.entities, nullptr, 0.0);

    ViewsGrad grad;
    grad.mods.resize(mods_.size());
    for (auto& g : grad.mods) {
        g.dV.assign(views.n() * cfg_.experts * cfg_.dim, 0.0);
        g.dlogit.assign(views.n() * cfg_.experts, 0.0);
    }
    const double loss = club_on_views(views, batch.entities, &grad, grad_scale);
    views_backward(views, grad);
    return loss;
}

double MomokModel::exid_loss(const TripleBatch& batch, const LossOptions& opts) {
    if (batch.entities.empty())
        throw std::invalid_argument("exid_loss: batch must contain >= 1 entity");
    ViewsState views = build_views(batch.entities, false, 0, false, false);
    const std::size_t B = batch.entities.size();
    const std::size_t K = cfg_.experts;
    const std::size_t d = cfg_.dim;

    double total = 0.0;
    BatchViews bv;
    bv.n = B;
    bv.experts = K;
    bv.dim = d;
    bv.data.resize(B * K * d);
    for (std::size_t mi = 0; mi < mods_.size(); ++mi) {
        std::copy(views.mods[mi].V.begin(), views.mods[mi].V.end(), bv.data.begin());
        total += exid_loss_modality(q_params_, q_specs_[mi], bv, opts.with_grad);
    }
    return total;
}

MomokModel::TrainLosses MomokModel::train_loss(const TripleBatch& batch,
                                               const LossOptions& opts, double lambda,
                                               bool with_club) {
    std::vector<std::int32_t> all(n_entities_);
    for (std::size_t i = 0; i < n_entities_; ++i) all[i] = static_cast<std::int32_t>(i);
    ViewsState views =
        build_views(all, opts.train_mode, opts.noise_seed, true, opts.with_grad);
    ViewsGrad grad;
    if (opts.with_grad) {
        grad.mods.resize(mods_.size());
        for (auto& g : grad.mods) {
            g.dV.assign(views.n() * cfg_.experts * cfg_.dim, 0.0);
            g.dlogit.assign(views.n() * cfg_.experts, 0.0);
        }
    }

    TrainLosses out;
    std::vector<std::uint8_t> mask(channel_names_.size(), 1);
    out.kgc = scored_loss(batch, opts, mask, nullptr, &views,
                          opts.with_grad ? &grad : nullptr);
    if (with_club && cfg_.experts >= 2 && batch.entities.size() >= 2)
        out.club = club_on_views(views, batch.entities,
                                 opts.with_grad ? &grad : nullptr, lambda);
    if (opts.with_grad) views_backward(views, grad);
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation support
// ---------------------------------------------------------------------------

struct MomokModel::EvalContext {
    ViewsState views;
};

std::shared_ptr<const MomokModel::EvalContext> MomokModel::make_eval_context() const {
    auto ctx = std::make_shared<EvalContext>();
    std::vector<std::int32_t> all(n_entities_);
    for (std::size_t i = 0; i < n_entities_; ++i) all[i] = static_cast<std::int32_t>(i);
    ctx->views = build_views(all, false, 0, true, false);
    return ctx;
}

MomokModel::RelationSnapshot MomokModel::relation_snapshot(const EvalContext& ctx,
                                                           std::int32_t r) const {
    RelState rel = compute_rel_state(ctx.views, r, false);
    RelationSnapshot snap;
    snap.relation = r;
    const std::size_t d = cfg_.dim;
    const std::size_t dr = cfg_.rdim();
    std::vector<double> rel_row(dr);
    for (std::size_t c = 0; c < channel_names_.size(); ++c) {
        snap.embeddings.push_back(rel.channel_embeddings(c, mods_.size()));
        const ScorerSpec& sc = scorer_specs_[c];
        const auto rel_vals = params_.values(sc.rel_group());
        for (std::size_t k = 0; k < dr; ++k)
            rel_row[k] = rel_vals[static_cast<std::size_t>(r) * dr + k];
        std::vector<double> A(d * d);
        tucker_rel_matrix(params_.values(sc.core_group()), rel_row, d, dr, A.data());
        snap.rel_matrix.push_back(std::move(A));
    }
    snap.gates = rel.w;
    snap.alphas = rel.alpha;
    return snap;
}

void MomokModel::save(const std::string& path) const { save_checkpoint(path, params_); }

void MomokModel::load(const std::string& path) { load_checkpoint_into(path, params_); }

// ---------------------------------------------------------------------------
// Checkpoint reconstruction
// ---------------------------------------------------------------------------

ModelConfig infer_model_config(const ParamStore& loaded) {
    ModelConfig cfg;
    cfg.modalities.clear();
    for (std::size_t i = 0; i < kModalityCount; ++i) {
        const auto m = static_cast<Modality>(i);
        if (loaded.has(std::string(modality_name(m)) + ".expert0.W1"))
            cfg.modalities.push_back(m);
    }
    if (cfg.modalities.empty())
        throw CompatError("checkpoint contains no modality expert groups");
    const std::string first = modality_name(cfg.modalities.front());

    const auto& w2 = loaded.at(first + ".expert0.W2");
    cfg.dim = w2.shape[0];
    cfg.expert_hidden = w2.shape[1];
    std::size_t k = 0;
    while (loaded.has(first + ".expert" + std::to_string(k) + ".W1")) ++k;
    cfg.experts = k;
    cfg.gate_hidden = loaded.at(first + ".gate.W1").shape[0];
    if (loaded.has("structure.feat"))
        cfg.struct_dim = loaded.at("structure.feat").shape[1];
    cfg.relation_dim = loaded.at(first + ".rel").shape[1];
    cfg.use_joint_training = loaded.has("joint.core");
    if (cfg.use_joint_training) {
        cfg.proj_hidden = loaded.at("proj." + first + ".W1").shape[0];
        cfg.use_adaptive_fusion = loaded.has("attn.w");
    }
    cfg.per_modality_temperature = loaded.has("reltemp." + first + ".eps");
    cfg.use_relation_temperature =
        cfg.per_modality_temperature || loaded.has("reltemp.eps");
    if (loaded.has("meta.flags"))
        cfg.standardize_features = loaded.at("meta.flags").value[0] != 0.0f;
    return cfg;
}

void check_checkpoint_vocab(const ParamStore& loaded, std::size_t n_entities,
                            std::size_t n_relations) {
    if (!loaded.has("meta.vocab"))
        throw CompatError("checkpoint is missing the meta.vocab group");
    const auto& vocab = loaded.at("meta.vocab");
    const auto ckpt_e = static_cast<std::size_t>(vocab.value[0]);
    const auto ckpt_r = static_cast<std::size_t>(vocab.value[1]);
    if (ckpt_e != n_entities || ckpt_r != n_relations)
        throw CompatError("vocab-size mismatch: checkpoint has " +
                          std::to_string(ckpt_e) + " entities / " +
                          std::to_string(ckpt_r) + " relations, data has " +
                          std::to_string(n_entities) + " / " +
                          std::to_string(n_relations));
}

}  // namespace momok
