#pragma once

#include <span>
#include <string>
#include <vector>

#include "momok/nn.hpp"
#include "momok/param_store.hpp"

namespace momok {

// Variational Gaussian approximator Q(y|x) for one modality: a mean network
// and a log-variance network, both two-layer ReLU, dim -> dim. Predicted
// variances are floored via a clamped log-variance.
struct QNetSpec {
    std::string modality;
    std::size_t dim = 0;
    std::size_t hidden = 0;
    double variance_floor = 1e-4;

    MlpSpec mean() const { return {"q." + modality + ".mean", dim, hidden, dim}; }
    MlpSpec logvar() const { return {"q." + modality + ".logvar", dim, hidden, dim}; }
};

void qnet_add_params(ParamStore& store, const QNetSpec& spec);
void qnet_init(ParamStore& store, const QNetSpec& spec, Rng& rng);

// Log density of the diagonal Gaussian Q(y|x).
double q_log_prob(const ParamStore& q_store, const QNetSpec& spec,
                  std::span<const double> x, std::span<const double> y);

// Views of one modality for a batch of entities, flattened [n][K][dim].
struct BatchViews {
    std::size_t n = 0;
    std::size_t experts = 0;  // K
    std::size_t dim = 0;
    std::vector<double> data;

    const double* view(std::size_t e, std::size_t i) const {
        return data.data() + (e * experts + i) * dim;
    }
    double* view(std::size_t e, std::size_t i) {
        return data.data() + (e * experts + i) * dim;
    }
};

// CLUB mutual-information penalty for one modality:
//   (1/K^2) sum_e sum_i sum_{j != i} [ log Q(V_j(e)|V_i(e))
//       - norm * sum_{e' != e} log Q(V_j(e')|V_i(e)) ]
// with norm = 1/(n-1), or 1 when unnormalized_negative is set. Gradients flow
// to the views only (accumulated into d_views scaled by grad_scale when
// non-null); Q parameters stay frozen. Requires n >= 2 and K >= 2 for a
// nonzero value (K < 2 yields exactly 0).
double club_loss_modality(const ParamStore& q_store, const QNetSpec& spec,
                          const BatchViews& views, bool unnormalized_negative,
                          double grad_scale, double* d_views);

// Likelihood objective for Q on one modality:
//   -(1/(K(K-1)n)) sum_e sum_{i != j} log Q(V_j(e)|V_i(e)).
// Gradients flow to Q parameters only; views are constants.
double exid_loss_modality(ParamStore& q_store, const QNetSpec& spec,
                          const BatchViews& views, bool with_grad);

// True mutual information of a bivariate unit Gaussian with correlation rho,
// in nats. |rho| must be < 1.
double gaussian_mi_oracle(double rho);

// Direct sampled CLUB estimate for paired data (x_i, y_i), each of spec.dim:
//   (1/n) sum_i log Q(y_i|x_i) - (1/(n(n-1))) sum_i sum_{j != i} log Q(y_j|x_i).
double club_pair_estimate(const ParamStore& q_store, const QNetSpec& spec,
                          std::span<const double> xs, std::span<const double> ys,
                          std::size_t n);

// Mean negative log likelihood -(1/n) sum_i log Q(y_i|x_i); accumulates Q
// parameter gradients when with_grad is set. Used to fit Q on synthetic pairs.
double q_pair_nll(ParamStore& q_store, const QNetSpec& spec,
                  std::span<const double> xs, std::span<const double> ys,
                  std::size_t n, bool with_grad);

}  // namespace momok
