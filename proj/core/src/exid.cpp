#include "momok/exid.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace momok {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2*pi)

// Forward pass of both Q networks for one conditioning input, with hidden
// caches for the backward passes.
struct QForward {
    std::vector<double> mu, lv_raw, sigma2;
    std::vector<std::uint8_t> clamped;
    std::vector<double> mean_hid, logvar_hid;
};

QForward q_forward(const ParamStore& q_store, const QNetSpec& spec, const double* x,
                   bool with_cache) {
    QForward f;
    const std::size_t d = spec.dim;
    f.mu.resize(d);
    f.lv_raw.resize(d);
    f.sigma2.resize(d);
    f.clamped.resize(d);
    if (with_cache) {
        f.mean_hid.resize(spec.hidden);
        f.logvar_hid.resize(spec.hidden);
    }
    mlp_forward(q_store, spec.mean(), x, f.mu.data(),
                with_cache ? f.mean_hid.data() : nullptr);
    mlp_forward(q_store, spec.logvar(), x, f.lv_raw.data(),
                with_cache ? f.logvar_hid.data() : nullptr);
    const double floor_log = std::log(spec.variance_floor);
    for (std::size_t k = 0; k < d; ++k) {
        const bool clamp = f.lv_raw[k] < floor_log;
        f.clamped[k] = clamp;
        f.sigma2[k] = std::exp(clamp ? floor_log : f.lv_raw[k]);
    }
    return f;
}

double log_prob_from(const QForward& f, const double* y, std::size_t d) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        const double diff = y[k] - f.mu[k];
        const double lv_eff = std::log(f.sigma2[k]);
        acc += diff * diff / f.sigma2[k] + lv_eff + kLog2Pi;
    }
    return -0.5 * acc;
}

}  // namespace

void qnet_add_params(ParamStore& store, const QNetSpec& spec) {
    mlp_add_params(store, spec.mean());
    mlp_add_params(store, spec.logvar());
}

void qnet_init(ParamStore& store, const QNetSpec& spec, Rng& rng) {
    Rng mean_rng = rng.split("mean");
    mlp_init_xavier(store, spec.mean(), mean_rng);
    Rng lv_rng = rng.split("logvar");
    mlp_init_xavier(store, spec.logvar(), lv_rng);
}

double q_log_prob(const ParamStore& q_store, const QNetSpec& spec,
                  std::span<const double> x, std::span<const double> y) {
    if (x.size() != spec.dim || y.size() != spec.dim)
        throw std::invalid_argument("q_log_prob: dim mismatch");
    const QForward f = q_forward(q_store, spec, x.data(), false);
    return log_prob_from(f, y.data(), spec.dim);
}

double club_loss_modality(const ParamStore& q_store, const QNetSpec& spec,
                          const BatchViews& views, bool unnormalized_negative,
                          double grad_scale, double* d_views) {
    const std::size_t n = views.n, K = views.experts, d = views.dim;
    if (K < 2 || n == 0) return 0.0;
    if (n < 2)
        throw std::invalid_argument("club_loss: batch must contain >= 2 entities");
    if (d != spec.dim) throw std::invalid_argument("club_loss: view dim != QNet dim");

    const double pos_coef = 1.0 / static_cast<double>(K * K);
    const double neg_coef =
        pos_coef * (unnormalized_negative ? 1.0 : 1.0 / static_cast<double>(n - 1));

    double loss = 0.0;
    std::vector<double> dmu(d), dlv(d);
    for (std::size_t e = 0; e < n; ++e) {
        for (std::size_t i = 0; i < K; ++i) {
            const double* x = views.view(e, i);
            const QForward f = q_forward(q_store, spec, x, d_views != nullptr);
            std::fill(dmu.begin(), dmu.end(), 0.0);
            std::fill(dlv.begin(), dlv.end(), 0.0);
            for (std::size_t j = 0; j < K; ++j) {
                if (j == i) continue;
                for (std::size_t ep = 0; ep < n; ++ep) {
                    const double* y = views.view(ep, j);
                    const double coef = ep == e ? pos_coef : -neg_coef;
                    loss += coef * log_prob_from(f, y, d);
                    if (!d_views) continue;
                    double* dy = d_views + (ep * K + j) * d;
                    for (std::size_t k = 0; k < d; ++k) {
                        const double diff = y[k] - f.mu[k];
                        const double inv = 1.0 / f.sigma2[k];
                        dmu[k] += coef * diff * inv;
                        if (!f.clamped[k])
                            dlv[k] += coef * 0.5 * (diff * diff * inv - 1.0);
                        dy[k] += grad_scale * coef * (-diff * inv);
                    }
                }
            }
            if (d_views) {
                double* dx = d_views + (e * K + i) * d;
                for (auto& g : dmu) g *= grad_scale;
                for (auto& g : dlv) g *= grad_scale;
                mlp_input_grad(q_store, spec.mean(), f.mean_hid.data(), dmu.data(), dx);
                mlp_input_grad(q_store, spec.logvar(), f.logvar_hid.data(), dlv.data(), dx);
            }
        }
    }
    return loss;
}

double exid_loss_modality(ParamStore& q_store, const QNetSpec& spec,
                          const BatchViews& views, bool with_grad) {
    const std::size_t n = views.n, K = views.experts, d = views.dim;
    if (K < 2 || n == 0) return 0.0;
    if (d != spec.dim) throw std::invalid_argument("exid_loss: view dim != QNet dim");

    const double coef = -1.0 / static_cast<double>(K * (K - 1) * n);
    double loss = 0.0;
    std::vector<double> dmu(d), dlv(d);
    for (std::size_t e = 0; e < n; ++e) {
        for (std::size_t i = 0; i < K; ++i) {
            const double* x = views.view(e, i);
            const QForward f = q_forward(q_store, spec, x, with_grad);
            std::fill(dmu.begin(), dmu.end(), 0.0);
            std::fill(dlv.begin(), dlv.end(), 0.0);
            for (std::size_t j = 0; j < K; ++j) {
                if (j == i) continue;
                const double* y = views.view(e, j);
                loss += coef * log_prob_from(f, y, d);
                if (!with_grad) continue;
                for (std::size_t k = 0; k < d; ++k) {
                    const double diff = y[k] - f.mu[k];
                    const double inv = 1.0 / f.sigma2[k];
                    dmu[k] += coef * diff * inv;
                    if (!f.clamped[k]) dlv[k] += coef * 0.5 * (diff * diff * inv - 1.0);
                }
            }
            if (with_grad) {
                mlp_backward(q_store, spec.mean(), x, f.mean_hid.data(), dmu.data(),
                             nullptr);
                mlp_backward(q_store, spec.logvar(), x, f.logvar_hid.data(), dlv.data(),
                             nullptr);
            }
        }
    }
    return loss;
}

double gaussian_mi_oracle(double rho) {
    if (!(std::abs(rho) < 1.0))
        throw std::invalid_argument("gaussian_mi_oracle: |rho| must be < 1");
    return -0.5 * std::log(1.0 - rho * rho);
}

double club_pair_estimate(const ParamStore& q_store, const QNetSpec& spec,
                          std::span<const double> xs, std::span<const double> ys,
                          std::size_t n) {
    if (n < 2) throw std::invalid_argument("club_pair_estimate: need >= 2 pairs");
    const std::size_t d = spec.dim;
    if (xs.size() != n * d || ys.size() != n * d)
        throw std::invalid_argument("club_pair_estimate: size mismatch");
    double positive = 0.0, negative = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const QForward f = q_forward(q_store, spec, xs.data() + i * d, false);
        for (std::size_t j = 0; j < n; ++j) {
            const double lp = log_prob_from(f, ys.data() + j * d, d);
            if (i == j)
                positive += lp;
            else
                negative += lp;
        }
    }
    return positive / static_cast<double>(n) -
           negative / static_cast<double>(n * (n - 1));
}

double q_pair_nll(ParamStore& q_store, const QNetSpec& spec,
                  std::span<const double> xs, std::span<const double> ys,
                  std::size_t n, bool with_grad) {
    if (n == 0) throw std::invalid_argument("q_pair_nll: need >= 1 pair");
    const std::size_t d = spec.dim;
    const double coef = -1.0 / static_cast<double>(n);
    double loss = 0.0;
    std::vector<double> dmu(d), dlv(d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = xs.data() + i * d;
        const double* y = ys.data() + i * d;
        const QForward f = q_forward(q_store, spec, x, with_grad);
        loss += coef * log_prob_from(f, y, d);
        if (!with_grad) continue;
        for (std::size_t k = 0; k < d; ++k) {
            const double diff = y[k] - f.mu[k];
            const double inv = 1.0 / f.sigma2[k];
            dmu[k] = coef * diff * inv;
            dlv[k] = f.clamped[k] ? 0.0 : coef * 0.5 * (diff * diff * inv - 1.0);
        }
        mlp_backward(q_store, spec.mean(), x, f.mean_hid.data(), dmu.data(), nullptr);
        mlp_backward(q_store, spec.logvar(), x, f.logvar_hid.data(), dlv.data(),
                     nullptr);
    }
    return loss;
}

}  // namespace momok
