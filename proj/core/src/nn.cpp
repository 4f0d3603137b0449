#include "momok/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "momok/errors.hpp"

namespace momok {

void mlp_add_params(ParamStore& store, const MlpSpec& spec) {
    store.add(spec.prefix + ".W1", {spec.hidden, spec.in});
    store.add(spec.prefix + ".b1", {spec.hidden});
    store.add(spec.prefix + ".W2", {spec.out, spec.hidden});
    store.add(spec.prefix + ".b2", {spec.out});
}

namespace {

void xavier_fill(std::span<float> w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : w) v = static_cast<float>(rng.uniform(-bound, bound));
}

}  // namespace

void mlp_init_xavier(ParamStore& store, const MlpSpec& spec, Rng& rng) {
    xavier_fill(store.values(spec.prefix + ".W1"), spec.in, spec.hidden, rng);
    xavier_fill(store.values(spec.prefix + ".W2"), spec.hidden, spec.out, rng);
    // Biases stay zero.
}

void mlp_forward(const ParamStore& store, const MlpSpec& spec, const double* x,
                 double* y, double* hid_pre) {
    const auto W1 = store.values(spec.prefix + ".W1");
    const auto b1 = store.values(spec.prefix + ".b1");
    const auto W2 = store.values(spec.prefix + ".W2");
    const auto b2 = store.values(spec.prefix + ".b2");
    const std::size_t in = spec.in, hid = spec.hidden, out = spec.out;

    std::vector<double> h(hid);
    for (std::size_t j = 0; j < hid; ++j) {
        double acc = b1[j];
        const float* row = W1.data() + j * in;
        for (std::size_t i = 0; i < in; ++i) acc += static_cast<double>(row[i]) * x[i];
        if (hid_pre) hid_pre[j] = acc;
        h[j] = acc > 0.0 ? acc : 0.0;
    }
    for (std::size_t o = 0; o < out; ++o) {
        double acc = b2[o];
        const float* row = W2.data() + o * hid;
        for (std::size_t j = 0; j < hid; ++j) acc += static_cast<double>(row[j]) * h[j];
        y[o] = acc;
    }
}

std::vector<double> mlp_apply(const ParamStore& store, const MlpSpec& spec,
                              std::span<const double> x) {
    if (x.size() != spec.in)
        throw std::invalid_argument("mlp_apply: input dim " + std::to_string(x.size()) +
                                    " does not match spec.in " + std::to_string(spec.in));
    std::vector<double> y(spec.out);
    mlp_forward(store, spec, x.data(), y.data(), nullptr);
    return y;
}

void mlp_backward(ParamStore& store, const MlpSpec& spec, const double* x,
                  const double* hid_pre, const double* dy, double* dx,
                  bool with_param_grads) {
    const auto W1 = store.values(spec.prefix + ".W1");
    const auto W2 = store.values(spec.prefix + ".W2");
    const std::size_t in = spec.in, hid = spec.hidden, out = spec.out;

    // dh = W2^T dy, masked by relu'.
    std::vector<double> dh(hid, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
        const double g = dy[o];
        if (g == 0.0) continue;
        const float* row = W2.data() + o * hid;
        for (std::size_t j = 0; j < hid; ++j) dh[j] += static_cast<double>(row[j]) * g;
    }
    for (std::size_t j = 0; j < hid; ++j)
        if (hid_pre[j] <= 0.0) dh[j] = 0.0;

    if (with_param_grads) {
        auto gW1 = store.grads(spec.prefix + ".W1");
        auto gb1 = store.grads(spec.prefix + ".b1");
        auto gW2 = store.grads(spec.prefix + ".W2");
        auto gb2 = store.grads(spec.prefix + ".b2");
        for (std::size_t o = 0; o < out; ++o) {
            const double g = dy[o];
            gb2[o] += g;
            if (g == 0.0) continue;
            double* row = gW2.data() + o * hid;
            for (std::size_t j = 0; j < hid; ++j) {
                const double hj = hid_pre[j] > 0.0 ? hid_pre[j] : 0.0;
                row[j] += g * hj;
            }
        }
        for (std::size_t j = 0; j < hid; ++j) {
            const double g = dh[j];
            gb1[j] += g;
            if (g == 0.0) continue;
            double* row = gW1.data() + j * in;
            for (std::size_t i = 0; i < in; ++i) row[i] += g * x[i];
        }
    }
    if (dx) {
        for (std::size_t j = 0; j < hid; ++j) {
            const double g = dh[j];
            if (g == 0.0) continue;
            const float* row = W1.data() + j * in;
            for (std::size_t i = 0; i < in; ++i) dx[i] += static_cast<double>(row[i]) * g;
        }
    }
}

void mlp_input_grad(const ParamStore& store, const MlpSpec& spec,
                    const double* hid_pre, const double* dy, double* dx) {
    const auto W1 = store.values(spec.prefix + ".W1");
    const auto W2 = store.values(spec.prefix + ".W2");
    const std::size_t in = spec.in, hid = spec.hidden, out = spec.out;

    std::vector<double> dh(hid, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
        const double g = dy[o];
        if (g == 0.0) continue;
        const float* row = W2.data() + o * hid;
        for (std::size_t j = 0; j < hid; ++j) dh[j] += static_cast<double>(row[j]) * g;
    }
    for (std::size_t j = 0; j < hid; ++j) {
        if (hid_pre[j] <= 0.0) continue;
        const double g = dh[j];
        if (g == 0.0) continue;
        const float* row = W1.data() + j * in;
        for (std::size_t i = 0; i < in; ++i) dx[i] += static_cast<double>(row[i]) * g;
    }
}

void softmax_temp_into(std::span<const double> logits, double temperature,
                       std::span<double> probs) {
    if (temperature <= 0.0)
        throw std::invalid_argument("softmax_temp: temperature must be > 0");
    if (probs.size() != logits.size())
        throw std::invalid_argument("softmax_temp: output size mismatch");
    double max_scaled = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (!std::isfinite(logits[i]))
            throw NumericError("softmax_temp: non-finite logit");
        max_scaled = std::max(max_scaled, logits[i] / temperature);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] / temperature - max_scaled);
        sum += probs[i];
    }
    for (auto& p : probs) p /= sum;
}

std::vector<double> softmax_temp(std::span<const double> logits, double temperature) {
    std::vector<double> p(logits.size());
    softmax_temp_into(logits, temperature, p);
    return p;
}

void softmax_backward(std::span<const double> probs, std::span<const double> dprobs,
                      std::span<double> dz) {
    double dot = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * dprobs[i];
    for (std::size_t i = 0; i < probs.size(); ++i) dz[i] += probs[i] * (dprobs[i] - dot);
}

double sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) {
    // log(1 + e^x) without overflow.
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double log_sum_exp(std::span<const double> v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    double sum = 0.0;
    for (double x : v) sum += std::exp(x - m);
    return m + std::log(sum);
}

}  // namespace momok
