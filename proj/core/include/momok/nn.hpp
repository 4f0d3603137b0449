#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "momok/param_store.hpp"
#include "momok/rng.hpp"

namespace momok {

// Two-layer ReLU network y = W2 * relu(W1 x + b1) + b2, with parameter groups
// "<prefix>.W1" [hidden, in], "<prefix>.b1" [hidden], "<prefix>.W2" [out, hidden]
// and "<prefix>.b2" [out]. Forward/backward run in 64-bit over the 32-bit
// parameters; the backward pass is written out by hand.
struct MlpSpec {
    std::string prefix;
    std::size_t in = 0;
    std::size_t hidden = 0;
    std::size_t out = 0;
};

void mlp_add_params(ParamStore& store, const MlpSpec& spec);
void mlp_init_xavier(ParamStore& store, const MlpSpec& spec, Rng& rng);

// Forward pass; writes y[out]. If hid_pre is non-null it receives the hidden
// pre-activations needed by mlp_backward.
void mlp_forward(const ParamStore& store, const MlpSpec& spec, const double* x,
                 double* y, double* hid_pre);

// Convenience single-shot apply (allocates the output).
std::vector<double> mlp_apply(const ParamStore& store, const MlpSpec& spec,
                              std::span<const double> x);

// Accumulates parameter gradients (unless with_param_grads is false) and,
// when dx is non-null, accumulates the input gradient into dx.
void mlp_backward(ParamStore& store, const MlpSpec& spec, const double* x,
                  const double* hid_pre, const double* dy, double* dx,
                  bool with_param_grads = true);

// Input gradient only; parameters are treated as frozen constants.
void mlp_input_grad(const ParamStore& store, const MlpSpec& spec,
                    const double* hid_pre, const double* dy, double* dx);

// p_i = exp(l_i / temperature) / sum_j exp(l_j / temperature), computed with
// max subtraction. Throws NumericError on non-finite logits and
// std::invalid_argument on temperature <= 0.
std::vector<double> softmax_temp(std::span<const double> logits, double temperature);

// In-place variant writing into `probs` (must have logits.size()).
void softmax_temp_into(std::span<const double> logits, double temperature,
                       std::span<double> probs);

// Given p = softmax(z) and dL/dp, accumulates dL/dz into dz.
void softmax_backward(std::span<const double> probs, std::span<const double> dprobs,
                      std::span<double> dz);

double sigmoid(double x);
double softplus(double x);
// log(sum_i exp(v_i)) with max subtraction.
double log_sum_exp(std::span<const double> v);

}  // namespace momok
