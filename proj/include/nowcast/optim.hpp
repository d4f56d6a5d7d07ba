#pragma once

#include "nowcast/tensor.hpp"

namespace nowcast {

/// Zero-mean Xavier (Glorot) normal init with variance 2/(fan_in+fan_out).
Tensor xavier_init(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Adam optimizer state: one pair of moment tensors per parameter plus the
/// shared step counter and hyperparameters.
struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<Tensor> m;  // first moments, aligned with the parameter list
    std::vector<Tensor> v;  // second moments

    static AdamState init(const std::vector<Tensor>& params, double learning_rate = 1e-3);
};

/// One bias-corrected Adam update over the parameter list. Gradients are
/// taken per-parameter; a non-finite gradient rejects the whole update.
void adam_step(std::vector<Tensor>& params, const std::vector<std::span<const double>>& grads,
               AdamState& state);

/// Convenience: pulls gradients off the parameters' grad buffers, optionally
/// scaled (e.g. 1/batch for accumulated mini-batch gradients).
void adam_step_from_grads(std::vector<Tensor>& params, AdamState& state, double grad_scale = 1.0);

}  // namespace nowcast
