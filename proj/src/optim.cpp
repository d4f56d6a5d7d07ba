#include "nowcast/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace nowcast {

Tensor xavier_init(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    if (fan_in == 0 || fan_out == 0) {
        throw std::invalid_argument("xavier_init: fans must be positive");
    }
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_data()) v = stddev * rng.normal();
    return t;
}

AdamState AdamState::init(const std::vector<Tensor>& params, double learning_rate) {
    AdamState state;
    state.learning_rate = learning_rate;
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const Tensor& p : params) {
        state.m.push_back(Tensor::zeros(p.shape()));
        state.v.push_back(Tensor::zeros(p.shape()));
    }
    return state;
}

void adam_step(std::vector<Tensor>& params, const std::vector<std::span<const double>>& grads,
               AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw std::invalid_argument("adam_step: parameter/gradient/state counts do not match");
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (grads[p].size() != params[p].numel()) {
            throw std::invalid_argument("adam_step: gradient size mismatch for parameter " +
                                        std::to_string(p));
        }
        for (double g : grads[p]) {
            if (!std::isfinite(g)) {
                throw std::runtime_error("adam_step: non-finite gradient for parameter " +
                                         std::to_string(p) + "; update rejected");
            }
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        double* theta = params[p].mutable_data().data();
        double* m = state.m[p].mutable_data().data();
        double* v = state.v[p].mutable_data().data();
        const std::span<const double> g = grads[p];
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            theta[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

void adam_step_from_grads(std::vector<Tensor>& params, AdamState& state, double grad_scale) {
    std::vector<std::vector<double>> scaled(params.size());
    std::vector<std::span<const double>> views(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
        std::span<const double> g = params[p].grad();
        if (g.empty()) {
            scaled[p].assign(params[p].numel(), 0.0);
        } else {
            scaled[p].assign(g.begin(), g.end());
            for (double& x : scaled[p]) x *= grad_scale;
        }
        views[p] = scaled[p];
    }
    adam_step(params, views, state);
}

}  // namespace nowcast
