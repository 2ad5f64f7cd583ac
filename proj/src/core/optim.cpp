#include "latefuse/core/optim.hpp"

#include <cmath>
#include <string>

namespace latefuse {

AdamState AdamState::zeros_like(std::span<const Tensor> params) {
    AdamState state;
    for (const auto& p : params) {
        state.m.emplace_back(p.shape());
        state.v.emplace_back(p.shape());
    }
    return state;
}

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state,
               const AdamHyper& hyper, std::span<const std::uint8_t> decay_mask) {
    if (!decay_mask.empty() && decay_mask.size() != params.size()) {
        throw DimensionError("adam_step: decay mask has " + std::to_string(decay_mask.size()) + " entries for " +
                             std::to_string(params.size()) + " params");
    }
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw DimensionError("adam_step: " + std::to_string(params.size()) + " params, " +
                             std::to_string(grads.size()) + " grads, " + std::to_string(state.m.size()) +
                             " moment slots");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].same_shape(grads[i]) || !params[i].same_shape(state.m[i]) ||
            !params[i].same_shape(state.v[i])) {
            throw DimensionError("adam_step: shape mismatch at parameter " + std::to_string(i) + " " +
                                 shape_string(params[i].shape()) + " vs grad " + shape_string(grads[i].shape()));
        }
    }

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const float b1 = static_cast<float>(hyper.beta1);
    const float b2 = static_cast<float>(hyper.beta2);
    const float c1 = static_cast<float>(1.0 / (1.0 - std::pow(hyper.beta1, t)));
    const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(hyper.beta2, t)));
    const float lr = static_cast<float>(hyper.lr);
    const float decay = static_cast<float>(hyper.lr * hyper.weight_decay);
    const float eps = static_cast<float>(hyper.eps);

    for (std::size_t i = 0; i < params.size(); ++i) {
        const float wd = (decay_mask.empty() || decay_mask[i]) ? decay : 0.0f;
        float* p = params[i].raw();
        const float* g = grads[i].raw();
        float* m = state.m[i].raw();
        float* v = state.v[i].raw();
        for (std::size_t j = 0; j < params[i].size(); ++j) {
            m[j] = b1 * m[j] + (1.0f - b1) * g[j];
            v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
            const float mhat = m[j] * c1;
            const float vhat = v[j] * c2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + eps) + wd * p[j];
        }
    }
}

double clip_grad_norm(std::span<Tensor> grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads) {
        for (const float v : g.data()) {
            sq += static_cast<double>(v) * v;
        }
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const float s = static_cast<float>(max_norm / norm);
        for (auto& g : grads) {
            for (auto& v : g.data()) {
                v *= s;
            }
        }
    }
    return norm;
}

}  // namespace latefuse
