#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "latefuse/core/tensor.hpp"

namespace latefuse {

struct AdamHyper {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// First and second moment estimates, one pair per parameter tensor.
struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::int64_t step = 0;

    static AdamState zeros_like(std::span<const Tensor> params);
};

// One AdamW update (bias-corrected moments, weight decay decoupled from the
// gradient and scaled by lr). Shapes of params, grads and state must agree.
// decay_mask, when non-empty, selects which tensors receive weight decay.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state,
               const AdamHyper& hyper, std::span<const std::uint8_t> decay_mask = {});

// Rescales grads in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> grads, double max_norm);

}  // namespace latefuse
