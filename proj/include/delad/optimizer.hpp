#pragma once

#include <cmath>
#include <vector>

#include "delad/autodiff.hpp"
#include "delad/image.hpp"

namespace delad {

/// RMSprop moving average of squared gradients for one parameter tensor.
struct RmspropState {
    std::vector<double> v;  // same length as the parameter, starts at zero
    double rho = 0.99;
    double epsilon = 1e-8;

    explicit RmspropState(std::size_t n = 0, double rho_ = 0.99, double eps = 1e-8)
        : v(n, 0.0), rho(rho_), epsilon(eps) {}
};

/// v <- rho v + (1-rho) g^2 ;  theta <- theta - lr g / (sqrt(v) + eps)
inline void rmsprop_step(ad::Tensor& param, const ad::Tensor& grad, RmspropState& state,
                         double lr) {
    if (!param.same_shape(grad)) throw Error("rmsprop_step: shape mismatch");
    if (state.v.size() != param.size()) throw Error("rmsprop_step: state size mismatch");
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad.v[i];
        if (!std::isfinite(g)) throw Error("rmsprop_step: non-finite gradient");
        state.v[i] = state.rho * state.v[i] + (1.0 - state.rho) * g * g;
        param.v[i] -= lr * g / (std::sqrt(state.v[i]) + state.epsilon);
    }
}

/// Milestone schedule: lr(epoch) = initial * decay^(#milestones <= epoch).
struct LrSchedule {
    double initial_lr = 0.05;
    std::vector<int> milestones = {1000, 1500};
    double decay = 0.2;
};

inline void validate(const LrSchedule& s) {
    if (s.initial_lr <= 0.0) throw Error("LrSchedule: initial lr must be positive");
    if (s.decay <= 0.0 || s.decay >= 1.0) throw Error("LrSchedule: decay must be in (0,1)");
    for (std::size_t i = 1; i < s.milestones.size(); ++i)
        if (s.milestones[i] <= s.milestones[i - 1])
            throw Error("LrSchedule: milestones must be strictly increasing");
}

inline double lr_at_epoch(const LrSchedule& sched, int epoch) {
    if (epoch < 0) throw Error("lr_at_epoch: epoch must be >= 0");
    double lr = sched.initial_lr;
    for (int m : sched.milestones)
        if (m <= epoch) lr *= sched.decay;
    return lr;
}

}  // namespace delad
