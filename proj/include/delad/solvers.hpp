#pragma once

#include <string>

#include "delad/fft_conv.hpp"
#include "delad/image.hpp"

namespace delad {

struct SolverConfig {
    double step_size = 0.8;
    int iterations = 1000;
    bool nonneg_projection = false;
};

inline void validate(const SolverConfig& cfg) {
    if (cfg.iterations < 1) throw Error("SolverConfig: iterations must be >= 1");
    if (cfg.step_size <= 0.0) throw Error("SolverConfig: step size must be positive");
    // unit-sum nonnegative kernels have ||H|| <= 1, so gamma < 2 is stable
    if (!cfg.nonneg_projection && cfg.step_size >= 2.0)
        throw Error("SolverConfig: step size must be < 2 without projection");
}

namespace solver_detail {

inline void check_finite(const Image& x, const char* solver, int iteration) {
    for (double v : x.data)
        if (!std::isfinite(v))
            throw Error(std::string(solver) + ": non-finite value at iteration " +
                        std::to_string(iteration));
}

}  // namespace solver_detail

/// Landweber iteration x <- x + gamma * Hᵀ(y - Hx), started from x = y.
inline Image landweber(const Image& y, const Psf& h, const SolverConfig& cfg) {
    validate(cfg);
    auto otf = OtfCache::global().get(h, y.height, y.width);
    Image x = y;
    for (int k = 0; k < cfg.iterations; ++k) {
        Image residual = convolve(x, *otf, false);
        for (std::size_t i = 0; i < residual.size(); ++i)
            residual.data[i] = y.data[i] - residual.data[i];
        Image step = convolve(residual, *otf, true);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x.data[i] += cfg.step_size * step.data[i];
            if (cfg.nonneg_projection && x.data[i] < 0.0) x.data[i] = 0.0;
        }
        solver_detail::check_finite(x, "landweber", k);
    }
    return x;
}

/// Richardson-Lucy multiplicative update, started from x = y.
inline Image richardson_lucy(const Image& y_in, const Psf& h, int iterations) {
    if (iterations < 1) throw Error("richardson_lucy: iterations must be >= 1");
    constexpr double kGuard = 1e-12;
    Image y = y_in;
    for (double& v : y.data)
        if (v < 0.0) v = 0.0;
    auto otf = OtfCache::global().get(h, y.height, y.width);
    Image x = y;
    for (int k = 0; k < iterations; ++k) {
        Image blurred = convolve(x, *otf, false);
        for (std::size_t i = 0; i < blurred.size(); ++i)
            blurred.data[i] = y.data[i] / (blurred.data[i] + kGuard);
        Image ratio = convolve(blurred, *otf, true);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x.data[i] *= ratio.data[i];
            if (x.data[i] < 0.0) x.data[i] = 0.0;
        }
        solver_detail::check_finite(x, "richardson_lucy", k);
    }
    return x;
}

}  // namespace delad
