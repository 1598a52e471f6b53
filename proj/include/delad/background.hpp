#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "delad/image.hpp"
#include "delad/wavelet.hpp"

namespace delad {

inline constexpr int kBackgroundLevels = 7;
inline constexpr int kBackgroundIterations = 3;

/// Iterative low-frequency background estimate: clip above the mean, keep
/// only the level-7 Daubechies-6 approximation band, and bound the result by
/// sqrt(y)/2 pointwise; the combined image seeds the next iteration.
inline Image estimate_background(const Image& y, int iterations = kBackgroundIterations) {
    if (iterations < 1) throw Error("estimate_background: iterations must be >= 1");
    require_finite(y, "estimate_background");

    int levels = kBackgroundLevels;
    const int feasible = max_wavelet_levels(y.height, y.width);
    if (feasible < levels) {
        std::fprintf(stderr,
                     "estimate_background: image %dx%d too small for %d levels, using %d\n",
                     y.height, y.width, levels, feasible);
        levels = feasible;
    }
    if (levels < 1) throw Error("estimate_background: image too small for any wavelet level");

    std::vector<double> bound(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        bound[i] = std::sqrt(std::max(y.data[i], 0.0)) / 2.0;

    Image estimate = y;
    for (int it = 0; it < iterations; ++it) {
        double mean = 0.0;
        for (double v : estimate.data) mean += v;
        mean /= static_cast<double>(estimate.size());
        Image clipped = estimate;
        for (double& v : clipped.data) v = std::min(v, mean);

        WaveletPyramid p = dwt2(clipped, levels);
        p.keep_approximation_only();
        Image lowpass = idwt2(p);

        for (std::size_t i = 0; i < estimate.size(); ++i)
            estimate.data[i] = std::min(lowpass.data[i], bound[i]);
    }
    return estimate;
}

/// Subtracts the estimated background, clamped to [0,1].
inline Image remove_background(const Image& y, int iterations = kBackgroundIterations) {
    Image bg = estimate_background(y, iterations);
    Image out(y.height, y.width);
    for (std::size_t i = 0; i < y.size(); ++i)
        out.data[i] = std::clamp(y.data[i] - bg.data[i], 0.0, 1.0);
    return out;
}

}  // namespace delad
