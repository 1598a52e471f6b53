#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <vector>

#include "delad/image.hpp"

namespace delad {

// Daubechies-6 (12-tap) analysis low-pass filter, computed by spectral
// factorization of the degree-6 half-band polynomial. Orthonormal: taps sum
// to sqrt(2), squares sum to 1, even-shift autocorrelations vanish.
inline constexpr std::array<double, 12> kDb6LowPass = {
    0.11154074335010946362,   0.49462389039845308568,  0.75113390802109535068,
    0.31525035170919762909,   -0.22626469396543982008, -0.12976686756726193556,
    0.097501605587323049102,  0.027522865530305728626, -0.031582039317486029565,
    0.00055384220116149613925, 0.0047772575109455106396, -0.0010773010853084795649};

namespace wavelet_detail {

inline constexpr int kTaps = 12;

inline double highpass(int k) {
    // quadrature mirror: g[k] = (-1)^k h[11-k]
    const double h = kDb6LowPass[kTaps - 1 - k];
    return (k % 2 == 0) ? h : -h;
}

// One periodized analysis step of a length-n (even) signal with stride
// access; writes n/2 approximation then n/2 detail coefficients.
template <typename Get, typename Set>
inline void analyze_1d(int n, Get get, Set set) {
    std::vector<double> out(n);
    const int half = n / 2;
    for (int i = 0; i < half; ++i) {
        double lo = 0.0, hi = 0.0;
        for (int k = 0; k < kTaps; ++k) {
            const double x = get((2 * i + k) % n);
            lo += kDb6LowPass[k] * x;
            hi += highpass(k) * x;
        }
        out[i] = lo;
        out[half + i] = hi;
    }
    for (int i = 0; i < n; ++i) set(i, out[i]);
}

// Exact inverse of analyze_1d (the analysis operator is orthogonal, so the
// synthesis is its transpose).
template <typename Get, typename Set>
inline void synthesize_1d(int n, Get get, Set set) {
    std::vector<double> out(n, 0.0);
    const int half = n / 2;
    for (int i = 0; i < half; ++i) {
        const double lo = get(i);
        const double hi = get(half + i);
        for (int k = 0; k < kTaps; ++k)
            out[(2 * i + k) % n] += kDb6LowPass[k] * lo + highpass(k) * hi;
    }
    for (int i = 0; i < n; ++i) set(i, out[i]);
}

inline int pad_to_multiple(int n, int m) { return ((n + m - 1) / m) * m; }

// symmetric (edge-inclusive reflection) index into [0, n)
inline int sym_index(int i, int n) {
    const int period = 2 * n;
    int j = i % period;
    if (j < 0) j += period;
    return j < n ? j : period - 1 - j;
}

}  // namespace wavelet_detail

/// Separable multilevel decomposition. Bands are stored in-place over a
/// padded working grid: after L levels, the top-left block holds the level-L
/// approximation and the remaining quadrants the detail bands.
struct WaveletPyramid {
    int orig_height = 0;
    int orig_width = 0;
    int levels = 0;
    int grid_height = 0;  // padded, divisible by 2^levels
    int grid_width = 0;
    std::vector<double> grid;

    int approx_height() const { return grid_height >> levels; }
    int approx_width() const { return grid_width >> levels; }

    double& at(int y, int x) { return grid[static_cast<std::size_t>(y) * grid_width + x]; }
    double at(int y, int x) const { return grid[static_cast<std::size_t>(y) * grid_width + x]; }

    /// Zeroes every coefficient outside the level-`levels` approximation.
    void keep_approximation_only() {
        const int ah = approx_height(), aw = approx_width();
        for (int y = 0; y < grid_height; ++y)
            for (int x = 0; x < grid_width; ++x)
                if (y >= ah || x >= aw) at(y, x) = 0.0;
    }
};

inline int max_wavelet_levels(int height, int width) {
    int levels = 0;
    int m = std::min(height, width);
    while ((1 << (levels + 1)) <= m) ++levels;
    return levels;
}

/// Daubechies-6 decomposition with periodic extension. Sizes that are not
/// divisible by 2^levels are symmetrically padded and cropped on the way
/// back by idwt2.
inline WaveletPyramid dwt2(const Image& x, int levels) {
    if (levels < 1) throw Error("dwt2: levels must be >= 1");
    if ((1 << levels) > std::min(x.height, x.width))
        throw Error("dwt2: too many levels for image size");

    using namespace wavelet_detail;
    WaveletPyramid p;
    p.orig_height = x.height;
    p.orig_width = x.width;
    p.levels = levels;
    p.grid_height = pad_to_multiple(x.height, 1 << levels);
    p.grid_width = pad_to_multiple(x.width, 1 << levels);
    p.grid.resize(static_cast<std::size_t>(p.grid_height) * p.grid_width);
    for (int y = 0; y < p.grid_height; ++y)
        for (int xx = 0; xx < p.grid_width; ++xx)
            p.at(y, xx) = x.at(sym_index(y, x.height), sym_index(xx, x.width));

    int h = p.grid_height, w = p.grid_width;
    for (int level = 0; level < levels; ++level) {
        for (int y = 0; y < h; ++y)
            analyze_1d(
                w, [&](int i) { return p.at(y, i); },
                [&](int i, double v) { p.at(y, i) = v; });
        for (int xx = 0; xx < w; ++xx)
            analyze_1d(
                h, [&](int i) { return p.at(i, xx); },
                [&](int i, double v) { p.at(i, xx) = v; });
        h /= 2;
        w /= 2;
    }
    return p;
}

inline Image idwt2(const WaveletPyramid& pyramid) {
    using namespace wavelet_detail;
    WaveletPyramid p = pyramid;  // synthesis works in place on a copy
    for (int level = p.levels - 1; level >= 0; --level) {
        const int h = p.grid_height >> level;
        const int w = p.grid_width >> level;
        for (int xx = 0; xx < w; ++xx)
            synthesize_1d(
                h, [&](int i) { return p.at(i, xx); },
                [&](int i, double v) { p.at(i, xx) = v; });
        for (int y = 0; y < h; ++y)
            synthesize_1d(
                w, [&](int i) { return p.at(y, i); },
                [&](int i, double v) { p.at(y, i) = v; });
    }
    Image out(p.orig_height, p.orig_width);
    for (int y = 0; y < p.orig_height; ++y)
        for (int xx = 0; xx < p.orig_width; ++xx) out.at(y, xx) = p.at(y, xx);
    return out;
}

}  // namespace delad
