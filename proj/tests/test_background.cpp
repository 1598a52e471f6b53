#include <gtest/gtest.h>

#include <cmath>

#include "delad/background.hpp"
#include "test_util.hpp"

using namespace delad;

namespace {

// smooth field representable by the lowest wavelet bands plus isolated
// bright impulses
struct SyntheticScene {
    Image input;
    Image smooth;
    std::vector<std::pair<int, int>> impulse_at;
};

SyntheticScene impulses_on_smooth_field(int n, std::uint64_t seed) {
    SyntheticScene s;
    s.smooth = Image(n, n);
    for (int y = 0; y < n; ++y)
        for (int xx = 0; xx < n; ++xx)
            s.smooth.at(y, xx) =
                0.12 + 0.06 * std::sin(2.0 * M_PI * y / n) * std::cos(2.0 * M_PI * xx / n);
    s.input = s.smooth;
    Rng rng(seed);
    for (int i = 0; i < 20; ++i) {
        const int y = 8 + static_cast<int>(rng.uniform() * (n - 16));
        const int x = 8 + static_cast<int>(rng.uniform() * (n - 16));
        s.input.at(y, x) = std::min(1.0, s.input.at(y, x) + 0.7);
        s.impulse_at.push_back({y, x});
    }
    return s;
}

}  // namespace

TEST(EstimateBackground, ZeroImageMapsToZero) {
    Image y(256, 256, 0.0);
    Image bg = estimate_background(y);
    for (double v : bg.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(EstimateBackground, BoundedBySqrtHalf) {
    Image y = testutil::natural_scene(256, 256, 1);
    Image bg = estimate_background(y);
    for (std::size_t i = 0; i < y.size(); ++i)
        EXPECT_LE(bg.data[i], std::sqrt(y.data[i]) / 2.0 + 1e-12);
}

TEST(EstimateBackground, RecoversSmoothFieldUnderImpulses) {
    SyntheticScene s = impulses_on_smooth_field(256, 2);
    Image bg = estimate_background(s.input);
    double rms = 0.0;
    int count = 0;
    for (int y = 0; y < 256; ++y)
        for (int x = 0; x < 256; ++x) {
            bool near_impulse = false;
            for (auto [iy, ix] : s.impulse_at)
                if (std::abs(y - iy) <= 4 && std::abs(x - ix) <= 4) near_impulse = true;
            if (near_impulse) continue;
            // the estimate is capped by sqrt(y)/2, so compare against the
            // capped smooth field
            const double target =
                std::min(s.smooth.at(y, x), std::sqrt(s.input.at(y, x)) / 2.0);
            const double d = bg.at(y, x) - target;
            rms += d * d;
            ++count;
        }
    rms = std::sqrt(rms / count);
    EXPECT_LE(rms, 0.05);
}

TEST(EstimateBackground, SmallImageReducesLevels) {
    Image y = testutil::random_image(32, 32, 3, 0.0, 0.3);
    EXPECT_NO_THROW(estimate_background(y));  // warns, levels reduced to 5
}

TEST(RemoveBackground, ZeroMapsToZero) {
    Image y(128, 128, 0.0);
    Image out = remove_background(y);
    for (double v : out.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(RemoveBackground, OutputBounds) {
    Image y = testutil::natural_scene(128, 128, 4);
    Image out = remove_background(y);
    for (std::size_t i = 0; i < y.size(); ++i) {
        EXPECT_GE(out.data[i], 0.0);
        EXPECT_LE(out.data[i], 1.0);
        EXPECT_LE(out.data[i], y.data[i] + 1e-12);
        // lower bound from the sqrt(y)/2 cap on the background
        EXPECT_GE(out.data[i], y.data[i] - std::sqrt(y.data[i]) / 2.0 - 1e-12);
    }
}

TEST(RemoveBackground, AttenuatesFieldKeepsImpulses) {
    SyntheticScene s = impulses_on_smooth_field(256, 5);
    Image out = remove_background(s.input);

    // smooth field attenuation >= 50% away from impulses
    double before = 0.0, after = 0.0;
    for (int y = 0; y < 256; ++y)
        for (int x = 0; x < 256; ++x) {
            bool near_impulse = false;
            for (auto [iy, ix] : s.impulse_at)
                if (std::abs(y - iy) <= 4 && std::abs(x - ix) <= 4) near_impulse = true;
            if (near_impulse) continue;
            before += s.input.at(y, x);
            after += out.at(y, x);
        }
    EXPECT_LE(after, 0.5 * before);

    // impulse peaks preserved within 10% of their height over the local field
    for (auto [iy, ix] : s.impulse_at) {
        const double height_in = s.input.at(iy, ix) - s.smooth.at(iy, ix);
        const double height_out = out.at(iy, ix);
        EXPECT_GE(height_out, 0.9 * height_in) << "impulse at " << iy << "," << ix;
    }
}
