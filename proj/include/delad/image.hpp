#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace delad {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Real-valued 2D intensity grid, row-major, nominal range [0,1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, double fill = 0.0)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {
        if (h < 1 || w < 1) throw Error("Image: dimensions must be >= 1");
    }

    double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return data.size(); }

    bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
};

enum class ColorSpace { RGB, YCbCr };

/// Three planes of identical shape plus the space they are expressed in.
struct ColorImage {
    ColorSpace space = ColorSpace::RGB;
    Image plane[3];

    int height() const { return plane[0].height; }
    int width() const { return plane[0].width; }
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b))
        throw Error(std::string(what) + ": shape mismatch (" + std::to_string(a.height) + "x" +
                    std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                    std::to_string(b.width) + ")");
}

inline void require_finite(const Image& img, const char* what) {
    for (double v : img.data)
        if (!std::isfinite(v)) throw Error(std::string(what) + ": non-finite value");
}

inline Image clamp01(Image img) {
    for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
    return img;
}

// ---------------------------------------------------------------------------
// Color conversion, BT.601 full range. Cb/Cr carry a +0.5 offset so every
// plane lives in [0,1].

inline ColorImage convert_color(const ColorImage& img, ColorSpace target) {
    if (img.space == target) throw Error("convert_color: source space equals target");
    require_same_shape(img.plane[0], img.plane[1], "convert_color");
    require_same_shape(img.plane[0], img.plane[2], "convert_color");

    ColorImage out;
    out.space = target;
    for (auto& p : out.plane) p = Image(img.height(), img.width());

    const std::size_t n = img.plane[0].size();
    if (target == ColorSpace::YCbCr) {
        for (std::size_t i = 0; i < n; ++i) {
            const double r = img.plane[0].data[i];
            const double g = img.plane[1].data[i];
            const double b = img.plane[2].data[i];
            const double y = 0.299 * r + 0.587 * g + 0.114 * b;
            out.plane[0].data[i] = y;
            out.plane[1].data[i] = 0.5 + (b - y) / 1.772;
            out.plane[2].data[i] = 0.5 + (r - y) / 1.402;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const double y = img.plane[0].data[i];
            const double cb = img.plane[1].data[i] - 0.5;
            const double cr = img.plane[2].data[i] - 0.5;
            const double r = y + 1.402 * cr;
            const double b = y + 1.772 * cb;
            const double g = (y - 0.299 * r - 0.114 * b) / 0.587;
            out.plane[0].data[i] = r;
            out.plane[1].data[i] = g;
            out.plane[2].data[i] = b;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// PSNR, peak 1.0, capped at 100 dB for identical inputs.

inline constexpr double kPsnrCapDb = 100.0;

inline double psnr(const Image& a, const Image& b) {
    require_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse <= 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

// ---------------------------------------------------------------------------
// SSIM. 11x11 Gaussian window, sigma 1.5, C1=(0.01)^2, C2=(0.03)^2 for unit
// dynamic range. Every pixel is a window center; windows wrap periodically.
// Images smaller than the window fall back to one global window.
//
// ssim_stat_maps is the single source of the formula; the plain metric and
// the autodiff score both evaluate through it.

namespace ssim_detail {

inline constexpr int kWindow = 11;
inline constexpr double kSigma = 1.5;
inline constexpr double kC1 = 0.01 * 0.01;
inline constexpr double kC2 = 0.03 * 0.03;

inline const std::vector<double>& window_taps() {
    static const std::vector<double> taps = [] {
        std::vector<double> t(kWindow);
        double sum = 0.0;
        for (int i = 0; i < kWindow; ++i) {
            const double d = i - (kWindow - 1) / 2.0;
            t[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
            sum += t[i];
        }
        for (double& v : t) v /= sum;
        return t;
    }();
    return taps;
}

inline bool use_global_window(int h, int w) { return h < kWindow || w < kWindow; }

// Separable periodic filter with the normalized Gaussian taps, or the global
// mean broadcast when the image is smaller than the window. Self-adjoint in
// both cases.
inline std::vector<double> filter(const std::vector<double>& src, int h, int w) {
    std::vector<double> out(src.size());
    if (use_global_window(h, w)) {
        double m = 0.0;
        for (double v : src) m += v;
        m /= static_cast<double>(src.size());
        std::fill(out.begin(), out.end(), m);
        return out;
    }
    const auto& taps = window_taps();
    const int r = kWindow / 2;
    std::vector<double> tmp(src.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -r; k <= r; ++k) {
                int xx = (x + k) % w;
                if (xx < 0) xx += w;
                acc += taps[k + r] * src[static_cast<std::size_t>(y) * w + xx];
            }
            tmp[static_cast<std::size_t>(y) * w + x] = acc;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -r; k <= r; ++k) {
                int yy = (y + k) % h;
                if (yy < 0) yy += h;
                acc += taps[k + r] * tmp[static_cast<std::size_t>(yy) * w + x];
            }
            out[static_cast<std::size_t>(y) * w + x] = acc;
        }
    }
    return out;
}

struct StatMaps {
    std::vector<double> mu_a, mu_b, fa2, fb2, fab;  // filtered a, b, a^2, b^2, ab
    std::vector<double> score;                      // per-pixel SSIM map
    double mean = 0.0;
};

inline StatMaps stat_maps(const std::vector<double>& a, const std::vector<double>& b,
                          int h, int w) {
    const std::size_t n = a.size();
    std::vector<double> a2(n), b2(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        a2[i] = a[i] * a[i];
        b2[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    StatMaps m;
    m.mu_a = filter(a, h, w);
    m.mu_b = filter(b, h, w);
    m.fa2 = filter(a2, h, w);
    m.fb2 = filter(b2, h, w);
    m.fab = filter(ab, h, w);
    m.score.resize(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double mua = m.mu_a[i], mub = m.mu_b[i];
        const double sa2 = m.fa2[i] - mua * mua;
        const double sb2 = m.fb2[i] - mub * mub;
        const double sab = m.fab[i] - mua * mub;
        const double num = (2.0 * mua * mub + kC1) * (2.0 * sab + kC2);
        const double den = (mua * mua + mub * mub + kC1) * (sa2 + sb2 + kC2);
        m.score[i] = num / den;
        total += m.score[i];
    }
    m.mean = total / static_cast<double>(n);
    return m;
}

}  // namespace ssim_detail

inline double ssim(const Image& a, const Image& b) {
    require_same_shape(a, b, "ssim");
    return ssim_detail::stat_maps(a.data, b.data, a.height, a.width).mean;
}

}  // namespace delad
