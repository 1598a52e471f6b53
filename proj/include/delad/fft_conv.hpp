#pragma once

#include <complex>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <fftw3.h>

#include "delad/image.hpp"
#include "delad/image_io.hpp"

namespace delad {

/// Nonnegative blur kernel, odd dimensions, entries summing to 1.
struct Psf {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

inline Psf make_psf(int h, int w, std::vector<double> values) {
    if (h < 1 || w < 1 || values.size() != static_cast<std::size_t>(h) * w)
        throw Error("make_psf: bad dimensions");
    // even sizes get one trailing zero row/column so the center pixel is unique
    if (h % 2 == 0 || w % 2 == 0) {
        const int nh = h % 2 == 0 ? h + 1 : h;
        const int nw = w % 2 == 0 ? w + 1 : w;
        std::vector<double> padded(static_cast<std::size_t>(nh) * nw, 0.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                padded[static_cast<std::size_t>(y) * nw + x] =
                    values[static_cast<std::size_t>(y) * w + x];
        h = nh;
        w = nw;
        values = std::move(padded);
    }
    double sum = 0.0;
    for (double v : values) {
        if (!std::isfinite(v)) throw Error("make_psf: non-finite entry");
        if (v < 0.0) throw Error("make_psf: negative entry");
        sum += v;
    }
    if (sum <= 0.0) throw Error("make_psf: all-zero kernel");
    for (double& v : values) v /= sum;
    return Psf{h, w, std::move(values)};
}

inline Psf delta_psf(int size = 3) {
    std::vector<double> v(static_cast<std::size_t>(size) * size, 0.0);
    v[static_cast<std::size_t>(size / 2) * size + size / 2] = 1.0;
    return make_psf(size, size, std::move(v));
}

/// Parses a whitespace-delimited text grid of nonnegative reals.
inline Psf parse_kernel_text(std::istream& in) {
    std::vector<double> values;
    int width = -1;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::vector<double> row;
        double v;
        while (ls >> v) row.push_back(v);
        if (row.empty()) continue;
        if (width == -1)
            width = static_cast<int>(row.size());
        else if (static_cast<int>(row.size()) != width)
            throw Error("load_kernel: ragged text grid");
        values.insert(values.end(), row.begin(), row.end());
    }
    if (values.empty()) throw Error("load_kernel: empty kernel file");
    const int height = static_cast<int>(values.size()) / width;
    return make_psf(height, width, std::move(values));
}

/// Loads a kernel from a grayscale image or a whitespace-delimited text grid.
/// Entries are normalized to sum 1; even sizes are padded to odd.
inline Psf load_kernel(const std::string& path) {
    const bool looks_text = [&] {
        std::ifstream probe(path, std::ios::binary);
        if (!probe) throw Error("load_kernel: cannot open " + path);
        char head[2] = {0, 0};
        probe.read(head, 2);
        if (head[0] == 'P' && (head[1] == '5' || head[1] == '6')) return false;
        if (static_cast<unsigned char>(head[0]) == 0x89 && head[1] == 'P') return false;
        return !io_detail::has_suffix(path, ".png");
    }();
    if (looks_text) {
        std::ifstream in(path);
        return parse_kernel_text(in);
    }
    Image img = load_gray(path);
    return make_psf(img.height, img.width, std::move(img.data));
}

// ---------------------------------------------------------------------------
// Frequency-domain operator. The OTF is the r2c transform of the kernel
// embedded at the origin with its center pixel wrapped to (0,0), so a delta
// kernel gives the identity operator.

struct Otf {
    int height = 0;
    int width = 0;
    std::vector<std::complex<double>> freq;  // height x (width/2+1)
};

namespace fft_detail {

struct Plans {
    fftw_plan fwd = nullptr;
    fftw_plan inv = nullptr;
    ~Plans() {
        if (fwd) fftw_destroy_plan(fwd);
        if (inv) fftw_destroy_plan(inv);
    }
};

// FFTW plan creation is not thread-safe; execution through the new-array
// interface is. One plan pair per shape, FFTW_UNALIGNED so plans run on
// plain vector storage.
inline Plans& plans_for(int h, int w) {
    static std::mutex mu;
    static std::map<std::pair<int, int>, std::unique_ptr<Plans>> cache;
    std::scoped_lock lock(mu);
    auto& slot = cache[{h, w}];
    if (!slot) {
        slot = std::make_unique<Plans>();
        std::vector<double> re(static_cast<std::size_t>(h) * w);
        std::vector<std::complex<double>> cx(static_cast<std::size_t>(h) * (w / 2 + 1));
        slot->fwd = fftw_plan_dft_r2c_2d(h, w, re.data(),
                                         reinterpret_cast<fftw_complex*>(cx.data()),
                                         FFTW_ESTIMATE | FFTW_UNALIGNED);
        slot->inv = fftw_plan_dft_c2r_2d(h, w, reinterpret_cast<fftw_complex*>(cx.data()),
                                         re.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
        if (!slot->fwd || !slot->inv) throw Error("fft: plan creation failed");
    }
    return *slot;
}

inline std::vector<std::complex<double>> forward(const std::vector<double>& src, int h, int w) {
    std::vector<std::complex<double>> out(static_cast<std::size_t>(h) * (w / 2 + 1));
    std::vector<double> in = src;  // r2c destroys its input
    fftw_execute_dft_r2c(plans_for(h, w).fwd, in.data(),
                         reinterpret_cast<fftw_complex*>(out.data()));
    return out;
}

inline std::vector<double> inverse(std::vector<std::complex<double>> freq, int h, int w) {
    std::vector<double> out(static_cast<std::size_t>(h) * w);
    fftw_execute_dft_c2r(plans_for(h, w).inv,
                         reinterpret_cast<fftw_complex*>(freq.data()), out.data());
    const double scale = 1.0 / (static_cast<double>(h) * w);
    for (double& v : out) v *= scale;
    return out;
}

}  // namespace fft_detail

inline Otf make_otf(const Psf& psf, int height, int width) {
    if (psf.height > height || psf.width > width)
        throw Error("make_otf: kernel larger than image");
    std::vector<double> padded(static_cast<std::size_t>(height) * width, 0.0);
    const int cy = psf.height / 2, cx = psf.width / 2;
    for (int y = 0; y < psf.height; ++y)
        for (int x = 0; x < psf.width; ++x) {
            const int py = ((y - cy) % height + height) % height;
            const int px = ((x - cx) % width + width) % width;
            padded[static_cast<std::size_t>(py) * width + px] += psf.at(y, x);
        }
    return Otf{height, width, fft_detail::forward(padded, height, width)};
}

inline Image convolve(const Image& x, const Otf& otf, bool adjoint = false) {
    if (x.height != otf.height || x.width != otf.width)
        throw Error("convolve: image shape does not match OTF");
    auto freq = fft_detail::forward(x.data, x.height, x.width);
    for (std::size_t i = 0; i < freq.size(); ++i)
        freq[i] *= adjoint ? std::conj(otf.freq[i]) : otf.freq[i];
    Image out(x.height, x.width);
    out.data = fft_detail::inverse(std::move(freq), x.height, x.width);
    return out;
}

/// Circular convolution y = H x, kernel center aligned so a delta kernel is
/// the identity.
inline Image convolve(const Image& x, const Psf& h) {
    return convolve(x, make_otf(h, x.height, x.width), false);
}

/// Circular correlation Hᵀ x, the exact adjoint of convolve.
inline Image adjoint_convolve(const Image& x, const Psf& h) {
    return convolve(x, make_otf(h, x.height, x.width), true);
}

// ---------------------------------------------------------------------------
// Read-mostly OTF cache keyed by kernel content and target shape. Cached and
// uncached paths produce identical results; the cache only skips the psf
// transform.

class OtfCache {
public:
    std::shared_ptr<const Otf> get(const Psf& psf, int height, int width) {
        const std::uint64_t key = hash_key(psf, height, width);
        {
            std::scoped_lock lock(mu_);
            auto it = map_.find(key);
            if (it != map_.end()) return it->second;
        }
        auto otf = std::make_shared<const Otf>(make_otf(psf, height, width));
        std::scoped_lock lock(mu_);
        auto [it, inserted] = map_.emplace(key, otf);
        return it->second;
    }

    static OtfCache& global() {
        static OtfCache cache;
        return cache;
    }

private:
    static std::uint64_t hash_key(const Psf& psf, int h, int w) {
        std::uint64_t hash = 1469598103934665603ull;  // FNV-1a
        auto mix = [&hash](const void* p, std::size_t n) {
            const auto* b = static_cast<const unsigned char*>(p);
            for (std::size_t i = 0; i < n; ++i) {
                hash ^= b[i];
                hash *= 1099511628211ull;
            }
        };
        mix(&psf.height, sizeof psf.height);
        mix(&psf.width, sizeof psf.width);
        mix(psf.data.data(), psf.data.size() * sizeof(double));
        mix(&h, sizeof h);
        mix(&w, sizeof w);
        return hash;
    }

    std::mutex mu_;
    std::map<std::uint64_t, std::shared_ptr<const Otf>> map_;
};

}  // namespace delad
