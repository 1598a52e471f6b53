#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include <png.h>

#include "delad/image.hpp"

namespace delad {

using LoadedImage = std::variant<Image, ColorImage>;

namespace io_detail {

inline bool has_suffix(const std::string& s, const char* suf) {
    std::string lower = s;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    const std::size_t n = std::strlen(suf);
    return lower.size() >= n && lower.compare(lower.size() - n, n, suf) == 0;
}

struct PngReadCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* fp = nullptr;
    ~PngReadCloser() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

struct PngWriteCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* fp = nullptr;
    ~PngWriteCloser() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

inline LoadedImage load_png(const std::string& path) {
    PngReadCloser c;
    c.fp = std::fopen(path.c_str(), "rb");
    if (!c.fp) throw Error("load_image: cannot open " + path);
    c.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    c.info = png_create_info_struct(c.png);
    if (!c.png || !c.info) throw Error("load_image: libpng init failed");
    if (setjmp(png_jmpbuf(c.png))) throw Error("load_image: corrupt PNG " + path);
    png_init_io(c.png, c.fp);
    png_read_info(c.png, c.info);

    const png_uint_32 w = png_get_image_width(c.png, c.info);
    const png_uint_32 h = png_get_image_height(c.png, c.info);
    int depth = png_get_bit_depth(c.png, c.info);
    int color = png_get_color_type(c.png, c.info);
    if (w == 0 || h == 0) throw Error("load_image: zero-sized image " + path);

    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(c.png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(c.png);
    if (png_get_valid(c.png, c.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(c.png);
    png_set_strip_alpha(c.png);
    if (depth == 16) png_set_swap(c.png);  // stream is big-endian
    png_read_update_info(c.png, c.info);

    depth = png_get_bit_depth(c.png, c.info);
    color = png_get_color_type(c.png, c.info);
    if (depth != 8 && depth != 16) throw Error("load_image: unsupported bit depth in " + path);
    const bool is_color = (color == PNG_COLOR_TYPE_RGB);
    if (!is_color && color != PNG_COLOR_TYPE_GRAY)
        throw Error("load_image: unsupported PNG color type in " + path);

    const int channels = is_color ? 3 : 1;
    const std::size_t rowbytes = png_get_rowbytes(c.png, c.info);
    std::vector<std::uint8_t> buf(rowbytes * h);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + y * rowbytes;
    png_read_image(c.png, rows.data());
    png_read_end(c.png, nullptr);

    const double scale = depth == 16 ? 1.0 / 65535.0 : 1.0 / 255.0;
    auto sample = [&](png_uint_32 y, png_uint_32 x, int ch) -> double {
        if (depth == 16) {
            const auto* p = reinterpret_cast<const std::uint16_t*>(buf.data() + y * rowbytes);
            return p[x * channels + ch] * scale;
        }
        return buf[y * rowbytes + x * channels + ch] * scale;
    };

    if (is_color) {
        ColorImage out;
        out.space = ColorSpace::RGB;
        for (auto& p : out.plane) p = Image(static_cast<int>(h), static_cast<int>(w));
        for (png_uint_32 y = 0; y < h; ++y)
            for (png_uint_32 x = 0; x < w; ++x)
                for (int ch = 0; ch < 3; ++ch)
                    out.plane[ch].at(static_cast<int>(y), static_cast<int>(x)) = sample(y, x, ch);
        return out;
    }
    Image out(static_cast<int>(h), static_cast<int>(w));
    for (png_uint_32 y = 0; y < h; ++y)
        for (png_uint_32 x = 0; x < w; ++x)
            out.at(static_cast<int>(y), static_cast<int>(x)) = sample(y, x, 0);
    return out;
}

inline void save_png(const std::string& path, const Image* planes, int nplanes, int bit_depth) {
    PngWriteCloser c;
    c.fp = std::fopen(path.c_str(), "wb");
    if (!c.fp) throw Error("save_image: cannot write " + path);
    c.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    c.info = png_create_info_struct(c.png);
    if (!c.png || !c.info) throw Error("save_image: libpng init failed");
    if (setjmp(png_jmpbuf(c.png))) throw Error("save_image: libpng failure on " + path);
    png_init_io(c.png, c.fp);

    const int h = planes[0].height, w = planes[0].width;
    const int color = nplanes == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(c.png, c.info, w, h, bit_depth, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(c.png, c.info);
    if (bit_depth == 16) png_set_swap(c.png);

    const double maxval = bit_depth == 16 ? 65535.0 : 255.0;
    if (bit_depth == 16) {
        std::vector<std::uint16_t> row(static_cast<std::size_t>(w) * nplanes);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < nplanes; ++ch)
                    row[static_cast<std::size_t>(x) * nplanes + ch] = static_cast<std::uint16_t>(
                        std::lround(std::clamp(planes[ch].at(y, x), 0.0, 1.0) * maxval));
            png_write_row(c.png, reinterpret_cast<png_bytep>(row.data()));
        }
    } else {
        std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * nplanes);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < nplanes; ++ch)
                    row[static_cast<std::size_t>(x) * nplanes + ch] = static_cast<std::uint8_t>(
                        std::lround(std::clamp(planes[ch].at(y, x), 0.0, 1.0) * maxval));
            png_write_row(c.png, row.data());
        }
    }
    png_write_end(c.png, nullptr);
}

// Binary PGM (P5) / PPM (P6), 8- or 16-bit big-endian samples.

inline int pnm_token(std::istream& in) {
    // skips whitespace and '#' comments, returns next integer
    while (true) {
        int ch = in.peek();
        if (ch == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(ch)) {
            in.get();
        } else {
            break;
        }
    }
    int v;
    if (!(in >> v)) throw Error("load_image: malformed PNM header");
    return v;
}

inline LoadedImage load_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("load_image: cannot open " + path);
    char magic[2];
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
        throw Error("load_image: not a binary PGM/PPM: " + path);
    const bool is_color = magic[1] == '6';
    const int w = pnm_token(in);
    const int h = pnm_token(in);
    const int maxval = pnm_token(in);
    in.get();  // single whitespace before raster
    if (w < 1 || h < 1) throw Error("load_image: zero-sized image " + path);
    if (maxval != 255 && maxval != 65535)
        throw Error("load_image: unsupported PNM maxval in " + path);

    const int channels = is_color ? 3 : 1;
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h * channels * bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw Error("load_image: truncated PNM raster in " + path);

    auto sample = [&](int y, int x, int ch) -> double {
        const std::size_t i = (static_cast<std::size_t>(y) * w + x) * channels + ch;
        if (bytes == 2)
            return (buf[2 * i] * 256.0 + buf[2 * i + 1]) / 65535.0;  // big-endian
        return buf[i] / 255.0;
    };

    if (is_color) {
        ColorImage out;
        out.space = ColorSpace::RGB;
        for (auto& p : out.plane) p = Image(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < 3; ++ch) out.plane[ch].at(y, x) = sample(y, x, ch);
        return out;
    }
    Image out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(y, x) = sample(y, x, 0);
    return out;
}

inline void save_pnm(const std::string& path, const Image* planes, int nplanes, int bit_depth) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_image: cannot write " + path);
    const int h = planes[0].height, w = planes[0].width;
    const int maxval = bit_depth == 16 ? 65535 : 255;
    out << (nplanes == 3 ? "P6" : "P5") << "\n" << w << " " << h << "\n" << maxval << "\n";
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < nplanes; ++ch) {
                const long v =
                    std::lround(std::clamp(planes[ch].at(y, x), 0.0, 1.0) * maxval);
                if (bit_depth == 16) {
                    out.put(static_cast<char>((v >> 8) & 0xff));
                    out.put(static_cast<char>(v & 0xff));
                } else {
                    out.put(static_cast<char>(v & 0xff));
                }
            }
    if (!out) throw Error("save_image: write failure on " + path);
}

}  // namespace io_detail

/// Loads a PNG or binary PGM/PPM; intensities map linearly to [0,1].
/// Grayscale files yield Image, color files ColorImage in RGB.
inline LoadedImage load_image(const std::string& path) {
    if (io_detail::has_suffix(path, ".png")) return io_detail::load_png(path);
    if (io_detail::has_suffix(path, ".pgm") || io_detail::has_suffix(path, ".ppm"))
        return io_detail::load_pnm(path);
    // no recognized suffix: sniff the magic bytes
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("load_image: cannot open " + path);
    char magic[2] = {0, 0};
    in.read(magic, 2);
    in.close();
    if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6'))
        return io_detail::load_pnm(path);
    return io_detail::load_png(path);
}

/// Loads a file that must be grayscale; color input is reduced by BT.601 luma.
inline Image load_gray(const std::string& path) {
    LoadedImage li = load_image(path);
    if (std::holds_alternative<Image>(li)) return std::get<Image>(std::move(li));
    const ColorImage& c = std::get<ColorImage>(li);
    Image out(c.height(), c.width());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = 0.299 * c.plane[0].data[i] + 0.587 * c.plane[1].data[i] +
                      0.114 * c.plane[2].data[i];
    return out;
}

/// Values are clamped to [0,1] and quantized; default depth is 16 bits.
inline void save_image(const Image& img, const std::string& path, int bit_depth = 16) {
    if (bit_depth != 8 && bit_depth != 16) throw Error("save_image: bit depth must be 8 or 16");
    if (io_detail::has_suffix(path, ".pgm"))
        io_detail::save_pnm(path, &img, 1, bit_depth);
    else
        io_detail::save_png(path, &img, 1, bit_depth);
}

inline void save_image(const ColorImage& img, const std::string& path, int bit_depth = 16) {
    if (img.space != ColorSpace::RGB) throw Error("save_image: color output must be RGB");
    if (bit_depth != 8 && bit_depth != 16) throw Error("save_image: bit depth must be 8 or 16");
    if (io_detail::has_suffix(path, ".ppm"))
        io_detail::save_pnm(path, img.plane, 3, bit_depth);
    else
        io_detail::save_png(path, img.plane, 3, bit_depth);
}

}  // namespace delad
