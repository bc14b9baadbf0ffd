#pragma once
// Binary PGM (P5) / PPM (P6) with maxval 255. Images load as [C x H x W]
// float tensors in [0,1]; masks are PGMs holding 0 / 255.
#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "prefseg/core_types.hpp"

namespace prefseg::pnm {

namespace detail {

inline int read_header_int(std::istream& is) {
    int c = is.peek();
    while (is && (std::isspace(c) || c == '#')) {
        if (c == '#') {
            std::string skip;
            std::getline(is, skip);
        } else {
            is.get();
        }
        c = is.peek();
    }
    int v = -1;
    if (!(is >> v)) throw IoError("pnm: malformed header");
    return v;
}

}  // namespace detail

struct Raster {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<unsigned char> pixels;  // interleaved, row-major
};

inline Raster decode(std::istream& is) {
    char magic[2] = {0, 0};
    if (!is.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
        throw IoError("pnm: expected P5 or P6");
    Raster r;
    r.channels = magic[1] == '5' ? 1 : 3;
    r.width = detail::read_header_int(is);
    r.height = detail::read_header_int(is);
    const int maxval = detail::read_header_int(is);
    if (r.width <= 0 || r.height <= 0) throw IoError("pnm: non-positive size");
    if (maxval != 255) throw IoError("pnm: only maxval 255 is supported");
    is.get();  // single whitespace before the raster
    r.pixels.resize(static_cast<std::size_t>(r.width) * r.height * r.channels);
    if (!is.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size())))
        throw IoError("pnm: truncated raster");
    return r;
}

inline void encode(std::ostream& os, const Raster& r) {
    os << (r.channels == 1 ? "P5" : "P6") << '\n' << r.width << ' ' << r.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
    if (!os) throw IoError("pnm: write failed");
}

inline Raster load_raster(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    try {
        return decode(is);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

inline void save_raster(const std::filesystem::path& path, const Raster& r) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    encode(os, r);
}

inline Tensor to_image(const Raster& r) {
    Tensor t({std::size_t(r.channels), std::size_t(r.height), std::size_t(r.width)});
    for (int y = 0; y < r.height; ++y)
        for (int x = 0; x < r.width; ++x)
            for (int c = 0; c < r.channels; ++c)
                t.at(c, y, x) = r.pixels[(std::size_t(y) * r.width + x) * r.channels + c] / 255.0f;
    return t;
}

inline Raster from_image(const Tensor& image) {
    if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
        throw ShapeError("pnm: image must be [C x H x W] with C in {1,3}");
    Raster r{int(image.dim(0)), int(image.dim(1)), int(image.dim(2)), {}};
    r.pixels.resize(image.size());
    for (int y = 0; y < r.height; ++y)
        for (int x = 0; x < r.width; ++x)
            for (int c = 0; c < r.channels; ++c) {
                const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
                r.pixels[(std::size_t(y) * r.width + x) * r.channels + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
    return r;
}

// Pixels >= 128 are foreground.
inline Mask to_mask(const Raster& r) {
    if (r.channels != 1) throw ValidationError("pnm: masks must be single-channel PGM");
    std::vector<std::uint8_t> bits(r.pixels.size());
    std::transform(r.pixels.begin(), r.pixels.end(), bits.begin(),
                   [](unsigned char v) { return std::uint8_t(v >= 128 ? 1 : 0); });
    return Mask(r.height, r.width, std::move(bits));
}

inline Raster from_mask(const Mask& m) {
    Raster r{1, m.height(), m.width(), {}};
    r.pixels.resize(m.area());
    std::transform(m.bits().begin(), m.bits().end(), r.pixels.begin(),
                   [](std::uint8_t b) { return static_cast<unsigned char>(b ? 255 : 0); });
    return r;
}

inline Tensor load_image(const std::filesystem::path& p) { return to_image(load_raster(p)); }
inline Mask load_mask(const std::filesystem::path& p) { return to_mask(load_raster(p)); }
inline void save_image(const std::filesystem::path& p, const Tensor& t) { save_raster(p, from_image(t)); }
inline void save_mask(const std::filesystem::path& p, const Mask& m) { save_raster(p, from_mask(m)); }

inline std::string mask_to_bytes(const Mask& m) {
    std::ostringstream os(std::ios::binary);
    encode(os, from_mask(m));
    return os.str();
}

inline std::string image_to_bytes(const Tensor& t) {
    std::ostringstream os(std::ios::binary);
    encode(os, from_image(t));
    return os.str();
}

}  // namespace prefseg::pnm
