#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mvpt/error.hpp"
#include "mvpt/rng.hpp"

namespace mvpt {

/// Single-channel image, row-major, intensities in [0, 1].
struct Image {
    std::size_t height = 0, width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, float fill = 0.f) : height(h), width(w), pixels(h * w, fill) {}

    float& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
    float at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
    bool operator==(const Image&) const = default;
};

// ---------------------------------------------------------------------------
// binary PGM (P5), 8-bit

inline std::uint8_t quantize(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
}

inline void write_pgm(const std::filesystem::path& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    std::vector<char> bytes(img.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<char>(quantize(img.pixels[i]));
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing " + path.string());
}

inline Image read_pgm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DecodeError(path.string() + ": cannot open");
    auto fail = [&](const std::string& why) { return DecodeError(path.string() + ": " + why); };
    // header tokens, skipping '#' comments
    auto token = [&]() {
        std::string t;
        char ch;
        while (f.get(ch)) {
            if (ch == '#') {
                std::string rest;
                std::getline(f, rest);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(ch))) {
                if (!t.empty()) break;
                continue;
            }
            t.push_back(ch);
        }
        return t;
    };
    if (token() != "P5") throw fail("not a binary PGM (P5)");
    long w = 0, h = 0, maxv = 0;
    try {
        w = std::stol(token());
        h = std::stol(token());
        maxv = std::stol(token());
    } catch (const std::exception&) {
        throw fail("malformed header");
    }
    if (w <= 0 || h <= 0 || maxv <= 0 || maxv > 255) throw fail("unsupported dimensions or max value");
    Image img(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
    std::vector<unsigned char> bytes(img.pixels.size());
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(f.gcount()) != bytes.size()) throw fail("truncated pixel data");
    for (std::size_t i = 0; i < bytes.size(); ++i)
        img.pixels[i] = std::min(1.f, static_cast<float>(bytes[i]) / static_cast<float>(maxv));
    return img;
}

/// Bilinear sample with zero outside the image.
inline float sample_bilinear(const Image& img, double y, double x) {
    const double fy = std::floor(y), fx = std::floor(x);
    const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
    const double ty = y - fy, tx = x - fx;
    auto px = [&](long r, long c) -> double {
        if (r < 0 || c < 0 || r >= static_cast<long>(img.height) || c >= static_cast<long>(img.width)) return 0.0;
        return img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
    };
    const double v = (1 - ty) * ((1 - tx) * px(y0, x0) + tx * px(y0, x0 + 1)) +
                     ty * ((1 - tx) * px(y0 + 1, x0) + tx * px(y0 + 1, x0 + 1));
    return static_cast<float>(v);
}

/// Bilinear resize (pixel-centre aligned, edge clamped).
inline Image resize_bilinear(const Image& img, std::size_t h, std::size_t w) {
    if (img.height == h && img.width == w) return img;
    Image out(h, w);
    const double sy = static_cast<double>(img.height) / static_cast<double>(h);
    const double sx = static_cast<double>(img.width) / static_cast<double>(w);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            const double y = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
            const double x = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
            out.at(r, c) = sample_bilinear(img, y, x);
        }
    return out;
}

/// Reads a PGM scaled to [0,1] and resized to side x side when needed.
inline Image load_image(const std::filesystem::path& path, std::size_t height, std::size_t width) {
    return resize_bilinear(read_pgm(path), height, width);
}

inline Image flip_horizontal(const Image& img) {
    Image out(img.height, img.width);
    for (std::size_t r = 0; r < img.height; ++r)
        for (std::size_t c = 0; c < img.width; ++c) out.at(r, c) = img.at(r, img.width - 1 - c);
    return out;
}

inline Image flip_vertical(const Image& img) {
    Image out(img.height, img.width);
    for (std::size_t r = 0; r < img.height; ++r)
        for (std::size_t c = 0; c < img.width; ++c) out.at(r, c) = img.at(img.height - 1 - r, c);
    return out;
}

/// Mirrors the image iff its right half carries more intensity than its left half.
/// The middle column of odd-width images belongs to neither half.
inline Image orient_normalize(const Image& img) {
    double left = 0, right = 0;
    const std::size_t half = img.width / 2;
    for (std::size_t r = 0; r < img.height; ++r)
        for (std::size_t c = 0; c < half; ++c) {
            left += img.at(r, c);
            right += img.at(r, img.width - 1 - c);
        }
    return right > left ? flip_horizontal(img) : img;
}

struct AffineParams {
    bool vflip = false;
    double rotation_deg = 0.0;
    double shift_y = 0.0, shift_x = 0.0;  // fractions of height / width
    double scale = 1.0;

    bool is_identity() const { return !vflip && rotation_deg == 0.0 && shift_y == 0.0 && shift_x == 0.0 && scale == 1.0; }
};

/// Vertical flip with probability 0.5; rotation in [-10, 10] degrees, translation up to 5%
/// per axis, scale in [0.95, 1.05].
inline AffineParams sample_augmentation(Rng& rng) {
    AffineParams p;
    p.vflip = rng.bernoulli(0.5);
    p.rotation_deg = rng.uniform(-10.0, 10.0);
    p.shift_y = rng.uniform(-0.05, 0.05);
    p.shift_x = rng.uniform(-0.05, 0.05);
    p.scale = rng.uniform(0.95, 1.05);
    return p;
}

/// Applies the flip, then the affine map about the image centre with bilinear resampling and zero fill.
inline Image apply_augmentation(const Image& img, const AffineParams& p) {
    if (p.is_identity()) return img;
    Image src = p.vflip ? flip_vertical(img) : img;
    if (p.rotation_deg == 0.0 && p.shift_y == 0.0 && p.shift_x == 0.0 && p.scale == 1.0) return src;
    Image out(img.height, img.width);
    const double cy = (static_cast<double>(img.height) - 1) / 2, cx = (static_cast<double>(img.width) - 1) / 2;
    const double th = p.rotation_deg * std::numbers::pi / 180.0;
    const double ct = std::cos(th), st = std::sin(th);
    const double ty = p.shift_y * static_cast<double>(img.height), tx = p.shift_x * static_cast<double>(img.width);
    for (std::size_t r = 0; r < img.height; ++r)
        for (std::size_t c = 0; c < img.width; ++c) {
            // inverse map: output -> source
            const double oy = static_cast<double>(r) - cy - ty, ox = static_cast<double>(c) - cx - tx;
            const double sy = (ct * oy - st * ox) / p.scale + cy;
            const double sx = (st * oy + ct * ox) / p.scale + cx;
            out.at(r, c) = sample_bilinear(src, sy, sx);
        }
    return out;
}

inline Image augment(const Image& img, std::uint64_t seed) {
    Rng rng(seed);
    return apply_augmentation(img, sample_augmentation(rng));
}

}  // namespace mvpt
