#pragma once

// Tissue gating: binary tissue masks from 4-class label thumbnails, or from an
// Otsu threshold of a grayscale thumbnail as the fallback.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "mask.hpp"

namespace wsiseg {

// 8-bit single-channel raster, row-major.
struct Image8 {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint8_t> pixels;

    Image8() = default;
    Image8(std::uint32_t w, std::uint32_t h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t at(std::uint32_t x, std::uint32_t y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t& at(std::uint32_t x, std::uint32_t y) { return pixels[static_cast<std::size_t>(y) * width + x]; }

    friend bool operator==(const Image8&, const Image8&) = default;
};

enum class TissueLabel : std::uint8_t { background = 0, capsule_other = 1, cortex = 2, medulla = 3 };

struct TissueThumbnail {
    std::string slide_id;
    Image8 labels;
};

enum class TissueSource { external_model, otsu };

struct TissueMask {
    std::string slide_id;
    Bitmap mask;
    TissueSource source = TissueSource::external_model;
};

inline void validate_labels(const TissueThumbnail& t) {
    if (t.labels.width == 0 || t.labels.height == 0) throw DimensionError("tissue thumbnail is empty");
    for (std::size_t i = 0; i < t.labels.pixels.size(); ++i) {
        const std::uint8_t v = t.labels.pixels[i];
        if (v > 3)
            throw FormatError("tissue label " + std::to_string(v) + " out of vocabulary at pixel (" +
                              std::to_string(i % t.labels.width) + "," + std::to_string(i / t.labels.width) + ")");
    }
}

// Tissue iff the label is any of the three tissue classes.
inline TissueMask aggregate_tissue(const TissueThumbnail& t) {
    validate_labels(t);
    TissueMask out{t.slide_id, Bitmap(t.labels.width, t.labels.height), TissueSource::external_model};
    for (std::size_t i = 0; i < t.labels.pixels.size(); ++i) out.mask.bits[i] = t.labels.pixels[i] != 0 ? 1 : 0;
    return out;
}

// ---------------------------------------------------------------------------
// Otsu

using Histogram256 = std::array<std::uint64_t, 256>;

inline Histogram256 histogram(const Image8& img) {
    Histogram256 h{};
    for (std::uint8_t v : img.pixels) ++h[v];
    return h;
}

// Threshold t splits pixels into {v <= t} and {v > t}; maximizes the between-class
// variance, ties broken toward the lowest t. Exact integer arithmetic.
inline std::uint8_t otsu_threshold(const Histogram256& h) {
    using u128 = unsigned __int128;
    std::uint64_t n = 0, s = 0;
    int distinct = 0;
    for (int v = 0; v < 256; ++v) {
        n += h[v];
        s += h[v] * static_cast<std::uint64_t>(v);
        if (h[v]) ++distinct;
    }
    if (distinct < 2) throw FormatError("degenerate histogram: fewer than two distinct gray values");
    // Keeps |n*s0 - n0*s| below 2^64 so its square fits in 128 bits.
    if (n >= (std::uint64_t{1} << 27)) throw CapacityError("thumbnail too large for Otsu (>= 2^27 pixels)");

    // between-class variance ~ (n*s0 - n0*s)^2 / (n0 * n1)
    bool have = false;
    u128 best_num = 0, best_den = 1;
    int best_t = 0;
    std::uint64_t n0 = 0, s0 = 0;
    for (int t = 0; t < 255; ++t) {
        n0 += h[t];
        s0 += h[t] * static_cast<std::uint64_t>(t);
        const std::uint64_t n1 = n - n0;
        if (n0 == 0 || n1 == 0) continue;
        const __int128 a = static_cast<__int128>(n) * s0 - static_cast<__int128>(n0) * s;
        const u128 mag = static_cast<u128>(a < 0 ? -a : a);
        const u128 den = static_cast<u128>(n0) * n1;
        if (!have) {
            best_num = mag;
            best_den = den;
            best_t = t;
            have = true;
            continue;
        }
        // mag^2 * best_den vs best_num^2 * den, with 256-bit products.
        auto mul = [](u128 a, u128 b, u128& hi, u128& lo) {
            const u128 mask = (static_cast<u128>(1) << 64) - 1;
            const u128 a0 = a & mask, a1 = a >> 64, b0 = b & mask, b1 = b >> 64;
            const u128 p00 = a0 * b0, p01 = a0 * b1, p10 = a1 * b0, p11 = a1 * b1;
            const u128 mid = (p00 >> 64) + (p01 & mask) + (p10 & mask);
            lo = (p00 & mask) | (mid << 64);
            hi = p11 + (p01 >> 64) + (p10 >> 64) + (mid >> 64);
        };
        const u128 lhs_sq = mag * mag, rhs_sq = best_num * best_num;
        u128 lh, ll, rh, rl;
        mul(lhs_sq, best_den, lh, ll);
        mul(rhs_sq, den, rh, rl);
        if (lh > rh || (lh == rh && ll > rl)) {
            best_num = mag;
            best_den = den;
            best_t = t;
        }
    }
    return static_cast<std::uint8_t>(best_t);
}

enum class Polarity { tissue_dark, tissue_light };

inline TissueMask otsu_tissue(const std::string& slide_id, const Image8& gray, Polarity polarity) {
    if (gray.width == 0 || gray.height == 0) throw DimensionError("grayscale thumbnail is empty");
    const std::uint8_t t = otsu_threshold(histogram(gray));
    TissueMask out{slide_id, Bitmap(gray.width, gray.height), TissueSource::otsu};
    for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
        const bool low = gray.pixels[i] <= t;
        out.mask.bits[i] = (polarity == Polarity::tissue_dark ? low : !low) ? 1 : 0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tile footprint coverage

// Summed-area table over a tissue mask, for area-weighted footprint queries.
class TissueCoverage {
public:
    explicit TissueCoverage(const Bitmap& mask) : w_(mask.width), h_(mask.height) {
        sat_.assign(static_cast<std::size_t>(w_ + 1) * (h_ + 1), 0);
        for (std::uint32_t y = 0; y < h_; ++y) {
            std::uint32_t row = 0;
            for (std::uint32_t x = 0; x < w_; ++x) {
                row += mask.at(x, y) ? 1 : 0;
                at(x + 1, y + 1) = at(x + 1, y) + row;
            }
        }
    }

    std::uint32_t width() const { return w_; }
    std::uint32_t height() const { return h_; }

    // Tissue pixel count in the integer rectangle [x0,x1) x [y0,y1).
    std::uint64_t count(std::uint32_t x0, std::uint32_t y0, std::uint32_t x1, std::uint32_t y1) const {
        if (x1 <= x0 || y1 <= y0) return 0;
        return get(x1, y1) + get(x0, y0) - get(x0, y1) - get(x1, y0);
    }

    // Area-weighted tissue fraction of the real rectangle [fx0,fx1) x [fy0,fy1) in thumbnail pixels.
    double fraction(double fx0, double fy0, double fx1, double fy1) const {
        const double total = (fx1 - fx0) * (fy1 - fy0);
        if (!(total > 0.0)) return 0.0;
        const auto xs = pieces(fx0, fx1, w_);
        const auto ys = pieces(fy0, fy1, h_);
        double acc = 0.0;
        for (const Piece& px : xs)
            for (const Piece& py : ys)
                acc += px.weight * py.weight * static_cast<double>(count(px.lo, py.lo, px.hi, py.hi));
        return std::clamp(acc / total, 0.0, 1.0);
    }

private:
    struct Piece {
        std::uint32_t lo, hi;
        double weight;
    };

    // Splits [a,b) into a partial first pixel, whole interior pixels, and a partial last pixel.
    static std::vector<Piece> pieces(double a, double b, std::uint32_t n) {
        std::vector<Piece> out;
        a = std::clamp(a, 0.0, static_cast<double>(n));
        b = std::clamp(b, 0.0, static_cast<double>(n));
        if (b <= a) return out;
        const auto ia = static_cast<std::uint32_t>(std::floor(a));
        const auto ib = static_cast<std::uint32_t>(std::ceil(b));
        if (ib - ia == 1) {
            out.push_back({ia, ia + 1, b - a});
            return out;
        }
        const double first = (ia + 1) - a;
        const double last = b - (ib - 1);
        out.push_back({ia, ia + 1, first});
        if (ib - 1 > ia + 1) out.push_back({ia + 1, ib - 1, 1.0});
        out.push_back({ib - 1, ib, last});
        return out;
    }

    std::uint64_t get(std::uint32_t x, std::uint32_t y) const { return sat_[static_cast<std::size_t>(y) * (w_ + 1) + x]; }
    std::uint32_t& at(std::uint32_t x, std::uint32_t y) { return sat_[static_cast<std::size_t>(y) * (w_ + 1) + x]; }

    std::uint32_t w_, h_;
    std::vector<std::uint32_t> sat_;
};

// Tissue fraction of the tile footprint projected onto the thumbnail.
// The thumbnail is registered to the slide by per-axis scaling (thumbnail side / slide side).
inline double tile_tissue_fraction(const TileSpec& tile, const TissueCoverage& cov, const SlideGeometry& geom) {
    const double sx = static_cast<double>(cov.width()) / geom.width;
    const double sy = static_cast<double>(cov.height()) / geom.height;
    return cov.fraction(tile.x * sx, tile.y * sy, (tile.x + tile.width) * sx, (tile.y + tile.height) * sy);
}

inline double tile_tissue_fraction(const TileSpec& tile, const TissueMask& tm, const SlideGeometry& geom) {
    return tile_tissue_fraction(tile, TissueCoverage(tm.mask), geom);
}

}  // namespace wsiseg
