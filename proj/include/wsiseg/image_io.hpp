#pragma once

// 8-bit raster files: binary PGM (P5) and PNG (grayscale or paletted; palette
// indices are read as values). PNG support requires linking libpng.

#include <array>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "errors.hpp"
#include "tissue.hpp"

namespace wsiseg {

inline Image8 read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::string magic;
    in >> magic;
    if (magic != "P5") throw FormatError("'" + path + "' is not a binary PGM (P5)");
    auto next_int = [&]() {
        int v = -1;
        for (;;) {
            in >> std::ws;
            if (in.peek() == '#') {
                std::string skip;
                std::getline(in, skip);
                continue;
            }
            in >> v;
            return v;
        }
    };
    const int w = next_int(), h = next_int(), maxval = next_int();
    if (!in || w <= 0 || h <= 0) throw FormatError("'" + path + "' has a bad PGM header");
    if (maxval <= 0 || maxval > 255) throw FormatError("'" + path + "' must be an 8-bit PGM");
    in.get();
    Image8 img(static_cast<std::uint32_t>(w), static_cast<std::uint32_t>(h));
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!in) throw FormatError("'" + path + "' is truncated");
    return img;
}

inline void write_pgm(const std::string& path, const Image8& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace detail

// Reads an 8-bit grayscale or paletted PNG. Palette images return raw indices.
inline Image8 read_png(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open '" + path + "'");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, detail::png_warning_fn);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_read_struct(p, i, nullptr); }
    } guard{&png, &info};
    // Everything with a destructor lives above the setjmp point.
    Image8 img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) throw FormatError("'" + path + "' is not a readable PNG");
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info), h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info), depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_PALETTE)
        throw FormatError("'" + path + "' must be a grayscale or paletted PNG");
    if (depth == 16) png_set_strip_16(png);
    if (depth < 8) png_set_packing(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    img = Image8(w, h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * w;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    return img;
}

// Writes an 8-bit PNG; with a palette, pixel values are palette indices.
inline void write_png(const std::string& path, const Image8& img, const std::vector<std::array<std::uint8_t, 3>>* palette = nullptr) {
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot write '" + path + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, detail::png_warning_fn);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_write_struct(p, i); }
    } guard{&png, &info};
    std::vector<png_color> pal;
    if (setjmp(png_jmpbuf(png))) throw IoError("failed writing PNG '" + path + "'");
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width, img.height, 8, palette ? PNG_COLOR_TYPE_PALETTE : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    if (palette) {
        for (const auto& c : *palette) pal.push_back(png_color{c[0], c[1], c[2]});
        png_set_PLTE(png, info, pal.data(), static_cast<int>(pal.size()));
    }
    png_write_info(png, info);
    for (std::uint32_t y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(img.pixels.data() + static_cast<std::size_t>(y) * img.width));
    png_write_end(png, nullptr);
}

inline bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline Image8 read_image(const std::string& path) {
    if (has_suffix(path, ".pgm")) return read_pgm(path);
    if (has_suffix(path, ".png")) return read_png(path);
    throw FormatError("unsupported image format for '" + path + "' (expected .png or .pgm)");
}

inline void write_image(const std::string& path, const Image8& img) {
    if (has_suffix(path, ".pgm")) return write_pgm(path, img);
    if (has_suffix(path, ".png")) return write_png(path, img);
    throw FormatError("unsupported image format for '" + path + "' (expected .png or .pgm)");
}

// Label thumbnail palette: background, Capsule/Other, Cortex, Medulla.
inline const std::vector<std::array<std::uint8_t, 3>>& tissue_palette() {
    static const std::vector<std::array<std::uint8_t, 3>> p = {{0, 0, 0}, {200, 200, 60}, {220, 120, 160}, {120, 120, 220}};
    return p;
}

inline TissueThumbnail read_tissue_thumbnail(const std::string& path, std::string slide_id) {
    TissueThumbnail t{std::move(slide_id), read_image(path)};
    validate_labels(t);
    return t;
}

inline void write_tissue_thumbnail(const std::string& path, const TissueThumbnail& t) {
    if (has_suffix(path, ".png")) return write_png(path, t.labels, &tissue_palette());
    write_image(path, t.labels);
}

// 255 = tissue, 0 = background.
inline Image8 tissue_mask_image(const TissueMask& m) {
    Image8 img(m.mask.width, m.mask.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = m.mask.bits[i] ? 255 : 0;
    return img;
}

inline TissueMask tissue_mask_from_image(const Image8& img, std::string slide_id) {
    TissueMask m{std::move(slide_id), Bitmap(img.width, img.height), TissueSource::external_model};
    for (std::size_t i = 0; i < img.pixels.size(); ++i) m.mask.bits[i] = img.pixels[i] >= 128 ? 1 : 0;
    return m;
}

}  // namespace wsiseg
