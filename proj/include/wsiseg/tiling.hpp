#pragma once

// Tile grid planning and conversions between model space, tile space and the
// slide working frame.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "geometry.hpp"
#include "mask.hpp"
#include "tissue.hpp"
#include "vocabulary.hpp"

namespace wsiseg {

struct GroundTruthInstance {
    std::string gt_id;
    InstanceClass cls = InstanceClass::glomerulus;
    PlacedMask mask;
    std::optional<std::string> parent_id;
};

// Tile origins along one axis: step = tile - overlap, final origin clamped so the
// last tile ends at the slide edge. Slides shorter than a tile get one origin at 0.
inline std::vector<std::int32_t> axis_origins(std::int32_t side, std::int32_t tile, std::int32_t overlap) {
    std::vector<std::int32_t> out;
    if (side <= tile) return {0};
    const std::int32_t step = tile - overlap;
    for (std::int64_t o = 0; o + tile <= side; o += step) out.push_back(static_cast<std::int32_t>(o));
    if (out.back() + tile < side) out.push_back(side - tile);
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

inline std::string tile_id_for(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "t%05zu", index);
    return buf;
}

// Full grid over the slide, row-major, before tissue gating. Tile ids index this grid.
inline std::vector<TileSpec> plan_grid(const SlideGeometry& geom, const PipelineConfig& cfg) {
    geom.validate();
    cfg.validate();
    const auto xs = axis_origins(geom.width, cfg.tile_size, cfg.tile_overlap);
    const auto ys = axis_origins(geom.height, cfg.tile_size, cfg.tile_overlap);
    std::vector<TileSpec> tiles;
    tiles.reserve(xs.size() * ys.size());
    for (std::int32_t y : ys) {
        for (std::int32_t x : xs) {
            TileSpec t;
            t.tile_id = tile_id_for(tiles.size());
            t.slide_id = geom.slide_id;
            t.x = x;
            t.y = y;
            t.width = std::min(cfg.tile_size, geom.width);
            t.height = std::min(cfg.tile_size, geom.height);
            t.model_scale = cfg.model_scale();
            tiles.push_back(std::move(t));
        }
    }
    return tiles;
}

// Grid tiles whose tissue fraction reaches cfg.min_tile_tissue_fraction; without a
// tissue mask every grid tile is kept.
inline std::vector<TileSpec> plan_tiles(const SlideGeometry& geom, const TissueMask* tissue, const PipelineConfig& cfg) {
    auto grid = plan_grid(geom, cfg);
    if (!tissue) return grid;
    const TissueCoverage cov(tissue->mask);
    std::vector<TileSpec> kept;
    for (auto& t : grid)
        if (tile_tissue_fraction(t, cov, geom) >= cfg.min_tile_tissue_fraction) kept.push_back(std::move(t));
    return kept;
}

// Intersects each gt with the tile window; pieces are re-expressed in the tile frame.
inline std::vector<GroundTruthInstance> split_annotations(const std::vector<GroundTruthInstance>& gts, const TileSpec& tile) {
    std::vector<GroundTruthInstance> out;
    const PixelBox window = tile.box();
    for (const auto& gt : gts) {
        auto piece = clip_to_box(gt.mask, window);
        if (!piece) continue;
        GroundTruthInstance g;
        g.parent_id = gt.parent_id.value_or(gt.gt_id);
        g.gt_id = *g.parent_id + "@" + tile.tile_id;
        g.cls = gt.cls;
        g.mask = translate(*piece, -tile.x, -tile.y, tile.tile_frame());
        out.push_back(std::move(g));
    }
    return out;
}

namespace detail {

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
    // b > 0
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

// Tile-space rows/cols covered by model index m under nearest-neighbour upsampling
// from `model` to `full` pixels: [ceil(m*full/model), ceil((m+1)*full/model)).
inline std::int64_t up_start(std::int64_t m, std::int64_t full, std::int64_t model) {
    return ceil_div(m * full, model);
}

// Smallest model index whose sampled tile pixel ceil(m*full/model) is >= a.
inline std::int64_t down_first(std::int64_t a, std::int64_t full, std::int64_t model) {
    if (a <= 0) return 0;
    return ((a - 1) * model) / full + 1;
}

}  // namespace detail

struct TransformWarning {
    std::string tile_id;
    std::string message;
};

// Nearest-neighbour upsample from the model frame to tile pixels, then translate
// into the slide frame. Content falling outside the slide is clipped and reported.
inline std::optional<PlacedMask> tile_to_slide(const PlacedMask& model_mask, const TileSpec& tile, const SlideGeometry& geom,
                                               std::vector<TransformWarning>* warnings = nullptr) {
    const ColumnSpans cs(model_mask);
    const std::int64_t mw = tile.model_width(), mh = tile.model_height();
    const std::int64_t tw = tile.width, th = tile.height;
    const PixelBox ext = cs.extent();
    const PixelBox up{static_cast<std::int32_t>(detail::up_start(ext.x, tw, mw)) + tile.x,
                      static_cast<std::int32_t>(detail::up_start(ext.y, th, mh)) + tile.y,
                      static_cast<std::int32_t>(detail::up_start(ext.right(), tw, mw) - detail::up_start(ext.x, tw, mw)),
                      static_cast<std::int32_t>(detail::up_start(ext.bottom(), th, mh) - detail::up_start(ext.y, th, mh))};
    if (up.empty()) return std::nullopt;
    std::vector<Span> col;
    auto spans_at = [&](std::int32_t sx) -> const std::vector<Span>& {
        col.clear();
        const std::int64_t tx = sx - tile.x;
        const std::int64_t mx = (tx * mw) / tw;
        for (const Span& s : cs.column(static_cast<std::int32_t>(mx)))
            col.push_back(Span{static_cast<std::int32_t>(detail::up_start(s.y0, th, mh)) + tile.y,
                               static_cast<std::int32_t>(detail::up_start(s.y1, th, mh)) + tile.y});
        return col;
    };
    const PixelBox inside = intersect(up, geom.box());
    const std::int64_t full_area = cs.area() == 0 ? 0 : [&] {
        std::int64_t a = 0;
        for (std::int32_t sx = up.x; sx < up.right(); ++sx)
            for (const Span& s : spans_at(sx)) a += s.length();
        return a;
    }();
    if (inside.empty()) {
        if (warnings && full_area > 0) warnings->push_back({tile.tile_id, "mask lies entirely outside the slide"});
        return std::nullopt;
    }
    PlacedMask out = build_placed(inside, geom.frame(), spans_at);
    const std::int64_t kept = area(out);
    if (warnings && kept != full_area)
        warnings->push_back({tile.tile_id, "mask clipped to slide extent (" + std::to_string(full_area - kept) + " px dropped)"});
    if (kept == 0) return std::nullopt;
    return out;
}

// Inverse of tile_to_slide for masks aligned to the model-scale grid: each model
// pixel samples the first tile pixel of its block.
inline std::optional<PlacedMask> slide_to_tile(const PlacedMask& slide_mask, const TileSpec& tile) {
    auto clipped = clip_to_box(slide_mask, tile.box());
    if (!clipped) return std::nullopt;
    const ColumnSpans cs(*clipped);
    const std::int64_t mw = tile.model_width(), mh = tile.model_height();
    const std::int64_t tw = tile.width, th = tile.height;
    const PixelBox ext = cs.extent();
    const std::int64_t lx = ext.x - tile.x, ly = ext.y - tile.y;
    const std::int64_t mx0 = detail::down_first(lx, tw, mw);
    const std::int64_t mx1 = detail::down_first(lx + ext.w, tw, mw);
    const std::int64_t my0 = detail::down_first(ly, th, mh);
    const std::int64_t my1 = detail::down_first(ly + ext.h, th, mh);
    if (mx1 <= mx0 || my1 <= my0) return std::nullopt;
    const PixelBox box{static_cast<std::int32_t>(mx0), static_cast<std::int32_t>(my0), static_cast<std::int32_t>(mx1 - mx0),
                       static_cast<std::int32_t>(my1 - my0)};
    std::vector<Span> col;
    PlacedMask out = build_placed(box, tile.model_frame(), [&](std::int32_t mx) -> const std::vector<Span>& {
        col.clear();
        const auto sx = static_cast<std::int32_t>(detail::up_start(mx, tw, mw) + tile.x);
        for (const Span& s : cs.column(sx)) {
            const std::int64_t a = detail::down_first(s.y0 - tile.y, th, mh);
            const std::int64_t b = detail::down_first(s.y1 - tile.y, th, mh);
            if (b > a) col.push_back(Span{static_cast<std::int32_t>(a), static_cast<std::int32_t>(b)});
        }
        return col;
    });
    auto tight = clip_to_box(out, out.extent());
    return tight;
}

}  // namespace wsiseg
