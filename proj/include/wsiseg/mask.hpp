#pragma once

// Run-length-encoded binary masks.
//
// Runs are stored in column-major scan order (x outer, y inner) and alternate
// background/foreground, starting with a background run that may be zero. This
// is the COCO RLE convention, so external model outputs convert losslessly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"

namespace wsiseg {

// Dense row-major boolean grid.
struct Bitmap {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint8_t> bits;

    Bitmap() = default;
    Bitmap(std::uint32_t w, std::uint32_t h, bool fill = false)
        : width(w), height(h), bits(static_cast<std::size_t>(w) * h, fill ? 1 : 0) {}

    bool at(std::uint32_t x, std::uint32_t y) const {
        return bits[static_cast<std::size_t>(y) * width + x] != 0;
    }
    void set(std::uint32_t x, std::uint32_t y, bool v = true) {
        bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
    }
    std::int64_t count() const {
        return std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; });
    }

    friend bool operator==(const Bitmap&, const Bitmap&) = default;
};

struct RleMask {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint64_t> counts;

    std::uint64_t pixel_count() const { return static_cast<std::uint64_t>(width) * height; }

    friend bool operator==(const RleMask&, const RleMask&) = default;
};

// Axis-aligned pixel rectangle, half-open on the right/bottom.
struct PixelBox {
    std::int32_t x = 0;
    std::int32_t y = 0;
    std::int32_t w = 0;
    std::int32_t h = 0;

    std::int32_t right() const { return x + w; }
    std::int32_t bottom() const { return y + h; }
    bool empty() const { return w <= 0 || h <= 0; }
    std::int64_t area() const { return empty() ? 0 : static_cast<std::int64_t>(w) * h; }
    bool contains(const PixelBox& o) const {
        return o.x >= x && o.y >= y && o.right() <= right() && o.bottom() <= bottom();
    }
    bool contains_pixel(std::int32_t px, std::int32_t py) const {
        return px >= x && py >= y && px < right() && py < bottom();
    }

    friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

inline PixelBox intersect(const PixelBox& a, const PixelBox& b) {
    const std::int32_t x0 = std::max(a.x, b.x), y0 = std::max(a.y, b.y);
    const std::int32_t x1 = std::min(a.right(), b.right()), y1 = std::min(a.bottom(), b.bottom());
    if (x1 <= x0 || y1 <= y0) return PixelBox{x0, y0, 0, 0};
    return PixelBox{x0, y0, x1 - x0, y1 - y0};
}

// An RLE mask whose local (0,0) sits at `x`,`y` of a named coordinate frame.
struct PlacedMask {
    RleMask mask;
    std::int32_t x = 0;
    std::int32_t y = 0;
    std::string frame;

    PixelBox extent() const {
        return PixelBox{x, y, static_cast<std::int32_t>(mask.width), static_cast<std::int32_t>(mask.height)};
    }

    friend bool operator==(const PlacedMask&, const PlacedMask&) = default;
};

// ---------------------------------------------------------------------------
// Encoding

// Canonicalizes raw run counts: zero-length interior runs are folded into their
// neighbours and a trailing zero run is dropped.
inline RleMask rle_from_counts(std::uint32_t width, std::uint32_t height, std::span<const std::uint64_t> raw) {
    if (width == 0 || height == 0) throw DimensionError("mask dimensions must be > 0");
    const std::uint64_t total = static_cast<std::uint64_t>(width) * height;
    std::uint64_t sum = 0;
    RleMask m{width, height, {}};
    m.counts.reserve(raw.size());
    // Parity of the next run to append (0 = background).
    bool fg = false;
    for (std::uint64_t c : raw) {
        sum += c;
        if (c == 0) {
            fg = !fg;
            continue;
        }
        if (m.counts.empty()) {
            if (fg) m.counts.push_back(0);
            m.counts.push_back(c);
        } else if (((m.counts.size() - 1) % 2 == 1) == fg) {
            m.counts.back() += c;
        } else {
            m.counts.push_back(c);
        }
        fg = !fg;
    }
    if (sum != total)
        throw FormatError("RLE counts sum to " + std::to_string(sum) + ", expected " + std::to_string(total));
    if (m.counts.empty()) m.counts.push_back(total);
    return m;
}

inline RleMask empty_mask(std::uint32_t width, std::uint32_t height) {
    const std::uint64_t c = static_cast<std::uint64_t>(width) * height;
    return rle_from_counts(width, height, std::span<const std::uint64_t>(&c, 1));
}

inline RleMask full_mask(std::uint32_t width, std::uint32_t height) {
    const std::uint64_t c[2] = {0, static_cast<std::uint64_t>(width) * height};
    return rle_from_counts(width, height, c);
}

inline bool is_canonical(const RleMask& m) {
    if (m.width == 0 || m.height == 0 || m.counts.empty()) return false;
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i < m.counts.size(); ++i) {
        if (m.counts[i] == 0 && !(i == 0 && m.counts.size() > 1)) return false;
        sum += m.counts[i];
    }
    return sum == m.pixel_count();
}

// Accumulates foreground runs given in increasing linear (column-major) order.
class RleBuilder {
public:
    RleBuilder(std::uint32_t width, std::uint32_t height) : width_(width), height_(height) {
        if (width == 0 || height == 0) throw DimensionError("mask dimensions must be > 0");
    }

    void add(std::uint64_t begin, std::uint64_t end) {
        if (end <= begin) return;
        if (!counts_.empty() && begin == cursor_) {
            counts_.back() += end - begin;
        } else {
            counts_.push_back(begin - cursor_);
            counts_.push_back(end - begin);
        }
        cursor_ = end;
    }

    RleMask finish() {
        const std::uint64_t total = static_cast<std::uint64_t>(width_) * height_;
        if (cursor_ < total) counts_.push_back(total - cursor_);
        if (counts_.empty()) counts_.push_back(total);
        RleMask m{width_, height_, std::move(counts_)};
        counts_.clear();
        cursor_ = 0;
        return m;
    }

private:
    std::uint32_t width_;
    std::uint32_t height_;
    std::uint64_t cursor_ = 0;
    std::vector<std::uint64_t> counts_;
};

inline RleMask rle_encode(const Bitmap& bm) {
    if (bm.width == 0 || bm.height == 0) throw DimensionError("cannot encode an empty grid");
    RleBuilder b(bm.width, bm.height);
    for (std::uint32_t x = 0; x < bm.width; ++x) {
        const std::uint64_t base = static_cast<std::uint64_t>(x) * bm.height;
        std::uint32_t y = 0;
        while (y < bm.height) {
            if (!bm.at(x, y)) {
                ++y;
                continue;
            }
            std::uint32_t e = y;
            while (e < bm.height && bm.at(x, e)) ++e;
            b.add(base + y, base + e);
            y = e;
        }
    }
    return b.finish();
}

inline Bitmap rle_decode(const RleMask& m) {
    Bitmap bm(m.width, m.height);
    std::uint64_t pos = 0;
    for (std::size_t i = 0; i < m.counts.size(); ++i) {
        if (i % 2 == 1) {
            for (std::uint64_t p = pos; p < pos + m.counts[i]; ++p)
                bm.set(static_cast<std::uint32_t>(p / m.height), static_cast<std::uint32_t>(p % m.height));
        }
        pos += m.counts[i];
    }
    return bm;
}

inline std::int64_t area(const RleMask& m) {
    std::uint64_t a = 0;
    for (std::size_t i = 1; i < m.counts.size(); i += 2) a += m.counts[i];
    return static_cast<std::int64_t>(a);
}

inline std::int64_t area(const PlacedMask& m) { return area(m.mask); }

// ---------------------------------------------------------------------------
// Column spans: the working representation for geometric queries.

struct Span {
    std::int32_t y0 = 0;  // inclusive
    std::int32_t y1 = 0;  // exclusive
    std::int32_t length() const { return y1 - y0; }
    friend bool operator==(const Span&, const Span&) = default;
};

// Foreground of a placed mask as sorted y-intervals per column, in absolute frame coordinates.
class ColumnSpans {
public:
    ColumnSpans() = default;

    explicit ColumnSpans(const PlacedMask& pm) : x0_(pm.x), extent_(pm.extent()) {
        const RleMask& m = pm.mask;
        offsets_.assign(static_cast<std::size_t>(m.width) + 1, 0);
        std::uint64_t pos = 0;
        std::vector<std::pair<std::uint32_t, Span>> tmp;
        for (std::size_t i = 0; i < m.counts.size(); ++i) {
            const std::uint64_t len = m.counts[i];
            if (i % 2 == 1) {
                std::uint64_t p = pos;
                const std::uint64_t end = pos + len;
                while (p < end) {
                    const auto col = static_cast<std::uint32_t>(p / m.height);
                    const std::uint64_t col_end = static_cast<std::uint64_t>(col + 1) * m.height;
                    const std::uint64_t e = std::min(end, col_end);
                    const auto ly0 = static_cast<std::int32_t>(p - static_cast<std::uint64_t>(col) * m.height);
                    const auto ly1 = static_cast<std::int32_t>(e - static_cast<std::uint64_t>(col) * m.height);
                    tmp.push_back({col, Span{pm.y + ly0, pm.y + ly1}});
                    area_ += ly1 - ly0;
                    p = e;
                }
            }
            pos += len;
        }
        spans_.reserve(tmp.size());
        for (auto& [col, s] : tmp) {
            ++offsets_[col + 1];
            spans_.push_back(s);
        }
        for (std::size_t c = 1; c < offsets_.size(); ++c) offsets_[c] += offsets_[c - 1];
    }

    std::int32_t x0() const { return x0_; }
    std::int32_t width() const { return static_cast<std::int32_t>(offsets_.empty() ? 0 : offsets_.size() - 1); }
    const PixelBox& extent() const { return extent_; }
    std::int64_t area() const { return area_; }
    bool empty() const { return area_ == 0; }

    // Spans of absolute column x; empty outside the extent.
    std::span<const Span> column(std::int32_t x) const {
        const std::int32_t i = x - x0_;
        if (i < 0 || i >= width()) return {};
        return std::span<const Span>(spans_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]);
    }

    // Tight bounding box of the foreground (empty box when no foreground).
    PixelBox content_box() const {
        std::int32_t xa = 0, xb = -1, ya = 0, yb = -1;
        bool any = false;
        for (std::int32_t i = 0; i < width(); ++i) {
            auto col = column(x0_ + i);
            if (col.empty()) continue;
            if (!any) {
                xa = x0_ + i;
                ya = col.front().y0;
                yb = col.back().y1;
                any = true;
            }
            xb = x0_ + i;
            ya = std::min(ya, col.front().y0);
            yb = std::max(yb, col.back().y1);
        }
        if (!any) return PixelBox{extent_.x, extent_.y, 0, 0};
        return PixelBox{xa, ya, xb - xa + 1, yb - ya};
    }

private:
    std::int32_t x0_ = 0;
    PixelBox extent_{};
    std::vector<std::uint32_t> offsets_;
    std::vector<Span> spans_;
    std::int64_t area_ = 0;
};

inline std::int64_t overlap_length(std::span<const Span> a, std::span<const Span> b) {
    std::int64_t n = 0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        const std::int32_t lo = std::max(a[i].y0, b[j].y0);
        const std::int32_t hi = std::min(a[i].y1, b[j].y1);
        if (hi > lo) n += hi - lo;
        if (a[i].y1 < b[j].y1) ++i;
        else ++j;
    }
    return n;
}

inline void intersect_spans(std::span<const Span> a, std::span<const Span> b, std::vector<Span>& out) {
    out.clear();
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        const std::int32_t lo = std::max(a[i].y0, b[j].y0);
        const std::int32_t hi = std::min(a[i].y1, b[j].y1);
        if (hi > lo) out.push_back(Span{lo, hi});
        if (a[i].y1 < b[j].y1) ++i;
        else ++j;
    }
}

inline std::int64_t overlap_length(std::span<const Span> a, std::int32_t lo, std::int32_t hi) {
    const Span s{lo, hi};
    return hi > lo ? overlap_length(a, std::span<const Span>(&s, 1)) : 0;
}

inline std::int64_t intersection_area(const ColumnSpans& a, const ColumnSpans& b) {
    const PixelBox ov = intersect(a.extent(), b.extent());
    if (ov.empty()) return 0;
    std::int64_t n = 0;
    for (std::int32_t x = ov.x; x < ov.right(); ++x) n += overlap_length(a.column(x), b.column(x));
    return n;
}

// Empty-vs-empty is 0 so that matching code never pairs empty masks.
inline double iou(const ColumnSpans& a, const ColumnSpans& b) {
    const std::int64_t inter = intersection_area(a, b);
    const std::int64_t uni = a.area() + b.area() - inter;
    if (uni == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline void check_same_frame(const PlacedMask& a, const PlacedMask& b) {
    if (a.frame != b.frame)
        throw FrameError("masks are in different frames ('" + a.frame + "' vs '" + b.frame + "')");
}

inline double iou(const PlacedMask& a, const PlacedMask& b) {
    check_same_frame(a, b);
    return iou(ColumnSpans(a), ColumnSpans(b));
}

// ---------------------------------------------------------------------------
// Construction from spans

// Builds a placed mask over `box` from per-column spans (absolute coordinates);
// `spans_at(x)` must return sorted, disjoint spans, clipped here to the box.
template <typename SpansAt>
PlacedMask build_placed(const PixelBox& box, std::string frame, SpansAt&& spans_at) {
    if (box.empty()) throw DimensionError("cannot build a mask over an empty box");
    const auto w = static_cast<std::uint32_t>(box.w);
    const auto h = static_cast<std::uint32_t>(box.h);
    RleBuilder b(w, h);
    for (std::int32_t x = box.x; x < box.right(); ++x) {
        const std::uint64_t base = static_cast<std::uint64_t>(x - box.x) * h;
        for (const Span& s : spans_at(x)) {
            const std::int32_t lo = std::max(s.y0, box.y);
            const std::int32_t hi = std::min(s.y1, box.bottom());
            if (hi > lo) b.add(base + static_cast<std::uint64_t>(lo - box.y), base + static_cast<std::uint64_t>(hi - box.y));
        }
    }
    return PlacedMask{b.finish(), box.x, box.y, std::move(frame)};
}

// Foreground restricted to `window`, re-extented to its tight content box.
// Returns nullopt when nothing remains.
inline std::optional<PlacedMask> clip_to_box(const PlacedMask& m, const PixelBox& window) {
    const ColumnSpans cs(m);
    const PixelBox ov = intersect(cs.extent(), window);
    if (ov.empty()) return std::nullopt;
    std::int32_t xa = ov.right(), xb = ov.x - 1, ya = ov.bottom(), yb = ov.y;
    for (std::int32_t x = ov.x; x < ov.right(); ++x) {
        for (const Span& s : cs.column(x)) {
            const std::int32_t lo = std::max(s.y0, ov.y), hi = std::min(s.y1, ov.bottom());
            if (hi <= lo) continue;
            xa = std::min(xa, x);
            xb = std::max(xb, x);
            ya = std::min(ya, lo);
            yb = std::max(yb, hi);
        }
    }
    if (xb < xa) return std::nullopt;
    const PixelBox tight{xa, ya, xb - xa + 1, yb - ya};
    return build_placed(tight, m.frame, [&](std::int32_t x) { return cs.column(x); });
}

// Shrinks the extent to the content bounding box; empty masks are returned unchanged.
inline PlacedMask crop_to_content(const PlacedMask& m) {
    auto r = clip_to_box(m, m.extent());
    return r ? std::move(*r) : m;
}

inline PlacedMask translate(const PlacedMask& m, std::int32_t dx, std::int32_t dy, std::string frame) {
    return PlacedMask{m.mask, m.x + dx, m.y + dy, std::move(frame)};
}

// Area of the union of many masks (all in one frame).
inline std::int64_t union_area(std::span<const ColumnSpans* const> masks) {
    struct Item {
        std::int32_t x;
        Span s;
    };
    std::vector<Item> items;
    for (const ColumnSpans* m : masks) {
        for (std::int32_t x = m->x0(); x < m->x0() + m->width(); ++x)
            for (const Span& s : m->column(x)) items.push_back({x, s});
    }
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
        return a.x != b.x ? a.x < b.x : a.s.y0 < b.s.y0;
    });
    std::int64_t total = 0;
    std::size_t i = 0;
    while (i < items.size()) {
        const std::int32_t x = items[i].x;
        std::int32_t lo = items[i].s.y0, hi = items[i].s.y1;
        ++i;
        while (i < items.size() && items[i].x == x) {
            if (items[i].s.y0 > hi) {
                total += hi - lo;
                lo = items[i].s.y0;
                hi = items[i].s.y1;
            } else {
                hi = std::max(hi, items[i].s.y1);
            }
            ++i;
        }
        total += hi - lo;
    }
    return total;
}

// Union of many masks as a single placed mask over their combined extent.
inline std::optional<PlacedMask> union_mask(std::span<const ColumnSpans* const> masks, const std::string& frame) {
    PixelBox box{};
    bool any = false;
    for (const ColumnSpans* m : masks) {
        if (m->empty()) continue;
        const PixelBox e = m->content_box();
        if (!any) {
            box = e;
            any = true;
            continue;
        }
        const std::int32_t x0 = std::min(box.x, e.x), y0 = std::min(box.y, e.y);
        const std::int32_t x1 = std::max(box.right(), e.right()), y1 = std::max(box.bottom(), e.bottom());
        box = PixelBox{x0, y0, x1 - x0, y1 - y0};
    }
    if (!any) return std::nullopt;
    std::vector<Span> col;
    return build_placed(box, frame, [&](std::int32_t x) -> const std::vector<Span>& {
        col.clear();
        for (const ColumnSpans* m : masks)
            for (const Span& s : m->column(x)) col.push_back(s);
        std::sort(col.begin(), col.end(), [](const Span& a, const Span& b) { return a.y0 < b.y0; });
        std::size_t k = 0;
        for (std::size_t i = 0; i < col.size(); ++i) {
            if (k > 0 && col[i].y0 <= col[k - 1].y1) col[k - 1].y1 = std::max(col[k - 1].y1, col[i].y1);
            else col[k++] = col[i];
        }
        col.resize(k);
        return col;
    });
}

// ---------------------------------------------------------------------------
// Edge-filter measurements

struct EdgeContact {
    std::int64_t boundary_pixels = 0;  // foreground pixels with a 4-neighbour outside the mask
    std::int64_t ring_pixels = 0;      // boundary pixels on the tile's outermost pixel ring
};

inline void require_inside(const ColumnSpans& cs, const PixelBox& tile) {
    if (tile.empty()) throw DimensionError("tile box must be non-empty");
    if (cs.empty()) throw UndefinedMeasureError("edge measure of an empty mask is undefined");
    if (!tile.contains(cs.content_box())) throw GeometryError("mask extends beyond the tile frame");
}

inline EdgeContact measure_edge_contact(const ColumnSpans& cs, const PixelBox& tile) {
    require_inside(cs, tile);
    EdgeContact r;
    std::vector<Span> shrunk, lr, inner;
    const PixelBox cb = cs.content_box();
    for (std::int32_t x = cb.x; x < cb.right(); ++x) {
        auto col = cs.column(x);
        if (col.empty()) continue;
        std::int64_t n = 0;
        shrunk.clear();
        for (const Span& s : col) {
            n += s.length();
            if (s.length() > 2) shrunk.push_back(Span{s.y0 + 1, s.y1 - 1});
        }
        intersect_spans(cs.column(x - 1), cs.column(x + 1), lr);
        std::int64_t interior = 0;
        if (!shrunk.empty() && !lr.empty()) {
            intersect_spans(shrunk, lr, inner);
            for (const Span& s : inner) interior += s.length();
        }
        r.boundary_pixels += n - interior;

        if (x == tile.x || x == tile.right() - 1) {
            r.ring_pixels += n;
        } else {
            r.ring_pixels += overlap_length(col, tile.y, tile.y + 1);
            if (tile.h > 1) r.ring_pixels += overlap_length(col, tile.bottom() - 1, tile.bottom());
        }
    }
    return r;
}

// Fraction of the mask's boundary pixels lying on the tile's outermost pixel ring.
inline double edge_contact_fraction(const PlacedMask& m, const PixelBox& tile) {
    const EdgeContact e = measure_edge_contact(ColumnSpans(m), tile);
    return static_cast<double>(e.ring_pixels) / static_cast<double>(e.boundary_pixels);
}

// The mask's own extent is the tile frame, placed at the tile origin.
inline double edge_contact_fraction(const RleMask& m, const PixelBox& tile) {
    return edge_contact_fraction(PlacedMask{m, tile.x, tile.y, {}}, tile);
}

// Band width per side, rounded half-up to whole pixels.
inline std::int32_t band_width(std::int32_t side, double band_fraction) {
    return static_cast<std::int32_t>(std::floor(band_fraction * side + 0.5));
}

inline double border_band_area_fraction(const ColumnSpans& cs, const PixelBox& tile, double band_fraction) {
    if (!(band_fraction > 0.0 && band_fraction < 0.5))
        throw ConfigError("band_fraction must be in (0, 0.5)");
    require_inside(cs, tile);
    const std::int32_t bx = band_width(tile.w, band_fraction);
    const std::int32_t by = band_width(tile.h, band_fraction);
    const PixelBox inner{tile.x + bx, tile.y + by, tile.w - 2 * bx, tile.h - 2 * by};
    std::int64_t inside = 0;
    if (!inner.empty())
        for (std::int32_t x = inner.x; x < inner.right(); ++x)
            inside += overlap_length(cs.column(x), inner.y, inner.bottom());
    return static_cast<double>(cs.area() - inside) / static_cast<double>(cs.area());
}

// Fraction of the mask area inside the border band of the tile.
inline double border_band_area_fraction(const PlacedMask& m, const PixelBox& tile, double band_fraction = 0.10) {
    return border_band_area_fraction(ColumnSpans(m), tile, band_fraction);
}

inline double border_band_area_fraction(const RleMask& m, const PixelBox& tile, double band_fraction = 0.10) {
    return border_band_area_fraction(PlacedMask{m, tile.x, tile.y, {}}, tile, band_fraction);
}

// ---------------------------------------------------------------------------
// JSON: {"size": [height, width], "counts": [...]}

inline void to_json(nlohmann::json& j, const RleMask& m) {
    j = nlohmann::json{{"size", {m.height, m.width}}, {"counts", m.counts}};
}

inline void from_json(const nlohmann::json& j, RleMask& m) {
    if (!j.is_object() || !j.contains("size") || !j.contains("counts"))
        throw FormatError("RLE mask must be an object with 'size' and 'counts'");
    const auto& size = j.at("size");
    if (!size.is_array() || size.size() != 2) throw FormatError("RLE 'size' must be [height, width]");
    std::vector<std::uint64_t> counts;
    try {
        counts = j.at("counts").get<std::vector<std::uint64_t>>();
        m = rle_from_counts(size[1].get<std::uint32_t>(), size[0].get<std::uint32_t>(), counts);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad RLE mask: ") + e.what());
    }
}

}  // namespace wsiseg
