#pragma once

// QuPath-style GeoJSON: polygon tracing of masks, even-odd rasterization of
// polygons at pixel centres, annotation loading and instance export.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "errors.hpp"
#include "mask.hpp"
#include "merge.hpp"
#include "tiling.hpp"
#include "vocabulary.hpp"

namespace wsiseg {

struct Point {
    std::int64_t x = 0;
    std::int64_t y = 0;
    friend bool operator==(const Point&, const Point&) = default;
};

using Ring = std::vector<Point>;     // closed: front() == back()
using Polygon = std::vector<Ring>;   // outer ring first, then holes

// Twice the signed shoelace area; positive for outer rings (y grows downwards,
// foreground on the right of travel).
inline std::int64_t ring_area2(const Ring& r) {
    std::int64_t s = 0;
    for (std::size_t i = 0; i + 1 < r.size(); ++i) s += r[i].x * r[i + 1].y - r[i + 1].x * r[i].y;
    return s;
}

// Even-odd test for a point given in doubled coordinates (so pixel centres are integers).
inline bool ring_contains2(const Ring& r, std::int64_t px2, std::int64_t py2) {
    bool in = false;
    for (std::size_t i = 0; i + 1 < r.size(); ++i) {
        const std::int64_t ay = 2 * r[i].y, by = 2 * r[i + 1].y;
        if ((ay > py2) == (by > py2)) continue;
        const std::int64_t ax = 2 * r[i].x, bx = 2 * r[i + 1].x;
        // x of crossing compared with px2, kept in integers
        const std::int64_t lhs = (px2 - ax) * (by - ay);
        const std::int64_t rhs = (bx - ax) * (py2 - ay);
        if ((by > ay) ? lhs < rhs : lhs > rhs) in = !in;
    }
    return in;
}

namespace detail {

constexpr std::array<int, 4> kDx = {1, 0, -1, 0};  // E S W N
constexpr std::array<int, 4> kDy = {0, 1, 0, -1};

}  // namespace detail

// Traces the 4-connected foreground of a mask into polygons along pixel cracks.
// At saddle corners the walk turns right, so diagonal neighbours stay separate.
inline std::vector<Polygon> mask_to_polygons(const PlacedMask& pm) {
    const ColumnSpans cs(pm);
    if (cs.empty()) return {};
    const PixelBox cb = cs.content_box();
    const std::int64_t W = cb.w, H = cb.h;
    Bitmap bm(static_cast<std::uint32_t>(W), static_cast<std::uint32_t>(H));
    for (std::int32_t x = cb.x; x < cb.right(); ++x)
        for (const Span& s : cs.column(x))
            for (std::int32_t y = s.y0; y < s.y1; ++y) bm.set(static_cast<std::uint32_t>(x - cb.x), static_cast<std::uint32_t>(y - cb.y));
    auto fg = [&](std::int64_t x, std::int64_t y) {
        return x >= 0 && y >= 0 && x < W && y < H && bm.at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y));
    };

    // out-edge direction bits per lattice corner
    const std::int64_t CW = W + 1;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(CW * (H + 1)), 0);
    auto corner = [&](std::int64_t x, std::int64_t y) { return static_cast<std::size_t>(y * CW + x); };
    for (std::int64_t y = 0; y <= H; ++y) {
        for (std::int64_t x = 0; x <= W; ++x) {
            if (x < W) {
                const bool below = fg(x, y), above = fg(x, y - 1);
                if (below && !above) out[corner(x, y)] |= 1u << 0;
                if (above && !below) out[corner(x + 1, y)] |= 1u << 2;
            }
            if (y < H) {
                const bool right = fg(x, y), left = fg(x - 1, y);
                if (left && !right) out[corner(x, y)] |= 1u << 1;
                if (right && !left) out[corner(x, y + 1)] |= 1u << 3;
            }
        }
    }
    std::vector<std::uint8_t> used(out.size(), 0);

    std::vector<Ring> outers, holes;
    for (std::int64_t sy = 0; sy <= H; ++sy) {
        for (std::int64_t sx = 0; sx <= W; ++sx) {
            const std::size_t sc = corner(sx, sy);
            for (int sd = 0; sd < 4; ++sd) {
                if (!(out[sc] >> sd & 1u) || (used[sc] >> sd & 1u)) continue;
                Ring ring;
                std::int64_t x = sx, y = sy;
                int d = sd, prev = -1;
                for (;;) {
                    const std::size_t c = corner(x, y);
                    used[c] |= static_cast<std::uint8_t>(1u << d);
                    if (d != prev) ring.push_back(Point{x + cb.x, y + cb.y});
                    prev = d;
                    x += detail::kDx[d];
                    y += detail::kDy[d];
                    const std::uint8_t o = out[corner(x, y)];
                    int nd = -1;
                    for (int turn : {1, 0, 3}) {
                        const int cand = (d + turn) % 4;
                        if (o >> cand & 1u) {
                            nd = cand;
                            break;
                        }
                    }
                    if (nd < 0) throw GeometryError("polygon tracing failed: open boundary");
                    if (x == sx && y == sy && nd == sd) break;
                    d = nd;
                }
                // the start vertex is redundant if the walk arrives straight into it
                if (ring.size() > 1 && prev == sd) ring.erase(ring.begin());
                ring.push_back(ring.front());
                (ring_area2(ring) > 0 ? outers : holes).push_back(std::move(ring));
            }
        }
    }

    std::vector<Polygon> polys;
    std::vector<std::int64_t> areas;
    for (auto& r : outers) {
        areas.push_back(ring_area2(r));
        polys.push_back(Polygon{std::move(r)});
    }
    for (auto& h : holes) {
        // background pixel on the left of the hole's first edge
        const Point a = h[0], b = h[1];
        const int d = b.x > a.x ? 0 : b.y > a.y ? 1 : b.x < a.x ? 2 : 3;
        std::int64_t px = a.x, py = a.y;
        switch (d) {
            case 0: py = a.y - 1; break;
            case 1: break;
            case 2: px = a.x - 1; break;
            case 3: px = a.x - 1; py = a.y - 1; break;
        }
        std::size_t best = polys.size();
        for (std::size_t i = 0; i < polys.size(); ++i) {
            if (!ring_contains2(polys[i][0], 2 * px + 1, 2 * py + 1)) continue;
            if (best == polys.size() || areas[i] < areas[best]) best = i;
        }
        if (best == polys.size()) throw GeometryError("polygon tracing failed: orphan hole");
        polys[best].push_back(std::move(h));
    }
    return polys;
}

// Polygon vertices as read from files may be fractional.
struct PointF {
    double x = 0.0;
    double y = 0.0;
};
using RingF = std::vector<PointF>;
using PolygonF = std::vector<RingF>;

// Even-odd fill at pixel centres within each polygon; polygons are OR-ed.
// Pixels outside `clip` are dropped. Returns nullopt when nothing is covered.
// Scans columns so the result comes out as column spans without a dense raster.
inline std::optional<PlacedMask> rasterize_polygons(const std::vector<PolygonF>& polys, const std::string& frame,
                                                    const std::optional<PixelBox>& clip = std::nullopt) {
    double minx = INFINITY, miny = INFINITY, maxx = -INFINITY, maxy = -INFINITY;
    for (const auto& poly : polys)
        for (const auto& ring : poly)
            for (const auto& p : ring) {
                if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw GeometryError("non-finite polygon coordinate");
                minx = std::min(minx, p.x);
                miny = std::min(miny, p.y);
                maxx = std::max(maxx, p.x);
                maxy = std::max(maxy, p.y);
            }
    if (!(minx <= maxx)) return std::nullopt;
    if (maxx - minx > 1e9 || maxy - miny > 1e9 || std::abs(minx) > 1e9 || std::abs(miny) > 1e9)
        throw CapacityError("polygon extent too large to rasterize");
    PixelBox box{static_cast<std::int32_t>(std::floor(minx)), static_cast<std::int32_t>(std::floor(miny)), 0, 0};
    box.w = static_cast<std::int32_t>(std::ceil(maxx)) - box.x;
    box.h = static_cast<std::int32_t>(std::ceil(maxy)) - box.y;
    if (clip) box = intersect(box, *clip);
    if (box.empty()) return std::nullopt;

    auto first_centre = [](double v) { return static_cast<std::int64_t>(std::ceil(v - 0.5)); };
    std::vector<std::vector<Span>> cols(static_cast<std::size_t>(box.w));
    std::vector<std::vector<double>> ys(static_cast<std::size_t>(box.w));
    for (const auto& poly : polys) {
        for (auto& v : ys) v.clear();
        for (const auto& ring : poly) {
            for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
                const PointF a = ring[i], b = ring[i + 1];
                if (a.x == b.x) continue;
                // columns whose centre lies in [min x, max x)
                const std::int64_t lo = std::max<std::int64_t>(first_centre(std::min(a.x, b.x)), box.x);
                const std::int64_t hi = std::min<std::int64_t>(first_centre(std::max(a.x, b.x)), box.right());
                for (std::int64_t x = lo; x < hi; ++x) {
                    const double xc = static_cast<double>(x) + 0.5;
                    ys[static_cast<std::size_t>(x - box.x)].push_back(a.y + (xc - a.x) * (b.y - a.y) / (b.x - a.x));
                }
            }
        }
        for (std::size_t c = 0; c < ys.size(); ++c) {
            auto& v = ys[c];
            std::sort(v.begin(), v.end());
            for (std::size_t k = 0; k + 1 < v.size(); k += 2) {
                const std::int64_t y0 = std::max<std::int64_t>(first_centre(v[k]), box.y);
                const std::int64_t y1 = std::min<std::int64_t>(first_centre(v[k + 1]), box.bottom());
                if (y1 > y0) cols[c].push_back(Span{static_cast<std::int32_t>(y0), static_cast<std::int32_t>(y1)});
            }
        }
    }

    RleBuilder rb(static_cast<std::uint32_t>(box.w), static_cast<std::uint32_t>(box.h));
    bool any = false;
    for (std::size_t c = 0; c < cols.size(); ++c) {
        auto& v = cols[c];
        std::sort(v.begin(), v.end(), [](const Span& a, const Span& b) { return a.y0 < b.y0; });
        const std::uint64_t base = static_cast<std::uint64_t>(c) * static_cast<std::uint64_t>(box.h);
        std::size_t i = 0;
        while (i < v.size()) {
            std::int32_t y0 = v[i].y0, y1 = v[i].y1;
            for (++i; i < v.size() && v[i].y0 <= y1; ++i) y1 = std::max(y1, v[i].y1);
            rb.add(base + static_cast<std::uint64_t>(y0 - box.y), base + static_cast<std::uint64_t>(y1 - box.y));
            any = true;
        }
    }
    if (!any) return std::nullopt;
    return crop_to_content(PlacedMask{rb.finish(), box.x, box.y, frame});
}

// ---------------------------------------------------------------------------
// Annotation files

struct LoadedInstance {
    std::string id;
    InstanceClass cls = InstanceClass::glomerulus;
    PlacedMask mask;
    std::optional<double> confidence;
};

struct TissueRegion {
    std::string id;
    AnnotationKind kind = AnnotationKind::cortex;
    PlacedMask mask;
};

struct AnnotationSet {
    std::vector<LoadedInstance> instances;
    std::vector<PlacedMask> ignore;
    std::vector<TissueRegion> tissue;
    nlohmann::json provenance;  // null unless the file carried one
};

namespace detail {

inline std::string feature_where(std::size_t i) { return "feature " + std::to_string(i); }

inline RingF parse_ring(const nlohmann::json& j, std::size_t fi) {
    if (!j.is_array()) throw GeometryError(feature_where(fi) + ": ring is not an array");
    RingF r;
    for (const auto& p : j) {
        if (!p.is_array() || p.size() < 2 || !p[0].is_number() || !p[1].is_number())
            throw GeometryError(feature_where(fi) + ": bad coordinate");
        r.push_back(PointF{p[0].get<double>(), p[1].get<double>()});
    }
    if (r.size() < 4) throw GeometryError(feature_where(fi) + ": ring has fewer than 4 positions");
    if (r.front().x != r.back().x || r.front().y != r.back().y) throw GeometryError(feature_where(fi) + ": unclosed ring");
    return r;
}

inline PolygonF parse_polygon(const nlohmann::json& j, std::size_t fi) {
    if (!j.is_array() || j.empty()) throw GeometryError(feature_where(fi) + ": polygon without rings");
    PolygonF p;
    for (const auto& r : j) p.push_back(parse_ring(r, fi));
    return p;
}

inline std::vector<PolygonF> parse_geometry(const nlohmann::json& g, std::size_t fi) {
    if (!g.is_object() || !g.contains("type") || !g.contains("coordinates"))
        throw GeometryError(feature_where(fi) + ": missing geometry");
    const std::string type = g["type"].is_string() ? g["type"].get<std::string>() : "";
    if (type == "Polygon") return {parse_polygon(g["coordinates"], fi)};
    if (type == "MultiPolygon") {
        std::vector<PolygonF> out;
        if (!g["coordinates"].is_array()) throw GeometryError(feature_where(fi) + ": bad MultiPolygon");
        for (const auto& p : g["coordinates"]) out.push_back(parse_polygon(p, fi));
        return out;
    }
    throw GeometryError(feature_where(fi) + ": unsupported geometry type '" + type + "'");
}

inline std::optional<std::string> classification_name(const nlohmann::json& props) {
    if (!props.is_object() || !props.contains("classification")) return std::nullopt;
    const auto& c = props["classification"];
    if (c.is_string()) return c.get<std::string>();
    if (c.is_object() && c.contains("name") && c["name"].is_string()) return c["name"].get<std::string>();
    return std::nullopt;
}

}  // namespace detail

// Parses a FeatureCollection in working-resolution coordinates. Masks are placed in
// the slide frame "slide:<slide_id>" and clipped to `clip` when given.
inline AnnotationSet parse_annotations(const nlohmann::json& doc, const std::string& slide_id,
                                       const std::optional<PixelBox>& clip = std::nullopt) {
    if (!doc.is_object() || doc.value("type", "") != "FeatureCollection")
        throw FormatError("annotation file is not a GeoJSON FeatureCollection");
    AnnotationSet out;
    if (doc.contains("provenance")) out.provenance = doc["provenance"];
    if (!doc.contains("features")) return out;
    if (!doc["features"].is_array()) throw FormatError("'features' must be an array");
    const std::string frame = "slide:" + slide_id;
    const auto& feats = doc["features"];
    for (std::size_t i = 0; i < feats.size(); ++i) {
        const auto& f = feats[i];
        if (!f.is_object()) throw FormatError(detail::feature_where(i) + ": not an object");
        const nlohmann::json props = f.contains("properties") && f["properties"].is_object() ? f["properties"] : nlohmann::json::object();
        const auto name = detail::classification_name(props);
        if (!name) throw VocabularyError(detail::feature_where(i) + ": missing classification name");
        const auto label = try_parse_annotation_label(*name);
        if (!label) throw VocabularyError(detail::feature_where(i) + ": unknown class '" + *name + "'");
        const auto polys = detail::parse_geometry(f.contains("geometry") ? f["geometry"] : nlohmann::json(), i);
        auto mask = rasterize_polygons(polys, frame, clip);
        if (!mask) throw GeometryError(detail::feature_where(i) + ": polygon covers no pixel centre");

        std::string id;
        if (f.contains("id") && f["id"].is_string()) id = f["id"].get<std::string>();
        else if (props.contains("candidate_id") && props["candidate_id"].is_string()) id = props["candidate_id"].get<std::string>();
        else if (props.contains("name") && props["name"].is_string()) id = props["name"].get<std::string>();
        else {
            char buf[24];
            std::snprintf(buf, sizeof buf, "f%05zu", i);
            id = buf;
        }

        switch (label->kind) {
            case AnnotationKind::instance: {
                LoadedInstance li{id, label->instance_class, std::move(*mask), std::nullopt};
                if (props.contains("confidence")) {
                    if (!props["confidence"].is_number()) throw FormatError(detail::feature_where(i) + ": confidence must be a number");
                    li.confidence = props["confidence"].get<double>();
                }
                out.instances.push_back(std::move(li));
                break;
            }
            case AnnotationKind::ignore: out.ignore.push_back(std::move(*mask)); break;
            default: out.tissue.push_back(TissueRegion{id, label->kind, std::move(*mask)}); break;
        }
    }
    return out;
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("'" + path + "': " + e.what());
    }
}

inline AnnotationSet load_annotations(const std::string& path, const std::string& slide_id,
                                      const std::optional<PixelBox>& clip = std::nullopt) {
    return parse_annotations(read_json_file(path), slide_id, clip);
}

inline std::vector<GroundTruthInstance> ground_truths(const AnnotationSet& a) {
    std::vector<GroundTruthInstance> gts;
    gts.reserve(a.instances.size());
    for (const auto& li : a.instances) gts.push_back(GroundTruthInstance{li.id, li.cls, li.mask, std::nullopt});
    return gts;
}

// ---------------------------------------------------------------------------
// Export

inline std::array<int, 3> class_color(InstanceClass c) {
    switch (c) {
        case InstanceClass::glomerulus: return {0, 170, 0};
        case InstanceClass::arteriole: return {230, 160, 0};
        case InstanceClass::artery: return {200, 0, 0};
    }
    return {0, 0, 0};
}

inline std::array<int, 3> kind_color(AnnotationKind k) {
    switch (k) {
        case AnnotationKind::cortex: return {220, 120, 160};
        case AnnotationKind::medulla: return {120, 120, 220};
        case AnnotationKind::capsule_other: return {200, 200, 60};
        case AnnotationKind::ignore: return {128, 128, 128};
        case AnnotationKind::instance: break;
    }
    return {0, 0, 0};
}

inline nlohmann::json geometry_json(const std::vector<Polygon>& polys) {
    auto ring_json = [](const Ring& r) {
        nlohmann::json a = nlohmann::json::array();
        for (const Point& p : r) a.push_back({p.x, p.y});
        return a;
    };
    auto poly_json = [&](const Polygon& p) {
        nlohmann::json a = nlohmann::json::array();
        for (const Ring& r : p) a.push_back(ring_json(r));
        return a;
    };
    if (polys.size() == 1) return {{"type", "Polygon"}, {"coordinates", poly_json(polys[0])}};
    nlohmann::json coords = nlohmann::json::array();
    for (const auto& p : polys) coords.push_back(poly_json(p));
    return {{"type", "MultiPolygon"}, {"coordinates", coords}};
}

inline nlohmann::json feature_json(const std::string& id, const std::string& object_type, const std::string& class_name,
                                   std::array<int, 3> color, const PlacedMask& mask) {
    return {{"type", "Feature"},
            {"id", id},
            {"geometry", geometry_json(mask_to_polygons(mask))},
            {"properties", {{"objectType", object_type}, {"classification", {{"name", class_name}, {"color", color}}}}}};
}

inline nlohmann::json feature_collection(nlohmann::json features, const nlohmann::json& provenance) {
    nlohmann::json doc = {{"type", "FeatureCollection"}, {"format_version", kFormatVersion}, {"features", std::move(features)}};
    if (!provenance.is_null()) doc["provenance"] = provenance;
    return doc;
}

// One detection Feature per active candidate, in candidate_id order.
inline nlohmann::json export_geojson(const SlideInstanceSet& s, const nlohmann::json& provenance = nullptr) {
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& c : s.candidates) {
        if (!c.active()) continue;
        auto f = feature_json(c.candidate_id, "detection", std::string(class_name(c.cls)), class_color(c.cls), c.mask);
        f["properties"]["confidence"] = c.confidence;
        f["properties"]["candidate_id"] = c.candidate_id;
        feats.push_back(std::move(f));
    }
    return feature_collection(std::move(feats), provenance);
}

// Ground truth and annotated regions as QuPath annotations.
inline nlohmann::json export_annotations(const std::vector<GroundTruthInstance>& gts, const std::vector<PlacedMask>& ignore,
                                         const std::vector<TissueRegion>& tissue, const nlohmann::json& provenance = nullptr) {
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& g : gts) feats.push_back(feature_json(g.gt_id, "annotation", std::string(class_name(g.cls)), class_color(g.cls), g.mask));
    for (std::size_t i = 0; i < ignore.size(); ++i) {
        char buf[24];
        std::snprintf(buf, sizeof buf, "ignore%05zu", i);
        feats.push_back(feature_json(buf, "annotation", "Ignore", kind_color(AnnotationKind::ignore), ignore[i]));
    }
    for (const auto& t : tissue)
        feats.push_back(feature_json(t.id, "annotation", std::string(annotation_kind_name(t.kind)), kind_color(t.kind), t.mask));
    return feature_collection(std::move(feats), provenance);
}

}  // namespace wsiseg
