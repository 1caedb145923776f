#pragma once

// Synthetic slides and tile predictions with known truth.
//
// Ground-truth shapes are sampled at block centres of the model-scale grid, so
// with zero noise a slide->model->slide round trip reproduces them exactly.
// Per-tile randomness is drawn from seeds derived from (seed, tile_id, gt_id),
// which makes the output independent of tile order and worker count.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "dct.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "mask.hpp"
#include "merge.hpp"
#include "parallel.hpp"
#include "tiling.hpp"
#include "tissue.hpp"
#include "vocabulary.hpp"

namespace wsiseg {

// ---------------------------------------------------------------------------
// Seeding and sampling

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// seed' = splitmix64(splitmix64(seed ^ fnv1a(a)) ^ fnv1a(b))
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view a, std::string_view b = {}) {
    return splitmix64(splitmix64(seed ^ fnv1a(a)) ^ fnv1a(b));
}

// Portable draws on top of mt19937_64 (std distributions differ across libraries).
class SynthRng {
public:
    explicit SynthRng(std::uint64_t seed) : g_(seed) {}

    double uniform() { return unit_uniform(g_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal() {
        const double u1 = 1.0 - uniform(), u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
    bool bernoulli(double p) { return uniform() < p; }
    int binomial(int n, double p) {
        int k = 0;
        for (int i = 0; i < n; ++i) k += bernoulli(p) ? 1 : 0;
        return k;
    }

private:
    std::mt19937_64 g_;
};

// ---------------------------------------------------------------------------
// Parameters

struct SizeRange {
    double semi_min = 10.0;  // outer semi-axis, working px
    double semi_max = 20.0;
    double aspect_min = 0.8;  // minor / major
    double inner_min = 0.0;   // inner / outer radius ratio; 0 for solid ellipses
    double inner_max = 0.0;
    friend bool operator==(const SizeRange&, const SizeRange&) = default;
};

struct ClassNoise {
    double jitter_sigma = 0.0;  // boundary displacement RMS, working px
    double dropout = 0.0;       // per emission
    double spurious_rate = 0.0; // per slot, kSpuriousSlots slots per tile
    friend bool operator==(const ClassNoise&, const ClassNoise&) = default;
};

inline constexpr int kSpuriousSlots = 10;
inline constexpr int kPlacementAttempts = 10000;

struct SynthParams {
    std::uint64_t seed = 1;
    std::string slide_id = "synth";
    std::int32_t width = 12224;
    std::int32_t height = 8160;
    std::array<int, kNumClasses> counts{8, 12, 4};
    std::array<SizeRange, kNumClasses> sizes{SizeRange{50, 90, 0.75, 0.0, 0.0}, SizeRange{14, 26, 0.8, 0.55, 0.7},
                                             SizeRange{45, 80, 0.8, 0.45, 0.6}};
    std::array<ClassNoise, kNumClasses> noise{};
    // confidence = clamp(a * iou_with_truth + b + shift + N(0, sigma))
    double conf_a = 0.7;
    double conf_b = 0.25;
    double conf_sigma = 0.0;
    double shift_sigma = 0.0;  // per (slide, class) confidence shift
    // keep every gt inside a single tile and out of overlap strips
    bool avoid_seams = false;
    std::int32_t thumbnail_max_side = 512;

    void validate() const {
        if (width <= 0 || height <= 0) throw ConfigError("synth: slide extent must be positive");
        if (width % 2 || height % 2) throw ConfigError("synth: slide extent must be even");
        if (thumbnail_max_side <= 0) throw ConfigError("synth: thumbnail_max_side must be positive");
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            const auto& s = sizes[c];
            const auto& n = noise[c];
            if (counts[c] < 0) throw ConfigError("synth: negative instance count");
            if (!(s.semi_min > 0 && s.semi_max >= s.semi_min && s.aspect_min > 0 && s.aspect_min <= 1))
                throw ConfigError("synth: bad size range");
            if (!(s.inner_min >= 0 && s.inner_max >= s.inner_min && s.inner_max < 1)) throw ConfigError("synth: bad inner ratio");
            for (double r : {n.dropout, n.spurious_rate})
                if (!(r >= 0 && r <= 1)) throw ConfigError("synth: rates must lie in [0,1]");
            if (!(n.jitter_sigma >= 0)) throw ConfigError("synth: jitter sigma must be >= 0");
        }
        if (!(conf_sigma >= 0 && shift_sigma >= 0)) throw ConfigError("synth: sigmas must be >= 0");
    }

    // Noisy preset used for threshold benchmarks.
    static SynthParams benchmark(std::uint64_t seed, std::string slide_id) {
        SynthParams p;
        p.seed = seed;
        p.slide_id = std::move(slide_id);
        p.width = 16288;
        p.height = 12224;
        p.counts = {100, 146, 25};
        p.noise[0] = {2.0, 0.05, 0.12};
        p.noise[1] = {2.0, 0.15, 0.25};
        p.noise[2] = {2.5, 0.10, 0.15};
        p.conf_a = 0.6;
        p.conf_b = 0.3;
        p.conf_sigma = 0.07;
        p.shift_sigma = 0.12;
        return p;
    }

    friend bool operator==(const SynthParams&, const SynthParams&) = default;
};

inline void to_json(nlohmann::json& j, const SynthParams& p) {
    auto arr3 = [](auto f) {
        nlohmann::json a = nlohmann::json::array();
        for (std::size_t c = 0; c < kNumClasses; ++c) a.push_back(f(c));
        return a;
    };
    j = {{"format_version", kFormatVersion},
         {"seed", p.seed},
         {"slide_id", p.slide_id},
         {"width", p.width},
         {"height", p.height},
         {"counts", p.counts},
         {"sizes", arr3([&](std::size_t c) {
              const auto& s = p.sizes[c];
              return nlohmann::json{{"semi_min", s.semi_min}, {"semi_max", s.semi_max}, {"aspect_min", s.aspect_min},
                                    {"inner_min", s.inner_min}, {"inner_max", s.inner_max}};
          })},
         {"noise", arr3([&](std::size_t c) {
              const auto& n = p.noise[c];
              return nlohmann::json{{"jitter_sigma", n.jitter_sigma}, {"dropout", n.dropout}, {"spurious_rate", n.spurious_rate}};
          })},
         {"conf_a", p.conf_a},
         {"conf_b", p.conf_b},
         {"conf_sigma", p.conf_sigma},
         {"shift_sigma", p.shift_sigma},
         {"avoid_seams", p.avoid_seams},
         {"thumbnail_max_side", p.thumbnail_max_side}};
}

inline void from_json(const nlohmann::json& j, SynthParams& p) {
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            const auto& v = it.value();
            if (k == "format_version") continue;
            else if (k == "seed") p.seed = v.get<std::uint64_t>();
            else if (k == "slide_id") p.slide_id = v.get<std::string>();
            else if (k == "width") p.width = v.get<std::int32_t>();
            else if (k == "height") p.height = v.get<std::int32_t>();
            else if (k == "counts") p.counts = v.get<std::array<int, kNumClasses>>();
            else if (k == "sizes") {
                if (v.size() != kNumClasses) throw ConfigError("synth: 'sizes' needs one entry per class");
                for (std::size_t c = 0; c < kNumClasses; ++c) {
                    auto& s = p.sizes[c];
                    s.semi_min = v[c].value("semi_min", s.semi_min);
                    s.semi_max = v[c].value("semi_max", s.semi_max);
                    s.aspect_min = v[c].value("aspect_min", s.aspect_min);
                    s.inner_min = v[c].value("inner_min", s.inner_min);
                    s.inner_max = v[c].value("inner_max", s.inner_max);
                }
            } else if (k == "noise") {
                if (v.size() != kNumClasses) throw ConfigError("synth: 'noise' needs one entry per class");
                for (std::size_t c = 0; c < kNumClasses; ++c) {
                    auto& n = p.noise[c];
                    n.jitter_sigma = v[c].value("jitter_sigma", n.jitter_sigma);
                    n.dropout = v[c].value("dropout", n.dropout);
                    n.spurious_rate = v[c].value("spurious_rate", n.spurious_rate);
                }
            } else if (k == "conf_a") p.conf_a = v.get<double>();
            else if (k == "conf_b") p.conf_b = v.get<double>();
            else if (k == "conf_sigma") p.conf_sigma = v.get<double>();
            else if (k == "shift_sigma") p.shift_sigma = v.get<double>();
            else if (k == "avoid_seams") p.avoid_seams = v.get<bool>();
            else if (k == "thumbnail_max_side") p.thumbnail_max_side = v.get<std::int32_t>();
            else throw ConfigError("synth: unknown key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synth: ") + e.what());
    }
    p.validate();
}

// ---------------------------------------------------------------------------
// Shapes

struct Shape {
    double cx = 0, cy = 0;  // working px
    double a = 1, b = 1;    // semi-axes
    double theta = 0;
    double inner = 0;  // inner/outer ratio, 0 = solid

    double bound() const { return std::max(a, b); }
    double mean_radius() const { return 0.5 * (a + b); }
};

// Boundary displacement d(phi) = c0 + sum_k (c_k cos k phi + s_k sin k phi), in px.
struct Wobble {
    std::array<double, 5> c{};
    std::array<double, 5> s{};

    static Wobble sample(SynthRng& rng, double sigma) {
        Wobble w;
        if (sigma <= 0) return w;
        const double k = sigma / std::sqrt(5.0);
        w.c[0] = k * rng.normal();
        for (int i = 1; i < 5; ++i) {
            w.c[i] = k * rng.normal();
            w.s[i] = k * rng.normal();
        }
        return w;
    }
    double at(double phi) const {
        double d = c[0];
        for (int i = 1; i < 5; ++i) d += c[i] * std::cos(i * phi) + s[i] * std::sin(i * phi);
        return d;
    }
    double max_abs() const {
        double m = std::abs(c[0]);
        for (int i = 1; i < 5; ++i) m += std::abs(c[i]) + std::abs(s[i]);
        return m;
    }
};

inline bool shape_contains(const Shape& sh, double x, double y, const Wobble* outer = nullptr, const Wobble* inner = nullptr) {
    const double dx = x - sh.cx, dy = y - sh.cy;
    const double ct = std::cos(sh.theta), st = std::sin(sh.theta);
    const double u = (dx * ct + dy * st) / sh.a, v = (-dx * st + dy * ct) / sh.b;
    const double rho = std::sqrt(u * u + v * v);
    const double r = sh.mean_radius();
    double phi = 0;
    if (outer || inner) phi = std::atan2(v, u);
    const double lim_out = 1.0 + (outer ? outer->at(phi) / r : 0.0);
    if (rho > lim_out) return false;
    if (sh.inner <= 0) return true;
    const double lim_in = sh.inner + (inner ? inner->at(phi) / r : 0.0);
    return rho > lim_in;
}

// Slide-frame mask: pixel (x, y) is set iff the centre of its 2x2 block is inside.
inline std::optional<PlacedMask> rasterize_shape_blocks(const Shape& sh, const std::string& frame) {
    const double r = sh.bound() + 2;
    const auto x0 = static_cast<std::int32_t>(std::floor((sh.cx - r) / 2)) * 2;
    const auto y0 = static_cast<std::int32_t>(std::floor((sh.cy - r) / 2)) * 2;
    const auto x1 = static_cast<std::int32_t>(std::ceil((sh.cx + r) / 2)) * 2;
    const auto y1 = static_cast<std::int32_t>(std::ceil((sh.cy + r) / 2)) * 2;
    Bitmap bm(static_cast<std::uint32_t>(x1 - x0), static_cast<std::uint32_t>(y1 - y0));
    for (std::int32_t by = y0; by < y1; by += 2)
        for (std::int32_t bx = x0; bx < x1; bx += 2)
            if (shape_contains(sh, bx + 1.0, by + 1.0))
                for (int k = 0; k < 4; ++k) bm.set(static_cast<std::uint32_t>(bx - x0 + k % 2), static_cast<std::uint32_t>(by - y0 + k / 2));
    if (bm.count() == 0) return std::nullopt;
    return crop_to_content(PlacedMask{rle_encode(bm), x0, y0, frame});
}

// Model-frame mask of a (possibly wobbled) shape given in slide coordinates; each
// model pixel samples the centre of the tile pixels it covers.
inline std::optional<PlacedMask> rasterize_shape_model(const Shape& sh, const TileSpec& tile, const Wobble* outer,
                                                       const Wobble* inner) {
    const std::int64_t mw = tile.model_width(), mh = tile.model_height();
    const double margin = sh.bound() * (1.0 + (outer ? outer->max_abs() / sh.mean_radius() : 0.0)) + 4;
    auto model_of = [](double slide, std::int32_t origin, std::int64_t full, std::int64_t model) {
        return static_cast<std::int64_t>(std::floor((slide - origin) * static_cast<double>(model) / static_cast<double>(full)));
    };
    const std::int64_t mx0 = std::max<std::int64_t>(0, model_of(sh.cx - margin, tile.x, tile.width, mw));
    const std::int64_t my0 = std::max<std::int64_t>(0, model_of(sh.cy - margin, tile.y, tile.height, mh));
    const std::int64_t mx1 = std::min<std::int64_t>(mw, model_of(sh.cx + margin, tile.x, tile.width, mw) + 2);
    const std::int64_t my1 = std::min<std::int64_t>(mh, model_of(sh.cy + margin, tile.y, tile.height, mh) + 2);
    if (mx1 <= mx0 || my1 <= my0) return std::nullopt;
    Bitmap bm(static_cast<std::uint32_t>(mx1 - mx0), static_cast<std::uint32_t>(my1 - my0));
    auto centre = [](std::int64_t m, std::int32_t origin, std::int64_t full, std::int64_t model) {
        return origin + 0.5 * static_cast<double>(detail::up_start(m, full, model) + detail::up_start(m + 1, full, model));
    };
    for (std::int64_t my = my0; my < my1; ++my) {
        const double sy = centre(my, tile.y, tile.height, mh);
        for (std::int64_t mx = mx0; mx < mx1; ++mx)
            if (shape_contains(sh, centre(mx, tile.x, tile.width, mw), sy, outer, inner))
                bm.set(static_cast<std::uint32_t>(mx - mx0), static_cast<std::uint32_t>(my - my0));
    }
    if (bm.count() == 0) return std::nullopt;
    return crop_to_content(PlacedMask{rle_encode(bm), static_cast<std::int32_t>(mx0), static_cast<std::int32_t>(my0), tile.model_frame()});
}

// ---------------------------------------------------------------------------
// Slides

struct GtRecord {
    std::string gt_id;
    InstanceClass cls = InstanceClass::glomerulus;
    Shape shape;
};

struct SynthSlide {
    SlideGeometry geometry;
    std::vector<GroundTruthInstance> gts;
    TissueThumbnail thumbnail;
    std::vector<GtRecord> truth_manifest;
    std::vector<TileSpec> tiles;  // gated plan the layout was checked against
    std::array<double, kNumClasses> confidence_shift{};
    SynthParams params;
};

namespace detail {

// Tissue ellipse in normalised slide coordinates.
inline double tissue_rho(double x, double y, double w, double h) {
    const double u = (x - 0.5 * w) / (0.48 * w), v = (y - 0.5 * h) / (0.47 * h);
    return std::sqrt(u * u + v * v);
}

inline TissueThumbnail paint_thumbnail(const SynthParams& p) {
    const double s = static_cast<double>(p.thumbnail_max_side) / std::max(p.width, p.height);
    const auto tw = static_cast<std::uint32_t>(std::max<long>(1, std::lround(p.width * s)));
    const auto th = static_cast<std::uint32_t>(std::max<long>(1, std::lround(p.height * s)));
    TissueThumbnail t{p.slide_id, Image8(tw, th)};
    for (std::uint32_t j = 0; j < th; ++j)
        for (std::uint32_t i = 0; i < tw; ++i) {
            const double x = (i + 0.5) * p.width / tw, y = (j + 0.5) * p.height / th;
            const double rho = tissue_rho(x, y, p.width, p.height);
            TissueLabel l = TissueLabel::background;
            if (rho <= 1.0) l = rho > 0.93 ? TissueLabel::capsule_other : rho > 0.5 ? TissueLabel::cortex : TissueLabel::medulla;
            t.labels.pixels[static_cast<std::size_t>(j) * tw + i] = static_cast<std::uint8_t>(l);
        }
    return t;
}

inline bool boxes_touch(const PixelBox& a, const PixelBox& b) { return !intersect(a, b).empty(); }

}  // namespace detail

inline std::string gt_id_for(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "gt%05zu", i);
    return buf;
}

// Places the requested instances by rejection sampling: inside the tissue ellipse,
// clear of each other (across classes too), and only over tiles that survive gating.
inline SynthSlide generate_slide(const SynthParams& p, const PipelineConfig& cfg = {}) {
    p.validate();
    cfg.validate();
    SynthSlide s;
    s.params = p;
    s.geometry = SlideGeometry{p.slide_id, p.width, p.height, 2.0};
    s.thumbnail = detail::paint_thumbnail(p);
    const TissueMask tissue = aggregate_tissue(s.thumbnail);
    s.tiles = plan_tiles(s.geometry, &tissue, cfg);
    const auto grid = plan_grid(s.geometry, cfg);

    SynthRng rng(derive_seed(p.seed, p.slide_id, "layout"));
    for (std::size_t c = 0; c < kNumClasses; ++c) s.confidence_shift[c] = p.shift_sigma * rng.normal();

    struct Placed {
        double cx, cy, r;
    };
    std::vector<Placed> placed;
    const double gap = 6.0, edge_margin = 8.0;
    // large shapes first
    const std::array<InstanceClass, kNumClasses> order{InstanceClass::artery, InstanceClass::glomerulus, InstanceClass::arteriole};
    for (InstanceClass cls : order) {
        const std::size_t ci = class_index(cls);
        const SizeRange& sr = p.sizes[ci];
        for (int n = 0; n < p.counts[ci]; ++n) {
            bool ok = false;
            for (int attempt = 0; attempt < kPlacementAttempts && !ok; ++attempt) {
                Shape sh;
                sh.a = rng.uniform(sr.semi_min, sr.semi_max);
                sh.b = sh.a * rng.uniform(sr.aspect_min, 1.0);
                sh.theta = rng.uniform(0.0, std::numbers::pi);
                sh.inner = sr.inner_max > 0 ? rng.uniform(sr.inner_min, sr.inner_max) : 0.0;
                sh.cx = rng.uniform(0.0, p.width);
                sh.cy = rng.uniform(0.0, p.height);
                const double r = sh.bound() + 2;
                if (sh.cx - r < edge_margin || sh.cy - r < edge_margin || sh.cx + r > p.width - edge_margin ||
                    sh.cy + r > p.height - edge_margin)
                    continue;
                bool in_tissue = true;
                for (int k = 0; k < 32 && in_tissue; ++k) {
                    const double ang = 2 * std::numbers::pi * k / 32;
                    in_tissue = detail::tissue_rho(sh.cx + r * std::cos(ang), sh.cy + r * std::sin(ang), p.width, p.height) <= 0.9;
                }
                if (!in_tissue) continue;
                bool clear = true;
                for (const auto& q : placed)
                    if (std::hypot(q.cx - sh.cx, q.cy - sh.cy) <= q.r + r + gap) {
                        clear = false;
                        break;
                    }
                if (!clear) continue;
                const PixelBox bb{static_cast<std::int32_t>(std::floor(sh.cx - r)), static_cast<std::int32_t>(std::floor(sh.cy - r)),
                                  static_cast<std::int32_t>(std::ceil(2 * r)) + 2, static_cast<std::int32_t>(std::ceil(2 * r)) + 2};
                std::size_t touching = 0, gated = 0;
                bool contained = false;
                for (const auto& t : grid) {
                    if (!detail::boxes_touch(t.box(), bb)) continue;
                    ++touching;
                    const bool kept = std::any_of(s.tiles.begin(), s.tiles.end(), [&](const TileSpec& k) { return k.tile_id == t.tile_id; });
                    gated += kept ? 1 : 0;
                    contained = contained || (kept && t.box().contains(bb));
                }
                if (gated != touching) continue;
                if (p.avoid_seams && !(touching == 1 && contained)) continue;
                auto mask = rasterize_shape_blocks(sh, s.geometry.frame());
                if (!mask) continue;
                const std::string id = gt_id_for(s.gts.size());
                s.gts.push_back(GroundTruthInstance{id, cls, std::move(*mask), std::nullopt});
                s.truth_manifest.push_back(GtRecord{id, cls, sh});
                placed.push_back({sh.cx, sh.cy, r});
                ok = true;
            }
            if (!ok)
                throw CapacityError("synth: could not place " + std::string(class_name(cls)) + " #" + std::to_string(n + 1) + " on '" +
                                    p.slide_id + "' after " + std::to_string(kPlacementAttempts) + " attempts");
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Predictions

struct EmissionRecord {
    std::string tile_id;
    std::int32_t index = -1;       // -1 when dropped
    InstanceClass cls = InstanceClass::glomerulus;
    std::string source;            // gt_id or "spurious"
    double iou_with_truth = 0.0;   // model frame, against the visible truth piece
    double confidence = 0.0;
    bool dropped = false;
};

struct TileOutput {
    TileSpec tile;
    std::vector<TilePrediction> predictions;
    std::vector<EmissionRecord> manifest;
};

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

inline TileOutput simulate_tile(const SynthSlide& s, const TileSpec& tile) {
    const SynthParams& p = s.params;
    TileOutput out{tile, {}, {}};
    const PixelBox tb = tile.box();
    std::int32_t next = 0;
    for (std::size_t gi = 0; gi < s.gts.size(); ++gi) {
        const auto& gt = s.gts[gi];
        if (!detail::boxes_touch(gt.mask.extent(), tb)) continue;
        auto truth = slide_to_tile(gt.mask, tile);
        if (!truth) continue;
        const std::size_t ci = class_index(gt.cls);
        const ClassNoise& nz = p.noise[ci];
        SynthRng rng(derive_seed(p.seed, tile.tile_id, gt.gt_id));
        EmissionRecord rec{tile.tile_id, -1, gt.cls, gt.gt_id, 0.0, 0.0, false};
        if (rng.bernoulli(nz.dropout)) {
            rec.dropped = true;
            out.manifest.push_back(rec);
            continue;
        }
        std::optional<PlacedMask> emitted;
        if (nz.jitter_sigma > 0) {
            const Wobble wo = Wobble::sample(rng, nz.jitter_sigma);
            const Wobble wi = Wobble::sample(rng, nz.jitter_sigma);
            emitted = rasterize_shape_model(s.truth_manifest[gi].shape, tile, &wo, &wi);
        } else {
            emitted = *truth;
        }
        if (!emitted) {
            rec.dropped = true;
            out.manifest.push_back(rec);
            continue;
        }
        rec.iou_with_truth = iou(*emitted, *truth);
        const double noise = p.conf_sigma > 0 ? p.conf_sigma * rng.normal() : 0.0;
        rec.confidence = clamp01(p.conf_a * rec.iou_with_truth + p.conf_b + s.confidence_shift[ci] + noise);
        rec.index = next;
        out.predictions.push_back(TilePrediction{tile.tile_id, gt.cls, rec.confidence, std::move(*emitted), next++});
        out.manifest.push_back(rec);
    }
    SynthRng rng(derive_seed(p.seed, tile.tile_id, "spurious"));
    const double mw = tile.model_width(), mh = tile.model_height();
    for (InstanceClass cls : kAllClasses) {
        const std::size_t ci = class_index(cls);
        const int n = rng.binomial(kSpuriousSlots, p.noise[ci].spurious_rate);
        for (int k = 0; k < n; ++k) {
            // small blob, given in slide coordinates
            Shape sh;
            sh.a = rng.uniform(8.0, 24.0);
            sh.b = sh.a * rng.uniform(0.6, 1.0);
            sh.theta = rng.uniform(0.0, std::numbers::pi);
            // kept clear of true instances so classes never collide through spurious blobs
            bool clear = false;
            for (int tries = 0; tries < 20 && !clear; ++tries) {
                const double mx = rng.uniform(16.0, std::max(16.0, mw - 16.0)), my = rng.uniform(16.0, std::max(16.0, mh - 16.0));
                sh.cx = tile.x + mx * tile.width / mw;
                sh.cy = tile.y + my * tile.height / mh;
                const auto r = static_cast<std::int32_t>(sh.a) + 4;
                const PixelBox bb{static_cast<std::int32_t>(sh.cx) - r, static_cast<std::int32_t>(sh.cy) - r, 2 * r, 2 * r};
                clear = std::none_of(s.gts.begin(), s.gts.end(), [&](const auto& g) { return detail::boxes_touch(g.mask.extent(), bb); });
            }
            const double noise = p.conf_sigma > 0 ? p.conf_sigma * rng.normal() : 0.0;
            if (!clear) continue;
            auto m = rasterize_shape_model(sh, tile, nullptr, nullptr);
            if (!m) continue;
            EmissionRecord rec{tile.tile_id, next, cls, "spurious", 0.0, clamp01(p.conf_b + s.confidence_shift[ci] + noise), false};
            out.predictions.push_back(TilePrediction{tile.tile_id, cls, rec.confidence, std::move(*m), next++});
            out.manifest.push_back(rec);
        }
    }
    return out;
}

// One output per tile, in the order given; tiles are simulated in parallel.
inline std::vector<TileOutput> simulate_predictions(const SynthSlide& s, const std::vector<TileSpec>& tiles, unsigned workers = 0) {
    std::vector<TileOutput> out(tiles.size());
    parallel_for(tiles.size(), [&](std::size_t i) { out[i] = simulate_tile(s, tiles[i]); }, workers);
    return out;
}

inline nlohmann::json truth_manifest_json(const SynthSlide& s, const std::vector<TileOutput>& outputs) {
    nlohmann::json gts = nlohmann::json::array();
    for (const auto& r : s.truth_manifest)
        gts.push_back({{"gt_id", r.gt_id},
                       {"class", class_name(r.cls)},
                       {"shape", r.shape.inner > 0 ? "annulus" : "ellipse"},
                       {"cx", r.shape.cx},
                       {"cy", r.shape.cy},
                       {"a", r.shape.a},
                       {"b", r.shape.b},
                       {"theta", r.shape.theta},
                       {"inner", r.shape.inner}});
    nlohmann::json em = nlohmann::json::array();
    for (const auto& o : outputs)
        for (const auto& e : o.manifest) {
            nlohmann::json je = {{"tile_id", e.tile_id}, {"class", class_name(e.cls)}, {"source", e.source}, {"dropped", e.dropped}};
            if (!e.dropped) {
                je["candidate_id"] = candidate_id_for(e.tile_id, e.index);
                je["iou_with_truth"] = e.iou_with_truth;
                je["confidence"] = e.confidence;
            }
            em.push_back(std::move(je));
        }
    nlohmann::json shift = nlohmann::json::object();
    for (InstanceClass c : kAllClasses) shift[std::string(class_name(c))] = s.confidence_shift[class_index(c)];
    return {{"format_version", kFormatVersion}, {"slide", s.geometry}, {"params", s.params}, {"confidence_shift", shift},
            {"ground_truth", gts},              {"emissions", em}};
}

}  // namespace wsiseg
