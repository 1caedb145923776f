#pragma once

// Post-processing cascade over per-tile instance predictions:
// edge filter -> same-class merge -> threshold -> small filter -> cross-class removal.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "config.hpp"
#include "geometry.hpp"
#include "mask.hpp"
#include "parallel.hpp"
#include "tiling.hpp"
#include "vocabulary.hpp"

namespace wsiseg {

struct TilePrediction {
    std::string tile_id;
    InstanceClass cls = InstanceClass::glomerulus;
    double confidence = 0.0;
    PlacedMask mask;  // model frame of the tile
    std::int32_t index_in_tile = 0;
};

enum class CandidateStatus : std::uint8_t {
    active,
    edge_filtered,
    suppressed_same_class,
    below_threshold,
    too_small,
    cross_class_removed,
};

inline std::string_view status_name(CandidateStatus s) {
    switch (s) {
        case CandidateStatus::active: return "active";
        case CandidateStatus::edge_filtered: return "edge-filtered";
        case CandidateStatus::suppressed_same_class: return "suppressed-same-class";
        case CandidateStatus::below_threshold: return "below-threshold";
        case CandidateStatus::too_small: return "too-small";
        case CandidateStatus::cross_class_removed: return "cross-class-removed";
    }
    return "?";
}

inline CandidateStatus parse_status(std::string_view s) {
    for (auto st : {CandidateStatus::active, CandidateStatus::edge_filtered, CandidateStatus::suppressed_same_class,
                    CandidateStatus::below_threshold, CandidateStatus::too_small, CandidateStatus::cross_class_removed})
        if (status_name(st) == s) return st;
    throw FormatError("unknown candidate status '" + std::string(s) + "'");
}

struct InstanceCandidate {
    std::string candidate_id;
    InstanceClass cls = InstanceClass::glomerulus;
    double confidence = 0.0;
    PlacedMask mask;  // slide frame
    std::string tile_id;
    std::int32_t index_in_tile = 0;
    CandidateStatus status = CandidateStatus::active;
    std::optional<std::string> suppressed_by;

    bool active() const { return status == CandidateStatus::active; }
};

// Active-candidate count after each stage, in execution order.
struct StageCount {
    std::string stage;
    std::size_t active = 0;
    friend bool operator==(const StageCount&, const StageCount&) = default;
};

struct SlideInstanceSet {
    SlideGeometry geometry;
    std::vector<InstanceCandidate> candidates;  // sorted by candidate_id
    PipelineConfig config;
    std::vector<TransformWarning> warnings;
    std::vector<StageCount> trace;

    const std::string& slide_id() const { return geometry.slide_id; }
    std::size_t active_count() const {
        return static_cast<std::size_t>(std::count_if(candidates.begin(), candidates.end(), [](const auto& c) { return c.active(); }));
    }
};

inline std::string candidate_id_for(const std::string& tile_id, std::int32_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%05d", index);
    return tile_id + buf;
}

// ---------------------------------------------------------------------------
// Edge filtering

struct EdgeFilterResult {
    std::vector<TilePrediction> kept;
    std::vector<TilePrediction> edge_filtered;
};

// Excluded iff both: edge contact > cfg.edge_circumference_max and band area fraction
// > cfg.edge_band_area_min, measured in the model frame the prediction was made in.
inline bool is_edge_prediction(const PlacedMask& model_mask, const TileSpec& tile, const PipelineConfig& cfg) {
    const ColumnSpans cs(model_mask);
    if (cs.empty()) return false;
    const PixelBox frame = tile.model_box();
    const EdgeContact e = measure_edge_contact(cs, frame);
    const double contact = static_cast<double>(e.ring_pixels) / static_cast<double>(e.boundary_pixels);
    if (!(contact > cfg.edge_circumference_max)) return false;
    return border_band_area_fraction(cs, frame, cfg.band_fraction) > cfg.edge_band_area_min;
}

inline EdgeFilterResult filter_edge_predictions(std::vector<TilePrediction> preds, const TileSpec& tile, const PipelineConfig& cfg) {
    EdgeFilterResult r;
    for (auto& p : preds) {
        if (is_edge_prediction(p.mask, tile, cfg)) r.edge_filtered.push_back(std::move(p));
        else r.kept.push_back(std::move(p));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Spatial index over candidate bounding boxes

class BoxGrid {
public:
    explicit BoxGrid(std::int32_t cell = 256) : cell_(cell) {}

    void insert(std::uint32_t id, const PixelBox& b) {
        if (b.empty()) return;
        for_cells(b, [&](std::int64_t key) { cells_[key].push_back(id); });
    }

    // Ids whose inserted box shares a cell with `b`, deduplicated, ascending.
    void query(const PixelBox& b, std::vector<std::uint32_t>& out) const {
        out.clear();
        if (b.empty()) return;
        for_cells(b, [&](std::int64_t key) {
            auto it = cells_.find(key);
            if (it != cells_.end()) out.insert(out.end(), it->second.begin(), it->second.end());
        });
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
    }

private:
    static std::int64_t floor_div(std::int64_t a, std::int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

    template <typename F>
    void for_cells(const PixelBox& b, F&& f) const {
        const std::int64_t cx0 = floor_div(b.x, cell_), cx1 = floor_div(b.right() - 1, cell_);
        const std::int64_t cy0 = floor_div(b.y, cell_), cy1 = floor_div(b.bottom() - 1, cell_);
        for (std::int64_t cy = cy0; cy <= cy1; ++cy)
            for (std::int64_t cx = cx0; cx <= cx1; ++cx) f((cy << 32) ^ (cx & 0xffffffff));
    }

    std::int32_t cell_;
    std::unordered_map<std::int64_t, std::vector<std::uint32_t>> cells_;
};

inline bool boxes_overlap(const PixelBox& a, const PixelBox& b) { return !intersect(a, b).empty(); }

// ---------------------------------------------------------------------------
// Same-class merge

struct TileBatch {
    TileSpec tile;
    std::vector<TilePrediction> kept;
    std::vector<TilePrediction> edge_filtered;
};

namespace detail {

inline void sort_candidates(std::vector<InstanceCandidate>& cs) {
    std::sort(cs.begin(), cs.end(), [](const auto& a, const auto& b) { return a.candidate_id < b.candidate_id; });
    for (std::size_t i = 1; i < cs.size(); ++i)
        if (cs[i].candidate_id == cs[i - 1].candidate_id)
            throw FormatError("duplicate prediction " + cs[i].candidate_id);
}

inline std::vector<ColumnSpans> spans_of(const std::vector<InstanceCandidate>& cs, unsigned workers) {
    std::vector<ColumnSpans> out(cs.size());
    parallel_for(cs.size(), [&](std::size_t i) { out[i] = ColumnSpans(cs[i].mask); }, workers);
    return out;
}

}  // namespace detail

// Maps every prediction into the slide frame, then per class keeps the highest-confidence
// instance among any overlapping group (IoU > cfg.same_class_suppress_iou). Processing order
// is (confidence desc, tile_id, index_in_tile); an instance is suppressed by the first
// retained instance it overlaps.
inline SlideInstanceSet merge_same_class(const std::vector<TileBatch>& batches, const SlideGeometry& geom, const PipelineConfig& cfg,
                                         unsigned workers = 0) {
    SlideInstanceSet out;
    out.geometry = geom;
    out.config = cfg;

    struct Mapped {
        std::optional<PlacedMask> mask;
        std::vector<TransformWarning> warnings;
    };
    struct Job {
        const TileSpec* tile;
        const TilePrediction* pred;
        bool edge;
    };
    std::vector<Job> jobs;
    for (const auto& b : batches) {
        for (const auto& p : b.kept) jobs.push_back({&b.tile, &p, false});
        for (const auto& p : b.edge_filtered) jobs.push_back({&b.tile, &p, true});
    }
    std::vector<Mapped> mapped(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t i) {
        mapped[i].mask = tile_to_slide(jobs[i].pred->mask, *jobs[i].tile, geom, &mapped[i].warnings);
    }, workers);

    for (std::size_t i = 0; i < jobs.size(); ++i) {
        for (auto& w : mapped[i].warnings) out.warnings.push_back(std::move(w));
        if (!mapped[i].mask) continue;
        const TilePrediction& p = *jobs[i].pred;
        InstanceCandidate c;
        c.tile_id = jobs[i].tile->tile_id;
        c.index_in_tile = p.index_in_tile;
        c.candidate_id = candidate_id_for(c.tile_id, p.index_in_tile);
        c.cls = p.cls;
        c.confidence = p.confidence;
        c.mask = std::move(*mapped[i].mask);
        c.status = jobs[i].edge ? CandidateStatus::edge_filtered : CandidateStatus::active;
        out.candidates.push_back(std::move(c));
    }
    detail::sort_candidates(out.candidates);
    std::sort(out.warnings.begin(), out.warnings.end(), [](const auto& a, const auto& b) {
        return a.tile_id != b.tile_id ? a.tile_id < b.tile_id : a.message < b.message;
    });
    out.trace.push_back({"predictions", out.candidates.size()});
    out.trace.push_back({"edge_filter", out.active_count()});

    const auto spans = detail::spans_of(out.candidates, workers);
    std::vector<std::uint32_t> order;
    for (std::uint32_t i = 0; i < out.candidates.size(); ++i)
        if (out.candidates[i].active()) order.push_back(i);
    // Candidates are sorted by id, so index order is the (tile_id, index) tie-break.
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        return out.candidates[a].confidence > out.candidates[b].confidence;
    });

    std::vector<std::uint32_t> rank(out.candidates.size(), 0);
    for (std::uint32_t r = 0; r < order.size(); ++r) rank[order[r]] = r;

    std::array<BoxGrid, kNumClasses> retained;
    std::vector<std::uint32_t> near;
    for (std::uint32_t i : order) {
        InstanceCandidate& c = out.candidates[i];
        const PixelBox box = spans[i].extent();
        retained[class_index(c.cls)].query(box, near);
        // The suppressor is the earliest retained instance in processing order.
        std::optional<std::uint32_t> by;
        std::uint32_t by_rank = 0;
        for (std::uint32_t j : near) {
            if (!boxes_overlap(box, spans[j].extent())) continue;
            if (iou(spans[i], spans[j]) > cfg.same_class_suppress_iou) {
                if (!by || rank[j] < by_rank) {
                    by = j;
                    by_rank = rank[j];
                }
            }
        }
        if (by) {
            c.status = CandidateStatus::suppressed_same_class;
            c.suppressed_by = out.candidates[*by].candidate_id;
        } else {
            retained[class_index(c.cls)].insert(i, box);
        }
    }
    out.trace.push_back({"same_class_merge", out.active_count()});
    return out;
}

// ---------------------------------------------------------------------------
// Threshold, small-instance and cross-class filters

using ClassThresholds = std::array<double, kNumClasses>;

// Active instances are kept iff confidence >= the class threshold.
inline SlideInstanceSet apply_thresholds(SlideInstanceSet s, const ClassThresholds& t) {
    for (auto& c : s.candidates)
        if (c.active() && c.confidence < t[class_index(c.cls)]) c.status = CandidateStatus::below_threshold;
    s.trace.push_back({"threshold", s.active_count()});
    return s;
}

inline SlideInstanceSet filter_small(SlideInstanceSet s, const PipelineConfig& cfg) {
    for (auto& c : s.candidates)
        if (c.active() && area(c.mask) < cfg.min_instance_area) c.status = CandidateStatus::too_small;
    s.trace.push_back({"small_filter", s.active_count()});
    return s;
}

// Every different-class pair of active instances with IoU >= cutoff loses both members.
// Pairs are found on the pre-pass active set, so the result is order-independent.
inline SlideInstanceSet remove_cross_class_overlaps(SlideInstanceSet s, const PipelineConfig& cfg, unsigned workers = 0) {
    std::vector<std::uint32_t> act;
    for (std::uint32_t i = 0; i < s.candidates.size(); ++i)
        if (s.candidates[i].active()) act.push_back(i);
    std::vector<ColumnSpans> spans(act.size());
    parallel_for(act.size(), [&](std::size_t k) { spans[k] = ColumnSpans(s.candidates[act[k]].mask); }, workers);
    BoxGrid grid;
    for (std::uint32_t k = 0; k < act.size(); ++k) grid.insert(k, spans[k].extent());
    std::vector<char> remove(act.size(), 0);
    std::vector<std::uint32_t> near;
    for (std::uint32_t k = 0; k < act.size(); ++k) {
        grid.query(spans[k].extent(), near);
        for (std::uint32_t m : near) {
            if (m <= k) continue;
            if (s.candidates[act[k]].cls == s.candidates[act[m]].cls) continue;
            if (!boxes_overlap(spans[k].extent(), spans[m].extent())) continue;
            if (iou(spans[k], spans[m]) >= cfg.cross_class_iou_cutoff) remove[k] = remove[m] = 1;
        }
    }
    for (std::uint32_t k = 0; k < act.size(); ++k)
        if (remove[k]) s.candidates[act[k]].status = CandidateStatus::cross_class_removed;
    s.trace.push_back({"cross_class_removal", s.active_count()});
    return s;
}

}  // namespace wsiseg
