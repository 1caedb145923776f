#pragma once

// Detection matching and per-slide / per-class metrics.
//
// AP and AR are the precision and recall of the thresholded prediction set (PPV and
// sensitivity), not areas under a PR curve. Specificity is computed over pixels.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "config.hpp"
#include "errors.hpp"
#include "mask.hpp"
#include "merge.hpp"
#include "tiling.hpp"
#include "vocabulary.hpp"

namespace wsiseg {

// A prediction as seen by the evaluator.
struct ScoredMask {
    std::string id;
    double confidence = 0.0;
    ColumnSpans spans;
};

struct LabeledMask {
    std::string id;
    ColumnSpans spans;
};

struct MatchPair {
    std::string candidate_id;
    std::string gt_id;
    double iou = 0.0;
    friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

// One prediction in greedy processing order (confidence desc, id asc).
struct RankedPrediction {
    std::string id;
    double confidence = 0.0;
    bool matched = false;
    friend bool operator==(const RankedPrediction&, const RankedPrediction&) = default;
};

struct MatchResult {
    std::string slide_id;
    InstanceClass cls = InstanceClass::glomerulus;
    std::vector<MatchPair> pairs;
    std::vector<std::string> unmatched_preds;
    std::vector<std::string> unmatched_gts;
    double match_iou = 0.5;
    std::vector<RankedPrediction> ranked;
    std::size_t gt_count = 0;

    std::int64_t tp() const { return static_cast<std::int64_t>(pairs.size()); }
    std::int64_t fp() const { return static_cast<std::int64_t>(unmatched_preds.size()); }
    std::int64_t fn() const { return static_cast<std::int64_t>(unmatched_gts.size()); }

    friend bool operator==(const MatchResult&, const MatchResult&) = default;
};

inline bool ranks_before(const ScoredMask& a, const ScoredMask& b) {
    return a.confidence != b.confidence ? a.confidence > b.confidence : a.id < b.id;
}

// Greedy one-to-one matching: predictions in descending confidence (ties by id) each
// take the unmatched gt with the highest IoU >= match_iou (ties by gt id).
inline MatchResult match_instances(std::span<const ScoredMask> preds, std::span<const LabeledMask> gts, double match_iou) {
    MatchResult r;
    r.match_iou = match_iou;
    r.gt_count = gts.size();
    std::vector<std::size_t> porder(preds.size()), gorder(gts.size());
    for (std::size_t i = 0; i < porder.size(); ++i) porder[i] = i;
    for (std::size_t i = 0; i < gorder.size(); ++i) gorder[i] = i;
    std::sort(porder.begin(), porder.end(), [&](std::size_t a, std::size_t b) { return ranks_before(preds[a], preds[b]); });
    std::sort(gorder.begin(), gorder.end(), [&](std::size_t a, std::size_t b) { return gts[a].id < gts[b].id; });

    std::vector<char> taken(gts.size(), 0);
    for (std::size_t pi : porder) {
        const ScoredMask& p = preds[pi];
        std::optional<std::size_t> best;
        double best_iou = 0.0;
        for (std::size_t gi : gorder) {
            if (taken[gi]) continue;
            if (intersect(p.spans.extent(), gts[gi].spans.extent()).empty()) continue;
            const double v = iou(p.spans, gts[gi].spans);
            if (v >= match_iou && (!best || v > best_iou)) {
                best = gi;
                best_iou = v;
            }
        }
        if (best) {
            taken[*best] = 1;
            r.pairs.push_back({p.id, gts[*best].id, best_iou});
        } else {
            r.unmatched_preds.push_back(p.id);
        }
        r.ranked.push_back({p.id, p.confidence, best.has_value()});
    }
    for (std::size_t gi : gorder)
        if (!taken[gi]) r.unmatched_gts.push_back(gts[gi].id);
    return r;
}

// ---------------------------------------------------------------------------
// Counts -> rates

struct DetectionRates {
    double precision = 1.0;
    double recall = 1.0;
    double f1 = 0.0;
};

// precision = 1 when nothing is predicted; recall = 1 when nothing is annotated.
inline DetectionRates detection_rates(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
    DetectionRates r;
    r.precision = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    r.recall = (tp + fn) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    r.f1 = (r.precision + r.recall) == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

struct ClassSlideMetrics {
    std::string slide_id;
    InstanceClass cls = InstanceClass::glomerulus;
    double iou_mean = 0.0;
    double precision = 1.0;
    double recall = 1.0;
    double f1 = 0.0;
    double specificity = 1.0;
    std::int64_t tp = 0, fp = 0, fn = 0;
    std::int64_t tn_pixels = 0, fp_pixels = 0;

    // Slides with neither gts nor predictions of the class are left out of class means.
    bool counted() const { return tp + fp + fn > 0; }

    friend bool operator==(const ClassSlideMetrics&, const ClassSlideMetrics&) = default;
};

// Pixel universe of one slide: its extent minus Ignore regions.
struct PixelUniverse {
    std::int64_t slide_pixels = 0;
    std::vector<const ColumnSpans*> ignore;
};

inline ClassSlideMetrics slide_metrics(const MatchResult& m, const PixelUniverse& universe, std::span<const ScoredMask> preds,
                                       std::span<const LabeledMask> gts) {
    ClassSlideMetrics s;
    s.slide_id = m.slide_id;
    s.cls = m.cls;
    s.tp = m.tp();
    s.fp = m.fp();
    s.fn = m.fn();
    const DetectionRates r = detection_rates(s.tp, s.fp, s.fn);
    s.precision = r.precision;
    s.recall = r.recall;
    s.f1 = r.f1;
    if (!m.pairs.empty()) {
        double acc = 0.0;
        for (const auto& p : m.pairs) acc += p.iou;
        s.iou_mean = acc / static_cast<double>(m.pairs.size());
    }

    std::vector<const ColumnSpans*> gi = universe.ignore;
    for (const auto& g : gts) gi.push_back(&g.spans);
    std::vector<const ColumnSpans*> all = gi;
    for (const auto& p : preds) all.push_back(&p.spans);
    const std::int64_t covered = union_area(all);
    s.fp_pixels = covered - union_area(gi);
    s.tn_pixels = universe.slide_pixels - covered;
    const std::int64_t denom = s.tn_pixels + s.fp_pixels;
    s.specificity = denom == 0 ? 1.0 : static_cast<double>(s.tn_pixels) / static_cast<double>(denom);
    return s;
}

// ---------------------------------------------------------------------------
// Aggregation

inline constexpr std::array<const char*, 5> kMetricNames = {"mIOU", "mAP", "mAR", "mF1", "mAS"};

struct ClassMeans {
    double miou = 0.0, map = 0.0, mar = 0.0, mf1 = 0.0, mas = 0.0;
    std::size_t slides = 0;

    std::array<double, 5> values() const { return {miou, map, mar, mf1, mas}; }
    friend bool operator==(const ClassMeans&, const ClassMeans&) = default;
};

struct MetricsReport {
    std::vector<ClassSlideMetrics> per_slide;  // sorted by (slide_id, class)
    std::array<ClassMeans, kNumClasses> means{};
    PipelineConfig config;
    std::string threshold_mode;

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

// Unweighted means over counted slides, folded in slide-id order.
inline MetricsReport aggregate_report(std::vector<ClassSlideMetrics> per_slide, const PipelineConfig& cfg = {},
                                      std::string threshold_mode = {}) {
    if (per_slide.empty()) throw ConfigError("cannot aggregate an empty metrics set");
    std::sort(per_slide.begin(), per_slide.end(), [](const auto& a, const auto& b) {
        return a.slide_id != b.slide_id ? a.slide_id < b.slide_id : class_index(a.cls) < class_index(b.cls);
    });
    MetricsReport rep;
    rep.config = cfg;
    rep.threshold_mode = std::move(threshold_mode);
    for (const auto& s : per_slide) {
        if (!s.counted()) continue;
        ClassMeans& m = rep.means[class_index(s.cls)];
        m.miou += s.iou_mean;
        m.map += s.precision;
        m.mar += s.recall;
        m.mf1 += s.f1;
        m.mas += s.specificity;
        ++m.slides;
    }
    for (auto& m : rep.means) {
        if (m.slides == 0) continue;
        const double n = static_cast<double>(m.slides);
        m.miou /= n;
        m.map /= n;
        m.mar /= n;
        m.mf1 /= n;
        m.mas /= n;
    }
    rep.per_slide = std::move(per_slide);
    return rep;
}

// ---------------------------------------------------------------------------
// Precision-recall curves

struct PrPoint {
    double threshold = 0.0;
    double recall = 0.0;
    double precision = 0.0;
    friend bool operator==(const PrPoint&, const PrPoint&) = default;
};

struct PrCurve {
    std::string slide_id;  // "aggregate" for the averaged curve
    InstanceClass cls = InstanceClass::glomerulus;
    std::vector<PrPoint> points;
    bool empty_flag = false;  // no gts: recall undefined
};

// Thresholds sweep the unique confidences in descending order; keeping every
// prediction with confidence >= t keeps a prefix of the greedy order, so TP flags
// from one matching pass hold at every threshold.
inline PrCurve pr_curve(const MatchResult& m) {
    PrCurve c;
    c.slide_id = m.slide_id;
    c.cls = m.cls;
    if (m.gt_count == 0) {
        c.empty_flag = true;
        return c;
    }
    std::int64_t tp = 0, n = 0;
    for (std::size_t i = 0; i < m.ranked.size(); ++i) {
        tp += m.ranked[i].matched ? 1 : 0;
        ++n;
        const bool last_of_level = i + 1 == m.ranked.size() || m.ranked[i + 1].confidence != m.ranked[i].confidence;
        if (!last_of_level) continue;
        c.points.push_back({m.ranked[i].confidence, static_cast<double>(tp) / static_cast<double>(m.gt_count),
                            static_cast<double>(tp) / static_cast<double>(n)});
    }
    return c;
}

inline constexpr std::size_t kRecallGridSize = 101;

// Interpolated precision at recall r: best precision at any recall >= r (0 if unreachable).
inline std::array<double, kRecallGridSize> interpolate_on_recall_grid(const PrCurve& c) {
    std::array<double, kRecallGridSize> out{};
    for (std::size_t k = 0; k < kRecallGridSize; ++k) {
        const double r = static_cast<double>(k) / (kRecallGridSize - 1);
        double best = 0.0;
        for (const auto& p : c.points)
            if (p.recall >= r - 1e-12) best = std::max(best, p.precision);
        out[k] = best;
    }
    return out;
}

// Pointwise mean of the per-slide curves of one class on the fixed recall grid.
inline PrCurve aggregate_pr_curve(std::span<const PrCurve> curves, InstanceClass cls) {
    PrCurve agg;
    agg.slide_id = "aggregate";
    agg.cls = cls;
    std::array<double, kRecallGridSize> acc{};
    std::size_t n = 0;
    for (const auto& c : curves) {
        if (c.cls != cls || c.empty_flag) continue;
        const auto g = interpolate_on_recall_grid(c);
        for (std::size_t k = 0; k < kRecallGridSize; ++k) acc[k] += g[k];
        ++n;
    }
    if (n == 0) {
        agg.empty_flag = true;
        return agg;
    }
    for (std::size_t k = 0; k < kRecallGridSize; ++k)
        agg.points.push_back({0.0, static_cast<double>(k) / (kRecallGridSize - 1), acc[k] / static_cast<double>(n)});
    return agg;
}

// ---------------------------------------------------------------------------
// Slide-level evaluation of an instance set against ground truth

struct SlideTruth {
    std::string slide_id;
    std::vector<GroundTruthInstance> gts;
    std::vector<PlacedMask> ignore;
};

struct ClassEvaluation {
    MatchResult match;
    ClassSlideMetrics metrics;
    PrCurve curve;
};

struct SlideEvaluation {
    std::string slide_id;
    std::array<ClassEvaluation, kNumClasses> classes;
};

namespace detail {

inline double ignored_fraction(const ColumnSpans& m, const std::optional<ColumnSpans>& ignore) {
    if (!ignore || m.area() == 0) return 0.0;
    return static_cast<double>(intersection_area(m, *ignore)) / static_cast<double>(m.area());
}

}  // namespace detail

// Evaluates the active candidates of `s`. Predictions and gts covered by Ignore
// regions beyond cfg.ignore_overlap_max are excluded from matching and pixel counts.
inline SlideEvaluation evaluate_slide(const SlideInstanceSet& s, const SlideTruth& truth, const PipelineConfig& cfg) {
    SlideEvaluation ev;
    ev.slide_id = s.slide_id();
    std::vector<ColumnSpans> ignore_spans;
    for (const auto& m : truth.ignore) ignore_spans.emplace_back(m);
    std::vector<const ColumnSpans*> ignore_ptrs;
    for (const auto& m : ignore_spans) ignore_ptrs.push_back(&m);
    std::optional<ColumnSpans> ignore_union;
    if (auto u = union_mask(ignore_ptrs, s.geometry.frame())) ignore_union.emplace(*u);

    PixelUniverse universe{static_cast<std::int64_t>(s.geometry.width) * s.geometry.height, ignore_ptrs};

    for (InstanceClass cls : kAllClasses) {
        std::vector<ScoredMask> preds;
        for (const auto& c : s.candidates) {
            if (!c.active() || c.cls != cls) continue;
            ScoredMask p{c.candidate_id, c.confidence, ColumnSpans(c.mask)};
            if (detail::ignored_fraction(p.spans, ignore_union) > cfg.ignore_overlap_max) continue;
            preds.push_back(std::move(p));
        }
        std::vector<LabeledMask> gts;
        for (const auto& g : truth.gts) {
            if (g.cls != cls) continue;
            LabeledMask l{g.gt_id, ColumnSpans(g.mask)};
            if (detail::ignored_fraction(l.spans, ignore_union) > cfg.ignore_overlap_max) continue;
            gts.push_back(std::move(l));
        }
        ClassEvaluation& ce = ev.classes[class_index(cls)];
        ce.match = match_instances(preds, gts, cfg.match_iou);
        ce.match.slide_id = ev.slide_id;
        ce.match.cls = cls;
        ce.metrics = slide_metrics(ce.match, universe, preds, gts);
        ce.curve = pr_curve(ce.match);
    }
    return ev;
}

}  // namespace wsiseg
