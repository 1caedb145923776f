#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>

#include "oracles.hpp"

using namespace wsiseg;
using oracle::rect;

namespace {

const SlideGeometry kSlide{"s", 8192, 4096, 2.0};

TileSpec tile(const std::string& id, std::int32_t x, std::int32_t y = 0) { return TileSpec{id, "s", x, y, 4096, 4096, 0.5}; }

TilePrediction pred(const TileSpec& t, std::int32_t idx, InstanceClass c, double conf, PlacedMask model_mask) {
    model_mask.frame = t.model_frame();
    return TilePrediction{t.tile_id, c, conf, std::move(model_mask), idx};
}

const InstanceCandidate& by_id(const SlideInstanceSet& s, const std::string& id) {
    auto it = std::find_if(s.candidates.begin(), s.candidates.end(), [&](const auto& c) { return c.candidate_id == id; });
    if (it == s.candidates.end()) throw std::runtime_error("no candidate " + id);
    return *it;
}

InstanceCandidate cand(const std::string& id, InstanceClass c, double conf, PlacedMask m) {
    InstanceCandidate k;
    k.candidate_id = id;
    k.cls = c;
    k.confidence = conf;
    m.frame = "slide:s";
    k.mask = std::move(m);
    k.tile_id = id.substr(0, id.find('#'));
    return k;
}

SlideInstanceSet set_of(std::vector<InstanceCandidate> cs) {
    SlideInstanceSet s;
    s.geometry = kSlide;
    s.candidates = std::move(cs);
    return s;
}

}  // namespace

TEST(EdgeFilter, Fixtures) {
    const PipelineConfig cfg;
    const TileSpec t = tile("t00000", 0);
    EXPECT_FALSE(is_edge_prediction(rect(900, 900, 50, 50, t.model_frame()), t, cfg));
    // 100 px square flush left: contact 100/396, entirely in the 205 px band
    EXPECT_TRUE(is_edge_prediction(rect(0, 900, 100, 100, t.model_frame()), t, cfg));
    // contact 0.30 but only 205/512 of the area in the band
    const auto big = rect(0, 600, 512, 765, t.model_frame());
    EXPECT_DOUBLE_EQ(edge_contact_fraction(big, t.model_box()), 0.30);
    EXPECT_NEAR(border_band_area_fraction(big, t.model_box()), 0.40, 0.001);
    EXPECT_FALSE(is_edge_prediction(big, t, cfg));
    // contact 0.25, band 205/216
    const auto mid = rect(0, 900, 216, 214, t.model_frame());
    EXPECT_DOUBLE_EQ(edge_contact_fraction(mid, t.model_box()), 0.25);
    EXPECT_NEAR(border_band_area_fraction(mid, t.model_box()), 0.95, 0.001);
    EXPECT_TRUE(is_edge_prediction(mid, t, cfg));

    const auto r = filter_edge_predictions({pred(t, 0, InstanceClass::artery, 0.9, mid), pred(t, 1, InstanceClass::artery, 0.9, big)}, t, cfg);
    ASSERT_EQ(r.kept.size(), 1u);
    EXPECT_EQ(r.kept[0].index_in_tile, 1);
    ASSERT_EQ(r.edge_filtered.size(), 1u);
}

TEST(MergeSameClass, SingleTileIsIdentity) {
    const TileSpec t = tile("t00000", 0);
    std::vector<TileBatch> b{{t, {pred(t, 0, InstanceClass::glomerulus, 0.8, rect(10, 10, 5, 5, "")),
                                  pred(t, 1, InstanceClass::artery, 0.6, rect(100, 10, 5, 5, ""))},
                              {}}};
    const auto s = merge_same_class(b, kSlide, PipelineConfig{});
    ASSERT_EQ(s.candidates.size(), 2u);
    EXPECT_EQ(s.active_count(), 2u);
    EXPECT_EQ(s.candidates[0].candidate_id, "t00000#00000");
    EXPECT_EQ(s.candidates[0].mask, rect(20, 20, 10, 10, "slide:s"));
}

TEST(MergeSameClass, HigherConfidenceSurvives) {
    const TileSpec a = tile("t01", 0), b = tile("t02", 1000);
    // slide boxes (2000,200,20,20) and (2000,200,20,16): IoU 0.8
    std::vector<TileBatch> batches{{a, {pred(a, 0, InstanceClass::glomerulus, 0.91, rect(1000, 100, 10, 10, ""))}, {}},
                                   {b, {pred(b, 0, InstanceClass::glomerulus, 0.85, rect(500, 100, 10, 8, ""))}, {}}};
    auto s = merge_same_class(batches, kSlide, PipelineConfig{});
    EXPECT_DOUBLE_EQ(iou(s.candidates[0].mask, s.candidates[1].mask), 0.8);
    EXPECT_TRUE(by_id(s, "t01#00000").active());
    EXPECT_EQ(by_id(s, "t02#00000").status, CandidateStatus::suppressed_same_class);
    EXPECT_EQ(by_id(s, "t02#00000").suppressed_by, "t01#00000");

    // equal confidence: lower tile id wins
    batches[1].kept[0].confidence = 0.91;
    s = merge_same_class(batches, kSlide, PipelineConfig{});
    EXPECT_TRUE(by_id(s, "t01#00000").active());
    EXPECT_FALSE(by_id(s, "t02#00000").active());
    std::swap(batches[0], batches[1]);
    s = merge_same_class(batches, kSlide, PipelineConfig{});
    EXPECT_TRUE(by_id(s, "t01#00000").active());
}

TEST(MergeSameClass, DifferentClassesDoNotSuppress) {
    const TileSpec a = tile("t01", 0);
    std::vector<TileBatch> batches{{a, {pred(a, 0, InstanceClass::glomerulus, 0.9, rect(10, 10, 10, 10, "")),
                                        pred(a, 1, InstanceClass::artery, 0.8, rect(10, 10, 10, 10, ""))},
                                    {}}};
    EXPECT_EQ(merge_same_class(batches, kSlide, PipelineConfig{}).active_count(), 2u);
}

TEST(MergeSameClass, ChainsResolveInConfidenceOrder) {
    // IoU(a,b) = IoU(b,c) = 7/13, IoU(a,c) = 0.25: b goes, c stays
    const TileSpec t = tile("t00000", 0);
    std::vector<TileBatch> batches{{t,
                                    {pred(t, 0, InstanceClass::glomerulus, 0.9, rect(100, 100, 10, 10, "")),
                                     pred(t, 1, InstanceClass::glomerulus, 0.8, rect(103, 100, 10, 10, "")),
                                     pred(t, 2, InstanceClass::glomerulus, 0.7, rect(106, 100, 10, 10, ""))},
                                    {}}};
    const auto s = merge_same_class(batches, kSlide, PipelineConfig{});
    EXPECT_TRUE(s.candidates[0].active());
    EXPECT_EQ(s.candidates[1].suppressed_by, "t00000#00000");
    EXPECT_TRUE(s.candidates[2].active());
}

TEST(MergeSameClass, EdgeFilteredAreCarriedButInactive) {
    const TileSpec t = tile("t00000", 0);
    std::vector<TileBatch> batches{{t, {}, {pred(t, 0, InstanceClass::glomerulus, 0.9, rect(0, 100, 10, 10, ""))}}};
    const auto s = merge_same_class(batches, kSlide, PipelineConfig{});
    ASSERT_EQ(s.candidates.size(), 1u);
    EXPECT_EQ(s.candidates[0].status, CandidateStatus::edge_filtered);
}

TEST(MergeSameClass, DuplicatePredictionIsFormatError) {
    const TileSpec t = tile("t00000", 0);
    std::vector<TileBatch> batches{{t, {pred(t, 0, InstanceClass::glomerulus, 0.9, rect(1, 1, 2, 2, "")),
                                        pred(t, 0, InstanceClass::glomerulus, 0.8, rect(5, 5, 2, 2, ""))},
                                    {}}};
    EXPECT_THROW(merge_same_class(batches, kSlide, PipelineConfig{}), FormatError);
}

TEST(Filters, SmallInstances) {
    const PipelineConfig cfg;
    auto s = filter_small(set_of({cand("t#00000", InstanceClass::arteriole, 0.9, rect(0, 0, 4, 6, "")),
                                  cand("t#00001", InstanceClass::arteriole, 0.9, rect(50, 0, 5, 5, ""))}),
                          cfg);
    EXPECT_EQ(s.candidates[0].status, CandidateStatus::too_small);
    EXPECT_TRUE(s.candidates[1].active());
    EXPECT_EQ(filter_small(set_of({}), cfg).candidates.size(), 0u);
}

TEST(Filters, CrossClass) {
    const PipelineConfig cfg;
    // IoU 0.75: 30x10 inside 40x10
    auto s = remove_cross_class_overlaps(set_of({cand("t#00000", InstanceClass::artery, 0.9, rect(0, 0, 30, 10, "")),
                                                 cand("t#00001", InstanceClass::arteriole, 0.8, rect(0, 0, 40, 10, ""))}),
                                         cfg);
    EXPECT_EQ(s.candidates[0].status, CandidateStatus::cross_class_removed);
    EXPECT_EQ(s.candidates[1].status, CandidateStatus::cross_class_removed);
    // IoU 0.5: 20x10 inside 40x10
    s = remove_cross_class_overlaps(set_of({cand("t#00000", InstanceClass::artery, 0.9, rect(0, 0, 20, 10, "")),
                                            cand("t#00001", InstanceClass::arteriole, 0.8, rect(0, 0, 40, 10, ""))}),
                                    cfg);
    EXPECT_EQ(s.active_count(), 2u);
    // same class 0.9 untouched
    s = remove_cross_class_overlaps(set_of({cand("t#00000", InstanceClass::glomerulus, 0.9, rect(0, 0, 36, 10, "")),
                                            cand("t#00001", InstanceClass::glomerulus, 0.8, rect(0, 0, 40, 10, ""))}),
                                    cfg);
    EXPECT_EQ(s.active_count(), 2u);
}

TEST(Filters, ThresholdKeepsGreaterOrEqual) {
    auto s = apply_thresholds(set_of({cand("t#00000", InstanceClass::artery, 0.5, rect(0, 0, 9, 9, "")),
                                      cand("t#00001", InstanceClass::artery, 0.4999, rect(20, 0, 9, 9, ""))}),
                              ClassThresholds{0.5, 0.5, 0.5});
    EXPECT_TRUE(s.candidates[0].active());
    EXPECT_EQ(s.candidates[1].status, CandidateStatus::below_threshold);
}

namespace {

// Random predictions over a few tiles of a 1024 x 512 slide with 128 px tiles.
struct RandomScene {
    SlideGeometry geom{"s", 1024, 512, 2.0};
    PipelineConfig cfg;
    std::vector<TileInput> tiles;

    explicit RandomScene(std::uint64_t seed, int per_tile = 8) {
        cfg.tile_size = 128;
        cfg.model_input = 64;
        cfg.tile_overlap = 32;
        std::mt19937_64 rng(seed);
        const auto plan = plan_grid(geom, cfg);
        for (const auto& t : plan) {
            TileInput in{t, {}};
            for (int i = 0; i < per_tile; ++i) {
                auto bm = oracle::random_bitmap(rng, 4 + rng() % 20, 4 + rng() % 20);
                if (bm.count() == 0) bm.set(0, 0);
                const auto x = static_cast<std::int32_t>(rng() % (64 - bm.width + 1));
                const auto y = static_cast<std::int32_t>(rng() % (64 - bm.height + 1));
                // coarse confidences so ties happen
                const double conf = static_cast<double>(rng() % 8) / 8.0;
                in.predictions.push_back(TilePrediction{t.tile_id, static_cast<InstanceClass>(rng() % 3), conf,
                                                        crop_to_content(PlacedMask{rle_encode(bm), x, y, t.model_frame()}), i});
            }
            tiles.push_back(std::move(in));
        }
    }
};

}  // namespace

TEST(MergeProperties, OrderIndependence) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        RandomScene sc(seed);
        const auto ref = to_json(merge_slide(sc.geom, sc.tiles, sc.cfg, 1)).dump();
        std::mt19937_64 rng(seed * 77);
        for (int k = 0; k < 5; ++k) {
            auto tiles = sc.tiles;
            std::shuffle(tiles.begin(), tiles.end(), rng);
            for (auto& t : tiles) std::shuffle(t.predictions.begin(), t.predictions.end(), rng);
            EXPECT_EQ(to_json(merge_slide(sc.geom, tiles, sc.cfg, 1 + k)).dump(), ref);
        }
    }
}

TEST(MergeProperties, SuppressionMatchesPairwiseOracle) {
    for (std::uint64_t seed = 20; seed < 30; ++seed) {
        RandomScene sc(seed);
        const auto s = merge_slide(sc.geom, sc.tiles, sc.cfg, 2);
        // oracle: sweep in (confidence desc, id asc); suppressed by the first retained overlap
        std::vector<const InstanceCandidate*> order;
        for (const auto& c : s.candidates)
            if (c.status != CandidateStatus::edge_filtered) order.push_back(&c);
        std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) {
            return a->confidence != b->confidence ? a->confidence > b->confidence : a->candidate_id < b->candidate_id;
        });
        std::vector<const InstanceCandidate*> kept;
        for (const auto* c : order) {
            std::optional<std::string> by;
            for (const auto* k : kept)
                if (k->cls == c->cls && oracle::dense_iou(k->mask, c->mask) > sc.cfg.same_class_suppress_iou) {
                    by = k->candidate_id;
                    break;
                }
            if (by) {
                EXPECT_EQ(c->status, CandidateStatus::suppressed_same_class) << c->candidate_id;
                EXPECT_EQ(c->suppressed_by, by);
            } else {
                EXPECT_TRUE(c->active()) << c->candidate_id;
                kept.push_back(c);
            }
        }
    }
}

TEST(MergeProperties, ConfidenceMapConsistency) {
    // At every pixel the best active confidence equals the best over all merged-stage
    // instances whose suppressor also covers that pixel.
    for (std::uint64_t seed = 40; seed < 46; ++seed) {
        RandomScene sc(seed, 12);
        const auto s = merge_slide(sc.geom, sc.tiles, sc.cfg, 1);
        std::map<std::string, const InstanceCandidate*> ids;
        for (const auto& c : s.candidates) ids[c.candidate_id] = &c;
        for (InstanceClass cls : kAllClasses) {
            std::vector<double> act(static_cast<std::size_t>(sc.geom.width) * sc.geom.height, -1), all = act;
            auto paint = [&](std::vector<double>& m, const InstanceCandidate& c, const PlacedMask* also) {
                const Bitmap bm = rle_decode(c.mask.mask);
                const std::optional<ColumnSpans> other = also ? std::optional<ColumnSpans>(ColumnSpans(*also)) : std::nullopt;
                for (std::uint32_t y = 0; y < bm.height; ++y)
                    for (std::uint32_t x = 0; x < bm.width; ++x) {
                        if (!bm.at(x, y)) continue;
                        const std::int32_t px = c.mask.x + x, py = c.mask.y + y;
                        if (other && overlap_length(other->column(px), py, py + 1) == 0) continue;
                        auto& v = m[static_cast<std::size_t>(py) * sc.geom.width + px];
                        v = std::max(v, c.confidence);
                    }
            };
            for (const auto& c : s.candidates) {
                if (c.cls != cls) continue;
                if (c.active()) {
                    paint(act, c, nullptr);
                    paint(all, c, nullptr);
                } else if (c.status == CandidateStatus::suppressed_same_class) {
                    const auto* top = ids.at(*c.suppressed_by);
                    ASSERT_TRUE(top->active());
                    EXPECT_GE(top->confidence, c.confidence);
                    paint(all, c, &top->mask);
                }
            }
            EXPECT_EQ(act, all);
        }
    }
}

TEST(CascadeProperties, TraceOrderMonotoneAndIdempotent) {
    RandomScene sc(5, 14);
    auto merged = merge_slide(sc.geom, sc.tiles, sc.cfg, 1);
    const auto final_set = finish_slide(merged, ClassThresholds{0.25, 0.5, 0.375}, sc.cfg, 1);
    std::vector<std::string> stages;
    for (const auto& t : final_set.trace) stages.push_back(t.stage);
    EXPECT_EQ(stages, (std::vector<std::string>{"predictions", "edge_filter", "same_class_merge", "threshold", "small_filter",
                                                "cross_class_removal"}));
    for (std::size_t i = 2; i < final_set.trace.size(); ++i) EXPECT_LE(final_set.trace[i].active, final_set.trace[i - 1].active);

    auto statuses = [](const SlideInstanceSet& s) {
        std::vector<CandidateStatus> v;
        for (const auto& c : s.candidates) v.push_back(c.status);
        return v;
    };
    EXPECT_EQ(statuses(filter_small(final_set, sc.cfg)), statuses(final_set));
    EXPECT_EQ(statuses(remove_cross_class_overlaps(final_set, sc.cfg)), statuses(final_set));
    EXPECT_EQ(statuses(apply_thresholds(final_set, ClassThresholds{0.25, 0.5, 0.375})), statuses(final_set));
}

TEST(MergeSlide, RejectsForeignFrames) {
    const TileSpec t = tile("t00000", 0);
    std::vector<TileInput> in{{t, {TilePrediction{"t00000", InstanceClass::artery, 0.5, rect(0, 0, 4, 4, "slide:s"), 0}}}};
    EXPECT_THROW(merge_slide(kSlide, in, PipelineConfig{}), FrameError);
}
