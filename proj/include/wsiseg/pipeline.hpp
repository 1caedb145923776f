#pragma once

// Stage orchestration: per-slide post-processing, threshold selection, DCT
// training data, the threshold-comparison harness, and file-driven runs.

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "dct.hpp"
#include "errors.hpp"
#include "formats.hpp"
#include "geojson.hpp"
#include "geometry.hpp"
#include "image_io.hpp"
#include "merge.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "report.hpp"
#include "synth.hpp"
#include "tiling.hpp"
#include "tissue.hpp"

namespace wsiseg {

namespace fs = std::filesystem;

template <typename F>
auto run_stage(const std::string& stage, const std::string& slide_id, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        rethrow_with_context(e, "slide '" + slide_id + "', stage " + stage);
    }
}

// ---------------------------------------------------------------------------
// Per-slide stages

struct TileInput {
    TileSpec tile;
    std::vector<TilePrediction> predictions;
};

// Edge filter per tile, then same-class merge across the slide.
inline SlideInstanceSet merge_slide(const SlideGeometry& geom, std::vector<TileInput> tiles, const PipelineConfig& cfg, unsigned workers = 0) {
    for (const auto& t : tiles) {
        if (t.tile.slide_id != geom.slide_id)
            throw GeometryError("tile " + t.tile.tile_id + " belongs to slide '" + t.tile.slide_id + "'");
        for (const auto& p : t.predictions)
            if (p.mask.frame != t.tile.model_frame() || p.tile_id != t.tile.tile_id)
                throw FrameError("prediction " + candidate_id_for(p.tile_id, p.index_in_tile) + " is not in the model frame of " + t.tile.tile_id);
    }
    std::vector<TileBatch> batches(tiles.size());
    parallel_for(tiles.size(), [&](std::size_t i) {
        auto r = filter_edge_predictions(std::move(tiles[i].predictions), tiles[i].tile, cfg);
        batches[i] = TileBatch{tiles[i].tile, std::move(r.kept), std::move(r.edge_filtered)};
    }, workers);
    return merge_same_class(batches, geom, cfg, workers);
}

// Per-class threshold inputs from the post-merge active set. With truth, the match
// is taken on the small-filtered set, which the threshold commutes with.
inline std::vector<ThresholdInput> threshold_inputs(const SlideInstanceSet& merged, const SlideTruth* truth, const PipelineConfig& cfg) {
    std::vector<ThresholdInput> out;
    std::optional<SlideEvaluation> ev;
    if (truth) ev = evaluate_slide(filter_small(merged, cfg), *truth, cfg);
    for (InstanceClass cls : kAllClasses) {
        ThresholdInput in{merged.slide_id(), cls, {}, std::nullopt};
        for (const auto& c : merged.candidates)
            if (c.active() && c.cls == cls) in.confidences.push_back(c.confidence);
        if (ev) in.match = ev->classes[class_index(cls)].match;
        out.push_back(std::move(in));
    }
    return out;
}

inline ClassThresholds thresholds_for(const std::vector<ThresholdDecision>& ds, const std::string& slide_id) {
    ClassThresholds t{};
    std::array<bool, kNumClasses> seen{};
    for (const auto& d : ds) {
        if (d.slide_id != slide_id) continue;
        t[class_index(d.cls)] = d.threshold;
        seen[class_index(d.cls)] = true;
    }
    for (bool s : seen)
        if (!s) throw ConfigError("missing threshold decision for slide '" + slide_id + "'");
    return t;
}

// threshold -> small filter -> cross-class removal
inline SlideInstanceSet finish_slide(SlideInstanceSet merged, const ClassThresholds& t, const PipelineConfig& cfg, unsigned workers = 0) {
    return remove_cross_class_overlaps(filter_small(apply_thresholds(std::move(merged), t), cfg), cfg, workers);
}

// ---------------------------------------------------------------------------
// Labelled slides, DCT training and mode sweeps

struct LabeledSlide {
    SlideInstanceSet merged;
    SlideTruth truth;
};

// One example per (slide, class) whose optimistic threshold is informative.
inline std::vector<DctExample> dct_examples(const std::vector<LabeledSlide>& slides, const PipelineConfig& cfg) {
    std::vector<DctExample> out;
    for (const auto& s : slides) {
        for (const auto& in : threshold_inputs(s.merged, &s.truth, cfg)) {
            const F1Threshold t = max_f1_threshold(*in.match);
            if (t.flag == ThresholdFlag::no_signal || t.flag == ThresholdFlag::degenerate) continue;
            out.push_back(DctExample{featurize(in.confidences, in.cls, static_cast<std::size_t>(cfg.dct_bins), in.slide_id).vector(), t.threshold});
        }
    }
    return out;
}

struct ModeRun {
    ThresholdMode mode;
    std::vector<ThresholdDecision> decisions;
    std::vector<SlideInstanceSet> finals;
    std::vector<SlideEvaluation> evaluations;
    MetricsReport report;
};

inline ModeRun run_mode(const std::vector<LabeledSlide>& slides, const ThresholdMode& mode, const DctModel* model,
                        const PipelineConfig& cfg, unsigned workers = 0) {
    ModeRun r;
    r.mode = mode;
    r.finals.resize(slides.size());
    r.evaluations.resize(slides.size());
    std::vector<std::vector<ThresholdDecision>> per(slides.size());
    parallel_for(slides.size(), [&](std::size_t i) {
        const auto& s = slides[i];
        const auto inputs = threshold_inputs(s.merged, mode.kind == ThresholdModeKind::optimistic ? &s.truth : nullptr, cfg);
        per[i] = decide_thresholds(mode, model, inputs, cfg);
        r.finals[i] = finish_slide(s.merged, thresholds_for(per[i], s.merged.slide_id()), cfg, 1);
        r.evaluations[i] = evaluate_slide(r.finals[i], s.truth, cfg);
    }, workers);
    std::vector<ClassSlideMetrics> metrics;
    for (std::size_t i = 0; i < slides.size(); ++i) {
        r.decisions.insert(r.decisions.end(), per[i].begin(), per[i].end());
        for (const auto& ce : r.evaluations[i].classes) metrics.push_back(ce.metrics);
    }
    r.report = aggregate_report(std::move(metrics), cfg, mode.label());
    return r;
}

struct Split {
    std::string name;
    std::vector<LabeledSlide> slides;
};

struct Table1Run {
    Table1 table;
    std::vector<std::vector<MetricsReport>> reports;  // [split][mode]
    std::vector<DctModel> models;                     // models[k] was trained without split k
    std::vector<std::vector<double>> loss_traces;
};

// mF1 for the four static thresholds, the DCT and the optimistic bound on every
// split. The DCT applied to a split is trained on all other splits.
inline Table1Run table1_harness(const std::vector<Split>& splits, const PipelineConfig& cfg, const TrainParams& hp, unsigned workers = 0) {
    if (splits.size() < 2) throw ConfigError("the threshold harness needs at least two splits");
    Table1Run out;
    out.table.modes = table1_modes();
    for (const auto& sp : splits) {
        if (sp.slides.empty()) throw ConfigError("split '" + sp.name + "' has no slides");
        out.table.splits.push_back(sp.name);
    }
    for (std::size_t k = 0; k < splits.size(); ++k) {
        std::vector<DctExample> train;
        for (std::size_t o = 0; o < splits.size(); ++o) {
            if (o == k) continue;
            auto ex = dct_examples(splits[o].slides, cfg);
            train.insert(train.end(), ex.begin(), ex.end());
        }
        auto tr = train_dct(train, hp);
        out.models.push_back(std::move(tr.model));
        out.loss_traces.push_back(std::move(tr.loss_trace));
    }
    for (std::size_t k = 0; k < splits.size(); ++k) {
        std::vector<MetricsReport> reps;
        std::vector<std::array<double, kNumClasses>> grid;
        for (const auto& mode : out.table.modes) {
            auto run = run_mode(splits[k].slides, mode, &out.models[k], cfg, workers);
            std::array<double, kNumClasses> row{};
            for (std::size_t c = 0; c < kNumClasses; ++c) row[c] = run.report.means[c].mf1;
            grid.push_back(row);
            reps.push_back(std::move(run.report));
        }
        out.table.mf1.push_back(std::move(grid));
        out.reports.push_back(std::move(reps));
    }
    return out;
}

// Generates, simulates and merges one synthetic slide.
inline LabeledSlide labeled_synth_slide(const SynthParams& p, const PipelineConfig& cfg, unsigned workers = 0) {
    const SynthSlide s = generate_slide(p, cfg);
    auto outputs = simulate_predictions(s, s.tiles, workers);
    std::vector<TileInput> tiles;
    for (auto& o : outputs) tiles.push_back(TileInput{o.tile, std::move(o.predictions)});
    return LabeledSlide{merge_slide(s.geometry, std::move(tiles), cfg, workers), SlideTruth{p.slide_id, s.gts, {}}};
}

// ---------------------------------------------------------------------------
// Run files

struct SlideEntry {
    std::string slide_id;
    std::int32_t width = 0;
    std::int32_t height = 0;
    double level0_factor = 2.0;
    std::string predictions;  // directory of <tile_id>.jsonl
    std::string tile_plan;    // optional; planned from the thumbnail otherwise
    std::string thumbnail;    // optional
    std::string thumbnail_kind = "labels";  // "labels" or "gray" (Otsu, dark tissue)
    std::string annotations;  // optional GeoJSON with ground truth / Ignore

    SlideGeometry geometry() const { return SlideGeometry{slide_id, width, height, level0_factor}; }
};

struct RunConfig {
    PipelineConfig pipeline;
    std::vector<SlideEntry> slides;
    std::string output_dir;
    ThresholdMode mode = ThresholdMode::fixed(0.5);
    std::string dct_model;
    std::vector<double> sweep;  // extra static thresholds evaluated for sensitivity
    std::uint64_t seed = 0;
    unsigned workers = 0;
    nlohmann::json echo;  // the run file as read
};

namespace detail {

inline std::string resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) return p;
    const fs::path q(p);
    return (q.is_absolute() ? q : base / q).lexically_normal().string();
}

inline void require_path(const std::string& p, const std::string& what) {
    if (!p.empty() && !fs::exists(p)) throw ConfigError(what + " '" + p + "' does not exist");
}

}  // namespace detail

// Relative paths are resolved against `base`; every referenced input must exist.
inline RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base = {}) {
    RunConfig rc;
    rc.echo = j;
    try {
        detail::check_version(j, "run file");
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            const auto& v = it.value();
            if (k == "format_version") continue;
            else if (k == "pipeline") rc.pipeline = v.get<PipelineConfig>();
            else if (k == "output_dir") rc.output_dir = detail::resolve(base, v.get<std::string>());
            else if (k == "threshold_mode") {
                const auto m = v.get<std::string>();
                if (m == "static") rc.mode.kind = ThresholdModeKind::static_value;
                else if (m == "dynamic") rc.mode = ThresholdMode::dynamic();
                else if (m == "optimistic") rc.mode = ThresholdMode::optimistic();
                else throw ConfigError("unknown threshold_mode '" + m + "'");
            } else if (k == "static_threshold") rc.mode.value = v.get<double>();
            else if (k == "dct_model") rc.dct_model = detail::resolve(base, v.get<std::string>());
            else if (k == "sweep") rc.sweep = v.get<std::vector<double>>();
            else if (k == "seed") rc.seed = v.get<std::uint64_t>();
            else if (k == "workers") rc.workers = v.get<unsigned>();
            else if (k == "slides") {
                for (const auto& js : v) {
                    SlideEntry e;
                    for (auto si = js.begin(); si != js.end(); ++si) {
                        const std::string& sk = si.key();
                        const auto& sv = si.value();
                        if (sk == "slide_id") e.slide_id = sv.get<std::string>();
                        else if (sk == "width") e.width = sv.get<std::int32_t>();
                        else if (sk == "height") e.height = sv.get<std::int32_t>();
                        else if (sk == "level0_factor") e.level0_factor = sv.get<double>();
                        else if (sk == "predictions") e.predictions = detail::resolve(base, sv.get<std::string>());
                        else if (sk == "tile_plan") e.tile_plan = detail::resolve(base, sv.get<std::string>());
                        else if (sk == "thumbnail") e.thumbnail = detail::resolve(base, sv.get<std::string>());
                        else if (sk == "thumbnail_kind") e.thumbnail_kind = sv.get<std::string>();
                        else if (sk == "annotations") e.annotations = detail::resolve(base, sv.get<std::string>());
                        else throw ConfigError("unknown slide key '" + sk + "'");
                    }
                    rc.slides.push_back(std::move(e));
                }
            } else throw ConfigError("unknown run key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad run file: ") + e.what());
    }
    rc.pipeline.validate();
    if (rc.output_dir.empty()) throw ConfigError("run file needs 'output_dir'");
    if (rc.slides.empty()) throw ConfigError("run file lists no slides");
    if (rc.mode.kind == ThresholdModeKind::static_value && !(rc.mode.value >= 0 && rc.mode.value <= 1))
        throw ConfigError("static_threshold must lie in [0,1]");
    if (rc.mode.kind == ThresholdModeKind::dynamic && rc.dct_model.empty()) throw ConfigError("dynamic mode needs 'dct_model'");
    for (double t : rc.sweep)
        if (!(t >= 0 && t <= 1)) throw ConfigError("sweep thresholds must lie in [0,1]");
    detail::require_path(rc.dct_model, "dct_model");
    std::map<std::string, int> ids;
    for (const auto& e : rc.slides) {
        if (e.slide_id.empty()) throw ConfigError("slide entry without slide_id");
        if (ids[e.slide_id]++) throw ConfigError("duplicate slide_id '" + e.slide_id + "'");
        e.geometry().validate();
        if (e.predictions.empty()) throw ConfigError("slide '" + e.slide_id + "' needs 'predictions'");
        if (e.thumbnail_kind != "labels" && e.thumbnail_kind != "gray")
            throw ConfigError("slide '" + e.slide_id + "': thumbnail_kind must be 'labels' or 'gray'");
        detail::require_path(e.predictions, "predictions directory");
        detail::require_path(e.tile_plan, "tile plan");
        detail::require_path(e.thumbnail, "thumbnail");
        detail::require_path(e.annotations, "annotations");
        if (rc.mode.kind == ThresholdModeKind::optimistic && e.annotations.empty())
            throw ConfigError("optimistic mode needs annotations for slide '" + e.slide_id + "'");
    }
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    return run_config_from_json(read_json_file(path), fs::path(path).parent_path());
}

inline std::optional<TissueMask> load_tissue(const SlideEntry& e) {
    if (e.thumbnail.empty()) return std::nullopt;
    if (e.thumbnail_kind == "gray") return otsu_tissue(e.slide_id, read_image(e.thumbnail), Polarity::tissue_dark);
    return aggregate_tissue(read_tissue_thumbnail(e.thumbnail, e.slide_id));
}

struct SlideRun {
    SlideEntry entry;
    std::vector<TileSpec> tiles;
    SlideInstanceSet merged;
    SlideInstanceSet final_set;
    std::optional<SlideTruth> truth;
    std::vector<ThresholdDecision> decisions;
    std::optional<SlideEvaluation> evaluation;
    Provenance provenance;
};

struct RunResult {
    std::vector<SlideRun> slides;
    std::optional<MetricsReport> report;
    std::vector<std::string> files;  // written, relative to output_dir
};

// Loads, merges and thresholds one slide; no files are written.
inline SlideRun process_slide(const SlideEntry& e, const RunConfig& rc, const DctModel* model, unsigned workers) {
    const PipelineConfig& cfg = rc.pipeline;
    SlideRun r;
    r.entry = e;
    r.provenance.config = cfg;
    r.provenance.extra["run"] = rc.echo;
    const SlideGeometry geom = e.geometry();
    const auto tissue = run_stage("tissue", e.slide_id, [&] {
        if (!e.thumbnail.empty()) r.provenance.add_file("thumbnail", e.thumbnail);
        return load_tissue(e);
    });
    r.tiles = run_stage("plan", e.slide_id, [&] {
        if (!e.tile_plan.empty()) {
            r.provenance.add_file("tile_plan", e.tile_plan);
            auto t = read_tile_plan(e.tile_plan);
            for (const auto& tile : t)
                if (tile.slide_id != e.slide_id || !geom.box().contains(tile.box()))
                    throw GeometryError("tile " + tile.tile_id + " does not fit slide '" + e.slide_id + "'");
            return t;
        }
        return plan_tiles(geom, tissue ? &*tissue : nullptr, cfg);
    });
    std::vector<TileInput> inputs = run_stage("ingest", e.slide_id, [&] {
        std::vector<TileInput> in(r.tiles.size());
        parallel_for(r.tiles.size(), [&](std::size_t i) {
            in[i].tile = r.tiles[i];
            const std::string path = (fs::path(e.predictions) / prediction_file_name(r.tiles[i].tile_id)).string();
            if (fs::exists(path)) in[i].predictions = read_predictions(path, r.tiles[i]);
        }, workers);
        for (const auto& t : r.tiles) {
            const std::string path = (fs::path(e.predictions) / prediction_file_name(t.tile_id)).string();
            if (fs::exists(path)) r.provenance.add_file("predictions/" + prediction_file_name(t.tile_id), path);
        }
        return in;
    });
    r.merged = run_stage("merge", e.slide_id, [&] { return merge_slide(geom, std::move(inputs), cfg, workers); });
    if (!e.annotations.empty()) {
        r.truth = run_stage("annotations", e.slide_id, [&] {
            r.provenance.add_file("annotations", e.annotations);
            const auto a = load_annotations(e.annotations, e.slide_id, geom.box());
            return SlideTruth{e.slide_id, ground_truths(a), a.ignore};
        });
    }
    if (model) r.provenance.add_file("dct_model", rc.dct_model);
    r.decisions = run_stage("threshold", e.slide_id, [&] {
        const auto in = threshold_inputs(r.merged, rc.mode.kind == ThresholdModeKind::optimistic ? &*r.truth : nullptr, cfg);
        return decide_thresholds(rc.mode, model, in, cfg);
    });
    r.final_set = run_stage("filter", e.slide_id, [&] { return finish_slide(r.merged, thresholds_for(r.decisions, e.slide_id), cfg, workers); });
    if (r.truth) r.evaluation = run_stage("metrics", e.slide_id, [&] { return evaluate_slide(r.final_set, *r.truth, cfg); });
    return r;
}

inline std::string audit_log(const std::vector<SlideRun>& slides, const nlohmann::json& provenance) {
    std::string s = provenance_comment(provenance) + "slide_id\tstage\tactive\n";
    for (const auto& r : slides)
        for (const auto& t : r.final_set.trace) s += r.entry.slide_id + "\t" + t.stage + "\t" + std::to_string(t.active) + "\n";
    return s;
}

// Runs every slide, then writes per-slide outputs and the run-level reports.
// manifest.json, listing every file with its hash, is written last.
inline RunResult run_pipeline(const RunConfig& rc) {
    const unsigned workers = rc.workers == 0 ? default_workers() : rc.workers;
    std::optional<DctModel> model;
    if (rc.mode.kind == ThresholdModeKind::dynamic) model = read_json_file(rc.dct_model).get<DctModel>();

    RunResult res;
    res.slides.resize(rc.slides.size());
    // Slides run one after another; each stage uses the worker pool internally.
    for (std::size_t i = 0; i < rc.slides.size(); ++i) res.slides[i] = process_slide(rc.slides[i], rc, model ? &*model : nullptr, workers);
    std::sort(res.slides.begin(), res.slides.end(), [](const auto& a, const auto& b) { return a.entry.slide_id < b.entry.slide_id; });

    Provenance run_prov;
    run_prov.config = rc.pipeline;
    run_prov.extra["run"] = rc.echo;
    for (const auto& s : res.slides)
        for (const auto& [k, h] : s.provenance.inputs) run_prov.inputs[s.entry.slide_id + "/" + k] = h;
    const nlohmann::json prov = run_prov.to_json();

    std::vector<std::pair<std::string, std::string>> files;  // relative path, bytes
    std::vector<ThresholdDecision> decisions;
    std::vector<ClassSlideMetrics> metrics;
    std::vector<PrCurve> curves;
    std::vector<LabeledSlide> labeled;
    for (const auto& s : res.slides) {
        const std::string dir = s.entry.slide_id + "/";
        const nlohmann::json sp = s.provenance.to_json();
        files.emplace_back(dir + "tile_plan.jsonl", tile_plan_jsonl(s.tiles, sp));
        files.emplace_back(dir + "instances.json", to_json(s.final_set, sp).dump(1) + "\n");
        files.emplace_back(dir + "predictions.geojson", export_geojson(s.final_set, sp).dump(1) + "\n");
        decisions.insert(decisions.end(), s.decisions.begin(), s.decisions.end());
        if (s.evaluation) {
            for (const auto& ce : s.evaluation->classes) {
                metrics.push_back(ce.metrics);
                curves.push_back(ce.curve);
            }
            labeled.push_back(LabeledSlide{s.merged, *s.truth});
        }
    }
    files.emplace_back("thresholds.csv", thresholds_csv(decisions, prov));
    files.emplace_back("audit.log", audit_log(res.slides, prov));
    if (!metrics.empty()) {
        res.report = aggregate_report(metrics, rc.pipeline, rc.mode.label());
        files.emplace_back("metrics.json", to_json(*res.report, prov).dump(1) + "\n");
        files.emplace_back("metrics.csv", metrics_csv(*res.report, prov));
        files.emplace_back("table2.md", table2_markdown({{"Run", *res.report}}, prov));
        std::array<PrCurve, kNumClasses> mean;
        for (InstanceClass c : kAllClasses) mean[class_index(c)] = aggregate_pr_curve(curves, c);
        std::vector<PrCurve> all = curves;
        all.insert(all.end(), mean.begin(), mean.end());
        files.emplace_back("pr_curves.csv", pr_curves_csv(all, prov));
        files.emplace_back("pr_curves.svg", pr_svg(curves, mean, prov));
        if (!rc.sweep.empty() && labeled.size() == res.slides.size()) {
            Table1 t;
            t.splits = {"Run"};
            std::vector<std::array<double, kNumClasses>> grid;
            for (double v : rc.sweep) t.modes.push_back(ThresholdMode::fixed(v));
            if (model) t.modes.push_back(ThresholdMode::dynamic());
            t.modes.push_back(ThresholdMode::optimistic());
            for (const auto& m : t.modes) {
                const auto run = run_mode(labeled, m, model ? &*model : nullptr, rc.pipeline, workers);
                std::array<double, kNumClasses> row{};
                for (std::size_t c = 0; c < kNumClasses; ++c) row[c] = run.report.means[c].mf1;
                grid.push_back(row);
            }
            t.mf1.push_back(std::move(grid));
            files.emplace_back("sweep.md", table1_markdown(t, prov));
        }
    }

    nlohmann::json manifest = {{"format_version", kFormatVersion}, {"provenance", prov}, {"files", nlohmann::json::array()}};
    for (const auto& [rel, bytes] : files) {
        write_file((fs::path(rc.output_dir) / rel).string(), bytes);
        manifest["files"].push_back({{"path", rel}, {"sha256", sha256_hex(bytes)}});
        res.files.push_back(rel);
    }
    write_json_file((fs::path(rc.output_dir) / "manifest.json").string(), manifest);
    res.files.push_back("manifest.json");
    return res;
}

// ---------------------------------------------------------------------------
// Synthetic slide directories

// Writes the files run_pipeline ingests and returns the matching slide entry
// (paths relative to `root`).
inline SlideEntry write_synth_slide(const std::string& root, const SynthSlide& s, const std::vector<TileOutput>& outputs) {
    const std::string id = s.geometry.slide_id;
    const fs::path dir = fs::path(root) / id;
    std::error_code ec;
    fs::create_directories(dir / "predictions", ec);
    if (ec) throw IoError("cannot create '" + (dir / "predictions").string() + "': " + ec.message());
    Provenance prov;
    prov.extra["synth"] = s.params;
    const nlohmann::json pj = prov.to_json();
    write_tissue_thumbnail((dir / "thumbnail.png").string(), s.thumbnail);
    write_json_file((dir / "annotations.geojson").string(), export_annotations(s.gts, {}, {}, pj));
    write_file((dir / "tile_plan.jsonl").string(), tile_plan_jsonl(s.tiles, pj));
    for (const auto& o : outputs)
        write_file((dir / "predictions" / prediction_file_name(o.tile.tile_id)).string(), predictions_jsonl(o.predictions, o.tile, pj));
    write_json_file((dir / "truth.json").string(), truth_manifest_json(s, outputs));
    SlideEntry e;
    e.slide_id = id;
    e.width = s.geometry.width;
    e.height = s.geometry.height;
    e.level0_factor = s.geometry.level0_factor;
    e.predictions = id + "/predictions";
    e.tile_plan = id + "/tile_plan.jsonl";
    e.thumbnail = id + "/thumbnail.png";
    e.annotations = id + "/annotations.geojson";
    return e;
}

inline nlohmann::json slide_entry_json(const SlideEntry& e) {
    nlohmann::json j = {{"slide_id", e.slide_id}, {"width", e.width}, {"height", e.height}, {"level0_factor", e.level0_factor},
                        {"predictions", e.predictions}};
    if (!e.tile_plan.empty()) j["tile_plan"] = e.tile_plan;
    if (!e.thumbnail.empty()) {
        j["thumbnail"] = e.thumbnail;
        j["thumbnail_kind"] = e.thumbnail_kind;
    }
    if (!e.annotations.empty()) j["annotations"] = e.annotations;
    return j;
}

}  // namespace wsiseg
