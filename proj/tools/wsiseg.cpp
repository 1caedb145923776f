// wsiseg command-line front end.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wsiseg/wsiseg.hpp"

using namespace wsiseg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

PipelineConfig load_config(const std::string& path) {
    if (path.empty()) return {};
    return read_json_file(path).get<PipelineConfig>();
}

std::optional<TissueMask> tissue_from(const std::string& path, const std::string& kind, const std::string& slide_id, Polarity pol) {
    if (path.empty()) return std::nullopt;
    if (kind == "gray") return otsu_tissue(slide_id, read_image(path), pol);
    if (kind != "labels") throw ConfigError("thumbnail kind must be 'labels' or 'gray'");
    return aggregate_tissue(read_tissue_thumbnail(path, slide_id));
}

SlideInstanceSet read_instances(const std::string& path) { return instance_set_from_json(read_json_file(path)); }

SlideTruth read_truth(const std::string& path, const SlideGeometry& g) {
    const auto a = load_annotations(path, g.slide_id, g.box());
    return SlideTruth{g.slide_id, ground_truths(a), a.ignore};
}

void require_pairs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.size() != b.size()) throw ConfigError("--instances and --annotations must be given the same number of times");
}

void print_table1(const Table1& t) { std::cout << table1_markdown(t); }

std::vector<LabeledSlide> labeled_from_run(const std::string& run_path) {
    RunConfig rc = load_run_config(run_path);
    rc.mode = ThresholdMode::fixed(0.5);
    const unsigned workers = rc.workers == 0 ? default_workers() : rc.workers;
    std::vector<LabeledSlide> out;
    for (const auto& e : rc.slides) {
        if (e.annotations.empty()) throw ConfigError("slide '" + e.slide_id + "' in " + run_path + " has no annotations");
        SlideRun r = process_slide(e, rc, nullptr, workers);
        out.push_back(LabeledSlide{std::move(r.merged), std::move(*r.truth)});
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Whole-slide instance segmentation post-processing and evaluation"};
    app.require_subcommand(1);
    std::string config_path;
    unsigned workers = 0;
    app.add_option("--config", config_path, "pipeline config JSON")->check(CLI::ExistingFile);
    app.add_option("--workers", workers, "worker threads (0 = all cores)");

    // plan
    auto* plan = app.add_subcommand("plan", "tile grid for a slide, gated by tissue");
    std::string slide_id, thumb, thumb_kind = "labels", out;
    std::int32_t width = 0, height = 0;
    plan->add_option("--slide-id", slide_id)->required();
    plan->add_option("--width", width)->required();
    plan->add_option("--height", height)->required();
    plan->add_option("--thumbnail", thumb)->check(CLI::ExistingFile);
    plan->add_option("--thumbnail-kind", thumb_kind)->check(CLI::IsMember({"labels", "gray"}));
    plan->add_option("-o,--out", out)->required();

    // tissue
    auto* tissue = app.add_subcommand("tissue", "binary tissue mask from a thumbnail");
    std::string polarity = "dark";
    tissue->add_option("--thumbnail", thumb)->required()->check(CLI::ExistingFile);
    tissue->add_option("--kind", thumb_kind)->check(CLI::IsMember({"labels", "gray"}));
    tissue->add_option("--polarity", polarity)->check(CLI::IsMember({"dark", "light"}));
    tissue->add_option("-o,--out", out)->required();

    // merge
    auto* merge = app.add_subcommand("merge", "edge filter and same-class merge of per-tile predictions");
    std::string tile_plan, pred_dir;
    merge->add_option("--slide-id", slide_id)->required();
    merge->add_option("--width", width)->required();
    merge->add_option("--height", height)->required();
    merge->add_option("--tile-plan", tile_plan)->required()->check(CLI::ExistingFile);
    merge->add_option("--predictions", pred_dir)->required()->check(CLI::ExistingDirectory);
    merge->add_option("-o,--out", out)->required();

    // dct-train
    auto* train = app.add_subcommand("dct-train", "train the dynamic threshold network on labelled merged sets");
    std::vector<std::string> inst_paths, ann_paths;
    TrainParams hp;
    std::string loss_out;
    train->add_option("--instances", inst_paths, "merged instance sets")->required()->check(CLI::ExistingFile);
    train->add_option("--annotations", ann_paths, "matching annotation GeoJSON files")->required()->check(CLI::ExistingFile);
    train->add_option("--seed", hp.seed);
    train->add_option("--epochs", hp.epochs);
    train->add_option("--lr", hp.learning_rate);
    train->add_option("--loss-trace", loss_out, "CSV of the training loss per epoch");
    train->add_option("-o,--out", out)->required();

    // dct-apply
    auto* apply = app.add_subcommand("dct-apply", "threshold a merged set, then run the remaining filters");
    std::string model_path, thresholds_out, in_path;
    double static_t = -1.0;
    auto* model_opt = apply->add_option("--model", model_path, "DCT model JSON")->check(CLI::ExistingFile);
    apply->add_option("--static", static_t, "fixed threshold instead of a model")->excludes(model_opt);
    apply->add_option("--instances", in_path)->required()->check(CLI::ExistingFile);
    apply->add_option("--thresholds", thresholds_out, "CSV of the chosen thresholds");
    apply->add_option("-o,--out", out)->required();

    // eval
    auto* eval = app.add_subcommand("eval", "metrics of final instance sets against annotations");
    std::string csv_out;
    eval->add_option("--instances", inst_paths)->required()->check(CLI::ExistingFile);
    eval->add_option("--annotations", ann_paths)->required()->check(CLI::ExistingFile);
    eval->add_option("--csv", csv_out);
    eval->add_option("-o,--out", out)->required();

    // table1
    auto* t1 = app.add_subcommand("table1", "mF1 of static, dynamic and optimistic thresholds per split");
    std::vector<std::string> run_paths;
    int synth_slides = 0, splits = 2;
    std::uint64_t seed = 1;
    t1->add_option("--run", run_paths, "one run file per split (all slides annotated)")->check(CLI::ExistingFile);
    t1->add_option("--synthetic", synth_slides, "use this many synthetic benchmark slides instead");
    t1->add_option("--splits", splits, "split count for --synthetic");
    t1->add_option("--seed", seed);
    t1->add_option("--epochs", hp.epochs);
    t1->add_option("-o,--out", out, "output directory")->required();

    // synth
    auto* syn = app.add_subcommand("synth", "synthetic slides, predictions and a run file");
    std::string params_path, preset = "default", prefix = "synth";
    int count = 1;
    bool avoid_seams = false;
    syn->add_option("--params", params_path, "SynthParams JSON")->check(CLI::ExistingFile);
    syn->add_option("--preset", preset)->check(CLI::IsMember({"default", "benchmark"}));
    syn->add_option("--seed", seed);
    syn->add_option("--count", count);
    syn->add_option("--prefix", prefix, "slide id prefix");
    syn->add_flag("--avoid-seams", avoid_seams);
    syn->add_option("-o,--out", out, "output directory")->required();

    // export
    auto* exp = app.add_subcommand("export", "active instances of a set as GeoJSON");
    exp->add_option("--instances", in_path)->required()->check(CLI::ExistingFile);
    exp->add_option("-o,--out", out)->required();

    // run
    auto* run = app.add_subcommand("run", "full pipeline driven by a run file");
    std::string run_path;
    run->add_option("run_file", run_path, "run JSON")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return static_cast<int>(ErrorFamily::configuration);
    }

    try {
        PipelineConfig cfg = load_config(config_path);
        if (*plan) {
            const SlideGeometry g{slide_id, width, height, 2.0};
            const auto tm = tissue_from(thumb, thumb_kind, slide_id, Polarity::tissue_dark);
            const auto tiles = plan_tiles(g, tm ? &*tm : nullptr, cfg);
            Provenance prov;
            prov.config = cfg;
            if (!thumb.empty()) prov.add_file(thumb);
            write_file(out, tile_plan_jsonl(tiles, prov.to_json()));
            std::printf("%zu tiles (grid %zu)\n", tiles.size(), plan_grid(g, cfg).size());
        } else if (*tissue) {
            const auto tm = tissue_from(thumb, thumb_kind, "thumbnail", polarity == "dark" ? Polarity::tissue_dark : Polarity::tissue_light);
            write_image(out, tissue_mask_image(*tm));
            std::printf("tissue fraction %.4f\n", static_cast<double>(tm->mask.count()) / static_cast<double>(tm->mask.bits.size()));
        } else if (*merge) {
            const SlideGeometry g{slide_id, width, height, 2.0};
            Provenance prov;
            prov.config = cfg;
            prov.add_file("tile_plan", tile_plan);
            std::vector<TileInput> inputs;
            for (const auto& t : read_tile_plan(tile_plan)) {
                const std::string p = (fs::path(pred_dir) / prediction_file_name(t.tile_id)).string();
                TileInput in{t, {}};
                if (fs::exists(p)) {
                    in.predictions = read_predictions(p, t);
                    prov.add_file("predictions/" + prediction_file_name(t.tile_id), p);
                }
                inputs.push_back(std::move(in));
            }
            const auto set = run_stage("merge", slide_id, [&] { return merge_slide(g, std::move(inputs), cfg, workers); });
            write_json_file(out, to_json(set, prov.to_json()));
            std::printf("%zu candidates, %zu active\n", set.candidates.size(), set.active_count());
        } else if (*train) {
            require_pairs(inst_paths, ann_paths);
            std::vector<LabeledSlide> slides;
            for (std::size_t i = 0; i < inst_paths.size(); ++i) {
                auto set = read_instances(inst_paths[i]);
                auto truth = read_truth(ann_paths[i], set.geometry);
                slides.push_back(LabeledSlide{std::move(set), std::move(truth)});
            }
            const auto examples = dct_examples(slides, cfg);
            const auto tr = train_dct(examples, hp);
            write_json_file(out, tr.model);
            if (!loss_out.empty()) {
                std::string s = "epoch,loss\n";
                for (std::size_t e = 0; e < tr.loss_trace.size(); ++e) s += std::to_string(e) + "," + fmt_num(tr.loss_trace[e]) + "\n";
                write_file(loss_out, s);
            }
            std::printf("%zu examples, loss %.6g -> %.6g\n", examples.size(), tr.loss_trace.front(), tr.loss_trace.back());
        } else if (*apply) {
            const auto merged = read_instances(in_path);
            std::optional<DctModel> model;
            ThresholdMode mode = ThresholdMode::fixed(static_t);
            if (!model_path.empty()) {
                model = read_json_file(model_path).get<DctModel>();
                mode = ThresholdMode::dynamic();
            } else if (static_t < 0) {
                throw ConfigError("dct-apply needs --model or --static");
            }
            const auto decisions = decide_thresholds(mode, model ? &*model : nullptr, threshold_inputs(merged, nullptr, merged.config), merged.config);
            const auto final_set = finish_slide(merged, thresholds_for(decisions, merged.slide_id()), merged.config, workers);
            Provenance prov;
            prov.config = merged.config;
            prov.add_file("instances", in_path);
            if (model) prov.add_file("dct_model", model_path);
            write_json_file(out, to_json(final_set, prov.to_json()));
            if (!thresholds_out.empty()) write_file(thresholds_out, thresholds_csv(decisions, prov.to_json()));
            for (const auto& d : decisions) std::printf("%s %s %.6f\n", d.slide_id.c_str(), std::string(class_name(d.cls)).c_str(), d.threshold);
        } else if (*eval) {
            require_pairs(inst_paths, ann_paths);
            std::vector<ClassSlideMetrics> metrics;
            Provenance prov;
            prov.config = cfg;
            for (std::size_t i = 0; i < inst_paths.size(); ++i) {
                const auto set = read_instances(inst_paths[i]);
                const auto ev = evaluate_slide(set, read_truth(ann_paths[i], set.geometry), cfg);
                for (const auto& ce : ev.classes) metrics.push_back(ce.metrics);
                prov.add_file(set.slide_id() + "/instances", inst_paths[i]);
                prov.add_file(set.slide_id() + "/annotations", ann_paths[i]);
            }
            const auto rep = aggregate_report(metrics, cfg);
            write_json_file(out, to_json(rep, prov.to_json()));
            if (!csv_out.empty()) write_file(csv_out, metrics_csv(rep, prov.to_json()));
            std::cout << table2_markdown({{"Eval", rep}});
        } else if (*t1) {
            std::vector<Split> sp;
            Provenance prov;
            prov.config = cfg;
            if (synth_slides > 0) {
                if (!run_paths.empty()) throw ConfigError("use either --run or --synthetic");
                if (splits < 2 || synth_slides < splits) throw ConfigError("--synthetic needs at least --splits slides and 2 splits");
                sp.resize(static_cast<std::size_t>(splits));
                for (int k = 0; k < splits; ++k) sp[k].name = "split" + std::to_string(k + 1);
                for (int i = 0; i < synth_slides; ++i) {
                    char id[32];
                    std::snprintf(id, sizeof id, "bench%03d", i);
                    sp[static_cast<std::size_t>(i % splits)].slides.push_back(labeled_synth_slide(SynthParams::benchmark(seed + i, id), cfg, workers));
                }
                prov.extra["synthetic"] = {{"slides", synth_slides}, {"splits", splits}, {"seed", seed}};
            } else {
                for (const auto& p : run_paths) {
                    sp.push_back(Split{fs::path(p).stem().string(), labeled_from_run(p)});
                    prov.add_file(p);
                }
            }
            const auto res = table1_harness(sp, cfg, hp, workers);
            const json pj = prov.to_json();
            write_file((fs::path(out) / "table1.md").string(), table1_markdown(res.table, pj));
            json grid = json::array();
            for (std::size_t s = 0; s < res.table.splits.size(); ++s)
                for (std::size_t m = 0; m < res.table.modes.size(); ++m)
                    for (InstanceClass c : kAllClasses)
                        grid.push_back({{"split", res.table.splits[s]},
                                        {"mode", res.table.modes[m].label()},
                                        {"class", class_name(c)},
                                        {"mF1", res.table.mf1[s][m][class_index(c)]}});
            write_json_file((fs::path(out) / "table1.json").string(), {{"format_version", kFormatVersion}, {"provenance", pj}, {"grid", grid}});
            for (std::size_t k = 0; k < res.models.size(); ++k)
                write_json_file((fs::path(out) / ("dct_without_" + res.table.splits[k] + ".json")).string(), res.models[k]);
            print_table1(res.table);
        } else if (*syn) {
            json entries = json::array();
            for (int i = 0; i < count; ++i) {
                char id[64];
                std::snprintf(id, sizeof id, "%s%03d", prefix.c_str(), i);
                SynthParams p = preset == "benchmark" ? SynthParams::benchmark(seed + i, id) : SynthParams{};
                if (!params_path.empty()) p = read_json_file(params_path).get<SynthParams>();
                p.seed = seed + i;
                p.slide_id = id;
                p.avoid_seams = p.avoid_seams || avoid_seams;
                const auto s = generate_slide(p, cfg);
                const auto outputs = simulate_predictions(s, s.tiles, workers);
                entries.push_back(slide_entry_json(write_synth_slide(out, s, outputs)));
                std::printf("%s: %zu gts, %zu tiles\n", id, s.gts.size(), s.tiles.size());
            }
            const json rf = {{"format_version", kFormatVersion}, {"pipeline", cfg},           {"output_dir", "results"},
                             {"threshold_mode", "static"},       {"static_threshold", 0.5}, {"sweep", cfg.static_thresholds},
                             {"slides", entries}};
            write_json_file((fs::path(out) / "run.json").string(), rf);
        } else if (*exp) {
            const auto set = read_instances(in_path);
            Provenance prov;
            prov.config = set.config;
            prov.add_file("instances", in_path);
            write_json_file(out, export_geojson(set, prov.to_json()));
        } else if (*run) {
            RunConfig rc = load_run_config(run_path);
            if (workers) rc.workers = workers;
            const auto res = run_pipeline(rc);
            for (const auto& f : res.files) std::printf("wrote %s\n", (fs::path(rc.output_dir) / f).string().c_str());
            if (res.report) std::cout << table2_markdown({{"Run", *res.report}});
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error (%s): %s\n", std::string(family_name(e.family())).c_str(), e.what());
        return e.exit_code();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
