#include <gtest/gtest.h>

#include <filesystem>

#include "fixtures.hpp"

using namespace wsiseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) { return fs::temp_directory_path() / ("wsiseg_pipeline_" + name); }

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path().string());
    return out;
}

}  // namespace

TEST(Pipeline, NoiseFreeRunIsPerfect) {
    const auto root = scratch("clean");
    const auto run = fixture::write_synth_run(root, {fixture::clean_params(1, "c1"), fixture::clean_params(2, "c2")});
    const auto res = run_pipeline(load_run_config(run));
    ASSERT_TRUE(res.report);
    for (InstanceClass c : kAllClasses) {
        const auto& m = res.report->means[class_index(c)];
        EXPECT_EQ(m.slides, 2u);
        EXPECT_EQ(m.mf1, 1.0) << class_name(c);
        EXPECT_EQ(m.map, 1.0);
        EXPECT_EQ(m.mar, 1.0);
        EXPECT_GE(m.miou, 0.99);
    }
    EXPECT_EQ(res.files.back(), "manifest.json");
    const auto manifest = read_json_file((root / "out" / "manifest.json").string());
    EXPECT_EQ(manifest.at("files").size() + 1, res.files.size());
    for (const auto& f : manifest.at("files"))
        EXPECT_EQ(sha256_hex(read_file((root / "out" / f.at("path").get<std::string>()).string())), f.at("sha256").get<std::string>());
}

TEST(Pipeline, OutputsAreByteIdenticalAcrossRunsAndWorkers) {
    const auto root = scratch("det");
    auto p = SynthParams::benchmark(4, "n4");
    p.width = p.height = 8160;
    p.counts = {14, 20, 6};
    const auto run = fixture::write_synth_run(root, {p}, {{"sweep", {0.3, 0.7}}});
    auto rc = load_run_config(run);
    rc.workers = 1;
    run_pipeline(rc);
    const auto first = snapshot(root / "out");
    rc.workers = 4;
    run_pipeline(rc);
    EXPECT_EQ(snapshot(root / "out"), first);
    EXPECT_TRUE(first.count("sweep.md"));
}

TEST(Pipeline, OutputsCarryProvenance) {
    const auto root = scratch("prov");
    const auto run = fixture::write_synth_run(root, {fixture::clean_params(3, "p3")});
    run_pipeline(load_run_config(run));
    const auto inst = read_json_file((root / "out" / "p3" / "instances.json").string());
    ASSERT_TRUE(inst.contains("provenance"));
    EXPECT_EQ(inst["provenance"]["config"], nlohmann::json(PipelineConfig{}));
    EXPECT_TRUE(inst["provenance"]["inputs"].contains("annotations"));
    const auto csv = read_file((root / "out" / "metrics.csv").string());
    EXPECT_EQ(csv.rfind("# ", 0), 0u);
    const auto gj = read_json_file((root / "out" / "p3" / "predictions.geojson").string());
    EXPECT_TRUE(gj.contains("provenance"));
}

TEST(Pipeline, StageErrorsNameTheSlide) {
    const auto root = scratch("err");
    const auto run = fixture::write_synth_run(root, {fixture::clean_params(5, "e5")});
    fs::path victim;
    for (const auto& e : fs::directory_iterator(root / "e5" / "predictions")) victim = e.path();
    write_file(victim.string(), "{\"broken\": \n");
    try {
        run_pipeline(load_run_config(run));
        FAIL() << "expected a FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("e5"), std::string::npos);
    }
}

TEST(Pipeline, OptimisticDominatesStaticRows) {
    std::vector<Split> splits;
    for (int k = 0; k < 2; ++k) {
        Split sp{"S" + std::to_string(k), {}};
        for (int i = 0; i < 2; ++i) {
            auto p = SynthParams::benchmark(100 + 10 * k + i, "b" + std::to_string(k) + std::to_string(i));
            p.width = p.height = 8160;
    p.counts = {14, 20, 6};
            sp.slides.push_back(labeled_synth_slide(p, PipelineConfig{}));
        }
        splits.push_back(std::move(sp));
    }
    TrainParams hp;
    hp.epochs = 300;
    const auto run = table1_harness(splits, PipelineConfig{}, hp);
    ASSERT_EQ(run.table.mf1.size(), 2u);
    ASSERT_EQ(run.table.modes.size(), 6u);
    for (const auto& grid : run.table.mf1)
        for (std::size_t c = 0; c < kNumClasses; ++c)
            for (std::size_t m = 0; m + 1 < grid.size(); ++m) EXPECT_GE(grid.back()[c] + 1e-12, grid[m][c]);
}
