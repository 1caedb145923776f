#pragma once

// On-disk synthetic runs shared by the pipeline tests and the acceptance binary.

#include <filesystem>
#include <string>
#include <vector>

#include "wsiseg/wsiseg.hpp"

namespace fixture {

using namespace wsiseg;
namespace fs = std::filesystem;

// Writes `params` slides under root/ and a run.json beside them; returns its path.
inline std::string write_synth_run(const fs::path& root, const std::vector<SynthParams>& params, nlohmann::json run_extra = nlohmann::json::object(),
                                   unsigned workers = 0) {
    fs::remove_all(root);
    fs::create_directories(root);
    nlohmann::json slides = nlohmann::json::array();
    for (const auto& p : params) {
        const auto s = generate_slide(p);
        const auto out = simulate_predictions(s, s.tiles, workers);
        slides.push_back(slide_entry_json(write_synth_slide(root.string(), s, out)));
    }
    nlohmann::json run = {{"output_dir", "out"}, {"slides", slides}};
    for (auto it = run_extra.begin(); it != run_extra.end(); ++it) run[it.key()] = it.value();
    const std::string path = (root / "run.json").string();
    write_json_file(path, run);
    return path;
}

inline SynthParams clean_params(std::uint64_t seed, const std::string& id) {
    SynthParams p;
    p.seed = seed;
    p.slide_id = id;
    p.avoid_seams = true;
    return p;
}

}  // namespace fixture
