#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"

namespace wsiseg {

inline constexpr int kFormatVersion = 1;

// Every numeric constant of the post-processing pipeline. Echoed into every output.
struct PipelineConfig {
    std::int32_t tile_size = 4096;
    std::int32_t tile_overlap = 32;
    std::int32_t model_input = 2048;
    std::int32_t thumbnail_size = 4096;
    double edge_circumference_max = 0.20;
    double edge_band_area_min = 0.90;
    double band_fraction = 0.10;
    std::int64_t min_instance_area = 25;
    double cross_class_iou_cutoff = 0.7;
    double match_iou = 0.5;
    std::vector<double> static_thresholds = {0.3, 0.5, 0.7, 0.9};
    double min_tile_tissue_fraction = 0.05;
    double same_class_suppress_iou = 0.5;
    std::int32_t dct_bins = 20;
    // Predictions or gts covered by Ignore regions above this fraction are excluded from evaluation.
    double ignore_overlap_max = 0.5;

    double model_scale() const {
        return static_cast<double>(model_input) / static_cast<double>(tile_size);
    }
    std::int32_t tile_step() const { return tile_size - tile_overlap; }

    void validate() const {
        auto fail = [](const char* what) { throw ConfigError(std::string("invalid config: ") + what); };
        auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (tile_size <= 0) fail("tile_size must be > 0");
        if (tile_overlap < 0 || tile_overlap >= tile_size) fail("tile_overlap must be in [0, tile_size)");
        if (model_input <= 0 || model_input > tile_size) fail("model_input must be in (0, tile_size]");
        if (thumbnail_size <= 0) fail("thumbnail_size must be > 0");
        if (!unit(edge_circumference_max)) fail("edge_circumference_max must be in [0,1]");
        if (!unit(edge_band_area_min)) fail("edge_band_area_min must be in [0,1]");
        if (!(band_fraction > 0.0 && band_fraction < 0.5)) fail("band_fraction must be in (0,0.5)");
        if (min_instance_area < 0) fail("min_instance_area must be >= 0");
        if (!unit(cross_class_iou_cutoff)) fail("cross_class_iou_cutoff must be in [0,1]");
        if (!(match_iou > 0.0 && match_iou <= 1.0)) fail("match_iou must be in (0,1]");
        for (double t : static_thresholds)
            if (!unit(t)) fail("static thresholds must be in [0,1]");
        if (!unit(min_tile_tissue_fraction)) fail("min_tile_tissue_fraction must be in [0,1]");
        if (!unit(same_class_suppress_iou)) fail("same_class_suppress_iou must be in [0,1]");
        if (dct_bins <= 0) fail("dct_bins must be > 0");
        if (!unit(ignore_overlap_max)) fail("ignore_overlap_max must be in [0,1]");
    }

    friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

inline void to_json(nlohmann::json& j, const PipelineConfig& c) {
    j = nlohmann::json{
        {"tile_size", c.tile_size},
        {"tile_overlap", c.tile_overlap},
        {"model_input", c.model_input},
        {"thumbnail_size", c.thumbnail_size},
        {"edge_circumference_max", c.edge_circumference_max},
        {"edge_band_area_min", c.edge_band_area_min},
        {"band_fraction", c.band_fraction},
        {"min_instance_area", c.min_instance_area},
        {"cross_class_iou_cutoff", c.cross_class_iou_cutoff},
        {"match_iou", c.match_iou},
        {"static_thresholds", c.static_thresholds},
        {"min_tile_tissue_fraction", c.min_tile_tissue_fraction},
        {"same_class_suppress_iou", c.same_class_suppress_iou},
        {"dct_bins", c.dct_bins},
        {"ignore_overlap_max", c.ignore_overlap_max},
    };
}

// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, PipelineConfig& c) {
    if (!j.is_object()) throw ConfigError("pipeline config must be a JSON object");
    PipelineConfig d;
    nlohmann::json defaults = d;
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!defaults.contains(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
    try {
        auto get = [&](const char* k, auto& field) {
            if (j.contains(k)) j.at(k).get_to(field);
        };
        get("tile_size", d.tile_size);
        get("tile_overlap", d.tile_overlap);
        get("model_input", d.model_input);
        get("thumbnail_size", d.thumbnail_size);
        get("edge_circumference_max", d.edge_circumference_max);
        get("edge_band_area_min", d.edge_band_area_min);
        get("band_fraction", d.band_fraction);
        get("min_instance_area", d.min_instance_area);
        get("cross_class_iou_cutoff", d.cross_class_iou_cutoff);
        get("match_iou", d.match_iou);
        get("static_thresholds", d.static_thresholds);
        get("min_tile_tissue_fraction", d.min_tile_tissue_fraction);
        get("same_class_suppress_iou", d.same_class_suppress_iou);
        get("dct_bins", d.dct_bins);
        get("ignore_overlap_max", d.ignore_overlap_max);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    d.validate();
    c = d;
}

}  // namespace wsiseg
