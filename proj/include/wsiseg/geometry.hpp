#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "mask.hpp"

namespace wsiseg {

// Slide extent at working resolution (20x).
struct SlideGeometry {
    std::string slide_id;
    std::int32_t width = 0;
    std::int32_t height = 0;
    double level0_factor = 2.0;  // working -> scanner level 0

    PixelBox box() const { return PixelBox{0, 0, width, height}; }
    std::string frame() const { return "slide:" + slide_id; }

    void validate() const {
        if (width <= 0 || height <= 0) throw ConfigError("slide '" + slide_id + "' must have positive extent");
        if (level0_factor < 1.0) throw ConfigError("level0_factor must be >= 1");
    }

    friend bool operator==(const SlideGeometry&, const SlideGeometry&) = default;
};

struct TileSpec {
    std::string tile_id;
    std::string slide_id;
    std::int32_t x = 0;
    std::int32_t y = 0;
    std::int32_t width = 4096;
    std::int32_t height = 4096;
    double model_scale = 0.5;

    PixelBox box() const { return PixelBox{x, y, width, height}; }
    // Model-input pixel dimensions after rescaling.
    std::int32_t model_width() const { return std::max(1, static_cast<std::int32_t>(std::lround(width * model_scale))); }
    std::int32_t model_height() const { return std::max(1, static_cast<std::int32_t>(std::lround(height * model_scale))); }
    PixelBox model_box() const { return PixelBox{0, 0, model_width(), model_height()}; }

    std::string model_frame() const { return "model:" + tile_id; }
    std::string tile_frame() const { return "tile:" + tile_id; }

    friend bool operator==(const TileSpec&, const TileSpec&) = default;
};

inline void to_json(nlohmann::json& j, const SlideGeometry& g) {
    j = nlohmann::json{{"slide_id", g.slide_id}, {"width", g.width}, {"height", g.height}, {"level0_factor", g.level0_factor}};
}

inline void from_json(const nlohmann::json& j, SlideGeometry& g) {
    try {
        g.slide_id = j.at("slide_id").get<std::string>();
        g.width = j.at("width").get<std::int32_t>();
        g.height = j.at("height").get<std::int32_t>();
        g.level0_factor = j.value("level0_factor", 2.0);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad slide geometry: ") + e.what());
    }
}

inline void to_json(nlohmann::json& j, const TileSpec& t) {
    j = nlohmann::json{{"format_version", 1}, {"tile_id", t.tile_id}, {"slide_id", t.slide_id}, {"origin", {t.x, t.y}}};
    if (t.width == t.height) j["size"] = t.width;
    else j["size"] = {t.width, t.height};
    j["model_scale"] = t.model_scale;
}

inline void from_json(const nlohmann::json& j, TileSpec& t) {
    try {
        t.tile_id = j.at("tile_id").get<std::string>();
        t.slide_id = j.at("slide_id").get<std::string>();
        const auto& o = j.at("origin");
        t.x = o.at(0).get<std::int32_t>();
        t.y = o.at(1).get<std::int32_t>();
        const auto& s = j.at("size");
        if (s.is_array()) {
            t.width = s.at(0).get<std::int32_t>();
            t.height = s.at(1).get<std::int32_t>();
        } else {
            t.width = t.height = s.get<std::int32_t>();
        }
        t.model_scale = j.value("model_scale", 0.5);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad tile spec: ") + e.what());
    }
    if (t.width <= 0 || t.height <= 0) throw FormatError("tile '" + t.tile_id + "' has non-positive size");
    if (!(t.model_scale > 0.0 && t.model_scale <= 1.0))
        throw FormatError("tile '" + t.tile_id + "' model_scale must be in (0,1]");
}

}  // namespace wsiseg
