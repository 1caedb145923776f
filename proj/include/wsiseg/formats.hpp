#pragma once

// On-disk formats: provenance, tile plans and tile predictions (JSON lines),
// slide instance sets and metrics reports (JSON).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "config.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "geojson.hpp"
#include "mask.hpp"
#include "merge.hpp"
#include "metrics.hpp"

namespace wsiseg {

using nlohmann::json;

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr)) throw IoError("SHA-256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
    const std::filesystem::path p(path);
    std::error_code ec;
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path(), ec);
    if (ec) throw IoError("cannot create directory for '" + path + "': " + ec.message());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline void write_json_file(const std::string& path, const json& j) { write_file(path, j.dump(1) + "\n"); }

// Config echo plus content hashes of inputs, embedded in every output.
// Inputs are keyed by file name so output bytes do not depend on directory layout.
struct Provenance {
    PipelineConfig config;
    std::map<std::string, std::string> inputs;  // name -> sha256
    json extra = json::object();

    void add_file(const std::string& path) { add_file(std::filesystem::path(path).filename().string(), path); }
    void add_file(const std::string& key, const std::string& path) { inputs[key] = sha256_hex(read_file(path)); }
    void add_bytes(const std::string& name, std::string_view bytes) { inputs[name] = sha256_hex(bytes); }

    json to_json() const {
        json j = {{"format_version", kFormatVersion}, {"config", config}, {"inputs", inputs}};
        for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
        return j;
    }
};

namespace detail {

inline json header_line(const std::string& kind, const json& provenance) {
    json h = {{"kind", kind}};
    if (!provenance.is_null()) h["provenance"] = provenance;
    return {{"format_version", kFormatVersion}, {"header", h}};
}

inline void check_version(const json& j, const std::string& where) {
    if (!j.contains("format_version")) return;
    if (!j["format_version"].is_number_integer() || j["format_version"].get<int>() != kFormatVersion)
        throw FormatError(where + ": unsupported format_version");
}

template <typename F>
void for_each_json_line(const std::string& path, F&& f) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError(path + ":" + std::to_string(no) + ": " + e.what());
        }
        const std::string where = path + ":" + std::to_string(no);
        check_version(j, where);
        if (j.contains("header")) continue;
        f(j, where);
    }
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw FormatError(where + ": missing '" + key + "'");
    try {
        return j[key].get<T>();
    } catch (const json::exception&) {
        throw FormatError(where + ": bad '" + key + "'");
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tile plans

inline std::string tile_plan_jsonl(const std::vector<TileSpec>& tiles, const json& provenance = nullptr) {
    std::string s = detail::header_line("tile_plan", provenance).dump() + "\n";
    for (const auto& t : tiles) s += json(t).dump() + "\n";
    return s;
}

inline std::vector<TileSpec> read_tile_plan(const std::string& path) {
    std::vector<TileSpec> tiles;
    detail::for_each_json_line(path, [&](const json& j, const std::string& where) {
        try {
            tiles.push_back(j.get<TileSpec>());
        } catch (const FormatError& e) {
            throw FormatError(where + ": " + e.what());
        }
    });
    return tiles;
}

// ---------------------------------------------------------------------------
// Tile predictions: one JSON object per line, RLE over the full model frame.
// On read a compact form with an explicit "origin" is also accepted.

inline json prediction_json(const TilePrediction& p, const TileSpec& tile) {
    const PixelBox frame = tile.model_box();
    const ColumnSpans cs(p.mask);
    if (!cs.empty() && !frame.contains(cs.content_box()))
        throw DimensionError("prediction " + candidate_id_for(p.tile_id, p.index_in_tile) + " extends beyond its model frame");
    const PlacedMask full = build_placed(frame, tile.model_frame(), [&](std::int32_t x) { return cs.column(x); });
    return {{"format_version", kFormatVersion},
            {"tile_id", p.tile_id},
            {"class", class_name(p.cls)},
            {"confidence", p.confidence},
            {"index", p.index_in_tile},
            {"mask", full.mask}};
}

inline std::string predictions_jsonl(const std::vector<TilePrediction>& preds, const TileSpec& tile, const json& provenance = nullptr) {
    std::string s = detail::header_line("tile_predictions", provenance).dump() + "\n";
    for (const auto& p : preds) s += prediction_json(p, tile).dump() + "\n";
    return s;
}

inline TilePrediction parse_prediction(const json& j, const TileSpec& tile, const std::string& where) {
    TilePrediction p;
    p.tile_id = detail::get_field<std::string>(j, "tile_id", where);
    if (p.tile_id != tile.tile_id) throw FormatError(where + ": prediction for tile '" + p.tile_id + "' in file of '" + tile.tile_id + "'");
    const auto cname = detail::get_field<std::string>(j, "class", where);
    const auto cls = try_parse_class(cname);
    if (!cls) throw VocabularyError(where + ": unknown class '" + cname + "'");
    p.cls = *cls;
    p.confidence = detail::get_field<double>(j, "confidence", where);
    if (!(p.confidence >= 0.0 && p.confidence <= 1.0)) throw FormatError(where + ": confidence outside [0,1]");
    p.index_in_tile = detail::get_field<std::int32_t>(j, "index", where);
    if (p.index_in_tile < 0) throw FormatError(where + ": negative index");
    if (!j.contains("mask")) throw FormatError(where + ": missing 'mask'");
    RleMask m;
    try {
        m = j["mask"].get<RleMask>();
    } catch (const FormatError& e) {
        throw FormatError(where + ": " + e.what());
    }
    PlacedMask pm{std::move(m), 0, 0, tile.model_frame()};
    if (j.contains("origin")) {
        const auto o = detail::get_field<std::vector<std::int32_t>>(j, "origin", where);
        if (o.size() != 2) throw FormatError(where + ": 'origin' must be [x, y]");
        pm.x = o[0];
        pm.y = o[1];
        if (!tile.model_box().contains(pm.extent()))
            throw DimensionError(where + ": mask extends beyond the model frame of " + tile.tile_id);
    } else if (pm.mask.width != static_cast<std::uint32_t>(tile.model_width()) ||
               pm.mask.height != static_cast<std::uint32_t>(tile.model_height())) {
        throw DimensionError(where + ": mask size does not match the model frame of " + tile.tile_id);
    }
    p.mask = crop_to_content(pm);
    return p;
}

inline std::vector<TilePrediction> read_predictions(const std::string& path, const TileSpec& tile) {
    std::vector<TilePrediction> out;
    detail::for_each_json_line(path, [&](const json& j, const std::string& where) { out.push_back(parse_prediction(j, tile, where)); });
    return out;
}

inline std::string prediction_file_name(const std::string& tile_id) { return tile_id + ".jsonl"; }

// ---------------------------------------------------------------------------
// Slide instance sets

inline json placed_json(const PlacedMask& m) { return {{"origin", {m.x, m.y}}, {"rle", m.mask}}; }

inline PlacedMask placed_from_json(const json& j, const std::string& frame) {
    if (!j.is_object() || !j.contains("origin") || !j.contains("rle")) throw FormatError("placed mask needs 'origin' and 'rle'");
    const auto o = j["origin"].get<std::vector<std::int32_t>>();
    if (o.size() != 2) throw FormatError("'origin' must be [x, y]");
    return PlacedMask{j["rle"].get<RleMask>(), o[0], o[1], frame};
}

inline json to_json(const SlideInstanceSet& s, const json& provenance = nullptr) {
    json cands = json::array();
    for (const auto& c : s.candidates) {
        json jc = {{"candidate_id", c.candidate_id}, {"class", class_name(c.cls)}, {"confidence", c.confidence},
                   {"tile_id", c.tile_id},           {"index", c.index_in_tile},   {"status", status_name(c.status)},
                   {"mask", placed_json(c.mask)}};
        if (c.suppressed_by) jc["suppressed_by"] = *c.suppressed_by;
        cands.push_back(std::move(jc));
    }
    json warns = json::array();
    for (const auto& w : s.warnings) warns.push_back({{"tile_id", w.tile_id}, {"message", w.message}});
    json trace = json::array();
    for (const auto& t : s.trace) trace.push_back({{"stage", t.stage}, {"active", t.active}});
    json j = {{"format_version", kFormatVersion}, {"slide", s.geometry}, {"config", s.config},
              {"candidates", cands},              {"warnings", warns},   {"trace", trace}};
    if (!provenance.is_null()) j["provenance"] = provenance;
    return j;
}

inline SlideInstanceSet instance_set_from_json(const json& j) {
    try {
        detail::check_version(j, "instance set");
        SlideInstanceSet s;
        s.geometry = j.at("slide").get<SlideGeometry>();
        s.config = j.at("config").get<PipelineConfig>();
        for (const auto& jc : j.at("candidates")) {
            InstanceCandidate c;
            c.candidate_id = jc.at("candidate_id").get<std::string>();
            c.cls = parse_class(jc.at("class").get<std::string>());
            c.confidence = jc.at("confidence").get<double>();
            c.tile_id = jc.at("tile_id").get<std::string>();
            c.index_in_tile = jc.at("index").get<std::int32_t>();
            c.status = parse_status(jc.at("status").get<std::string>());
            if (jc.contains("suppressed_by")) c.suppressed_by = jc["suppressed_by"].get<std::string>();
            c.mask = placed_from_json(jc.at("mask"), s.geometry.frame());
            s.candidates.push_back(std::move(c));
        }
        for (const auto& w : j.at("warnings")) s.warnings.push_back({w.at("tile_id").get<std::string>(), w.at("message").get<std::string>()});
        for (const auto& t : j.at("trace")) s.trace.push_back({t.at("stage").get<std::string>(), t.at("active").get<std::size_t>()});
        return s;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad instance set: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Metrics reports

inline json to_json(const ClassSlideMetrics& m) {
    return {{"slide_id", m.slide_id}, {"class", class_name(m.cls)}, {"iou_mean", m.iou_mean}, {"precision", m.precision},
            {"recall", m.recall},     {"f1", m.f1},                 {"specificity", m.specificity},
            {"tp", m.tp},             {"fp", m.fp},                 {"fn", m.fn},
            {"tn_pixels", m.tn_pixels}, {"fp_pixels", m.fp_pixels}, {"counted", m.counted()}};
}

inline json to_json(const MetricsReport& r, const json& provenance = nullptr) {
    json per = json::array();
    for (const auto& m : r.per_slide) per.push_back(to_json(m));
    json means = json::object();
    for (InstanceClass c : kAllClasses) {
        const ClassMeans& m = r.means[class_index(c)];
        json jm = {{"slides", m.slides}};
        const auto v = m.values();
        for (std::size_t i = 0; i < v.size(); ++i) jm[kMetricNames[i]] = v[i];
        means[std::string(class_name(c))] = jm;
    }
    json j = {{"format_version", kFormatVersion}, {"threshold_mode", r.threshold_mode}, {"config", r.config},
              {"means", means},                   {"per_slide", per}};
    if (!provenance.is_null()) j["provenance"] = provenance;
    return j;
}

}  // namespace wsiseg
