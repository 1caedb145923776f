#pragma once

// Human-facing reports: long-form CSVs, Markdown grids and an SVG PR plot.

#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dct.hpp"
#include "errors.hpp"
#include "metrics.hpp"
#include "vocabulary.hpp"

namespace wsiseg {

inline std::string fmt_num(double v, const char* f = "%.10g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// "# provenance: {...}" first line for CSV and Markdown outputs.
inline std::string provenance_comment(const nlohmann::json& provenance, const char* prefix = "# ") {
    if (provenance.is_null()) return {};
    return std::string(prefix) + "provenance: " + provenance.dump() + "\n";
}

// slide,class,metric,value; class means follow with slide = "mean".
inline std::string metrics_csv(const MetricsReport& r, const nlohmann::json& provenance = nullptr) {
    std::string s = provenance_comment(provenance) + "slide,class,metric,value\n";
    for (const auto& m : r.per_slide) {
        const std::string pre = m.slide_id + "," + std::string(class_name(m.cls)) + ",";
        const std::array<std::pair<const char*, double>, 10> rows = {{{"IOU", m.iou_mean},
                                                                      {"precision", m.precision},
                                                                      {"recall", m.recall},
                                                                      {"F1", m.f1},
                                                                      {"specificity", m.specificity},
                                                                      {"TP", static_cast<double>(m.tp)},
                                                                      {"FP", static_cast<double>(m.fp)},
                                                                      {"FN", static_cast<double>(m.fn)},
                                                                      {"TN_pixels", static_cast<double>(m.tn_pixels)},
                                                                      {"FP_pixels", static_cast<double>(m.fp_pixels)}}};
        for (const auto& [name, v] : rows) s += pre + name + "," + fmt_num(v) + "\n";
    }
    for (InstanceClass c : kAllClasses) {
        const auto& cm = r.means[class_index(c)];
        const auto v = cm.values();
        for (std::size_t i = 0; i < v.size(); ++i)
            s += "mean," + std::string(class_name(c)) + "," + kMetricNames[i] + "," + fmt_num(v[i]) + "\n";
        s += "mean," + std::string(class_name(c)) + ",slides," + std::to_string(cm.slides) + "\n";
    }
    return s;
}

inline std::string thresholds_csv(const std::vector<ThresholdDecision>& ds, const nlohmann::json& provenance = nullptr) {
    std::string s = provenance_comment(provenance) + "slide_id,class,mode,threshold\n";
    for (const auto& d : ds) s += d.slide_id + "," + std::string(class_name(d.cls)) + "," + d.mode.label() + "," + fmt_num(d.threshold) + "\n";
    return s;
}

inline std::string pr_curves_csv(const std::vector<PrCurve>& curves, const nlohmann::json& provenance = nullptr) {
    std::string s = provenance_comment(provenance) + "class,slide,recall,precision\n";
    for (const auto& c : curves)
        for (const auto& p : c.points)
            s += std::string(class_name(c.cls)) + "," + c.slide_id + "," + fmt_num(p.recall) + "," + fmt_num(p.precision) + "\n";
    return s;
}

// ---------------------------------------------------------------------------
// Markdown grids

// mF1 per threshold mode x class x split.
struct Table1 {
    std::vector<std::string> splits;
    std::vector<ThresholdMode> modes;
    // mf1[split][mode][class]
    std::vector<std::vector<std::array<double, kNumClasses>>> mf1;
};

inline std::vector<ThresholdMode> table1_modes() {
    return {ThresholdMode::fixed(0.3), ThresholdMode::fixed(0.5), ThresholdMode::fixed(0.7),
            ThresholdMode::fixed(0.9), ThresholdMode::dynamic(),  ThresholdMode::optimistic()};
}

inline std::string table1_markdown(const Table1& t, const nlohmann::json& provenance = nullptr) {
    std::string s = provenance_comment(provenance, "<!-- ");
    if (!s.empty()) s.insert(s.size() - 1, " -->");
    s += "| Threshold |";
    std::string rule = "|---|";
    for (const auto& split : t.splits)
        for (InstanceClass c : kAllClasses) {
            s += " " + split + " " + std::string(class_name(c)) + " |";
            rule += "---|";
        }
    s += "\n" + rule + "\n";
    for (std::size_t m = 0; m < t.modes.size(); ++m) {
        s += "| " + t.modes[m].label() + " |";
        for (std::size_t sp = 0; sp < t.splits.size(); ++sp)
            for (std::size_t c = 0; c < kNumClasses; ++c) s += " " + fmt_num(t.mf1[sp][m][c], "%.3f") + " |";
        s += "\n";
    }
    return s;
}

// Metric rows x class columns, one column group per named report.
inline std::string table2_markdown(const std::vector<std::pair<std::string, MetricsReport>>& reports,
                                   const nlohmann::json& provenance = nullptr) {
    std::string s = provenance_comment(provenance, "<!-- ");
    if (!s.empty()) s.insert(s.size() - 1, " -->");
    s += "| Metric |";
    std::string rule = "|---|";
    for (const auto& [name, r] : reports)
        for (InstanceClass c : kAllClasses) {
            s += " " + name + " " + std::string(class_name(c)) + " |";
            rule += "---|";
        }
    s += "\n" + rule + "\n";
    for (std::size_t i = 0; i < kMetricNames.size(); ++i) {
        s += std::string("| ") + kMetricNames[i] + " |";
        for (const auto& [name, r] : reports)
            for (InstanceClass c : kAllClasses) s += " " + fmt_num(r.means[class_index(c)].values()[i], "%.3f") + " |";
        s += "\n";
    }
    return s;
}

// ---------------------------------------------------------------------------
// SVG

// One panel per class: faint per-slide curves and the dashed mean curve.
inline std::string pr_svg(const std::vector<PrCurve>& per_slide, const std::array<PrCurve, kNumClasses>& mean,
                          const nlohmann::json& provenance = nullptr) {
    const int pw = 300, ph = 300, margin = 50, gap = 30;
    const int W = margin + kNumClasses * (pw + gap), H = ph + 2 * margin;
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(W) + "\" height=\"" + std::to_string(H) +
                    "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    if (!provenance.is_null()) {
        std::string p = provenance.dump();
        for (std::size_t i = p.find("--"); i != std::string::npos; i = p.find("--", i)) p.replace(i, 2, "- -");
        s += "<!-- provenance: " + p + " -->\n";
    }
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    auto path_of = [&](const PrCurve& c, int ox) {
        std::string d;
        for (const auto& p : c.points) {
            const double x = ox + p.recall * pw, y = margin + (1.0 - p.precision) * ph;
            d += (d.empty() ? "M" : " L") + fmt_num(x, "%.2f") + "," + fmt_num(y, "%.2f");
        }
        return d;
    };
    for (InstanceClass cls : kAllClasses) {
        const int ox = margin + static_cast<int>(class_index(cls)) * (pw + gap);
        s += "<g>\n<rect x=\"" + std::to_string(ox) + "\" y=\"" + std::to_string(margin) + "\" width=\"" + std::to_string(pw) +
             "\" height=\"" + std::to_string(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
        s += "<text x=\"" + std::to_string(ox + pw / 2) + "\" y=\"" + std::to_string(margin - 12) + "\" text-anchor=\"middle\">" +
             std::string(class_name(cls)) + "</text>\n";
        s += "<text x=\"" + std::to_string(ox + pw / 2) + "\" y=\"" + std::to_string(margin + ph + 32) +
             "\" text-anchor=\"middle\">Recall</text>\n";
        for (int k = 0; k <= 4; ++k) {
            const double v = k / 4.0;
            s += "<text x=\"" + fmt_num(ox + v * pw, "%.1f") + "\" y=\"" + std::to_string(margin + ph + 15) +
                 "\" text-anchor=\"middle\" font-size=\"10\">" + fmt_num(v, "%.2f") + "</text>\n";
            s += "<text x=\"" + std::to_string(ox - 4) + "\" y=\"" + fmt_num(margin + (1 - v) * ph + 3, "%.1f") +
                 "\" text-anchor=\"end\" font-size=\"10\">" + fmt_num(v, "%.2f") + "</text>\n";
        }
        if (class_index(cls) == 0)
            s += "<text x=\"14\" y=\"" + std::to_string(margin + ph / 2) + "\" transform=\"rotate(-90 14 " +
                 std::to_string(margin + ph / 2) + ")\" text-anchor=\"middle\">Precision</text>\n";
        for (const auto& c : per_slide) {
            if (c.cls != cls || c.points.empty()) continue;
            s += "<path d=\"" + path_of(c, ox) + "\" fill=\"none\" stroke=\"#1f4e9a\" stroke-opacity=\"0.25\" stroke-width=\"1\"/>\n";
        }
        const auto& m = mean[class_index(cls)];
        if (!m.points.empty())
            s += "<path d=\"" + path_of(m, ox) + "\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" stroke-dasharray=\"6,4\"/>\n";
        s += "</g>\n";
    }
    s += "</svg>\n";
    return s;
}

}  // namespace wsiseg
