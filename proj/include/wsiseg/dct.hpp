#pragma once

// Dynamic confidence thresholding: an MLP regressor maps binned confidence
// statistics of one (slide, class) to a confidence cutoff, trained against the
// max-F1 cutoff of slides outside the evaluation set.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "errors.hpp"
#include "metrics.hpp"
#include "vocabulary.hpp"

namespace wsiseg {

// ---------------------------------------------------------------------------
// Max-F1 threshold

enum class ThresholdFlag { ok, no_signal, degenerate, no_ground_truth };

inline std::string_view flag_name(ThresholdFlag f) {
    switch (f) {
        case ThresholdFlag::ok: return "ok";
        case ThresholdFlag::no_signal: return "no-signal";
        case ThresholdFlag::degenerate: return "degenerate";
        case ThresholdFlag::no_ground_truth: return "no-ground-truth";
    }
    return "?";
}

struct F1Threshold {
    double threshold = 0.0;
    double f1 = 0.0;
    ThresholdFlag flag = ThresholdFlag::ok;
};

// Smallest unique confidence whose kept set (confidence >= t) maximizes F1.
//   no predictions        -> 0, no-signal
//   no ground truth       -> just above the top confidence (drops everything)
//   F1 == 0 everywhere    -> 0, degenerate
inline F1Threshold max_f1_threshold(const MatchResult& m) {
    F1Threshold r;
    if (m.ranked.empty()) {
        r.flag = ThresholdFlag::no_signal;
        return r;
    }
    if (m.gt_count == 0) {
        r.flag = ThresholdFlag::no_ground_truth;
        r.threshold = std::min(1.0, std::nextafter(m.ranked.front().confidence, 2.0));
        return r;
    }
    const auto g = static_cast<std::int64_t>(m.gt_count);
    // F1 = 2tp / (kept + g); compared exactly by cross-multiplication.
    std::int64_t best_num = -1, best_den = 1;
    double best_t = 0.0;
    std::int64_t tp = 0, kept = 0;
    for (std::size_t i = 0; i < m.ranked.size(); ++i) {
        tp += m.ranked[i].matched ? 1 : 0;
        ++kept;
        if (i + 1 < m.ranked.size() && m.ranked[i + 1].confidence == m.ranked[i].confidence) continue;
        const std::int64_t num = 2 * tp, den = kept + g;
        // Descending sweep: ties move to the smaller threshold.
        if (best_num < 0 || num * best_den >= best_num * den) {
            best_num = num;
            best_den = den;
            best_t = m.ranked[i].confidence;
        }
    }
    r.f1 = static_cast<double>(best_num) / static_cast<double>(best_den);
    if (best_num == 0) {
        r.flag = ThresholdFlag::degenerate;
        r.threshold = 0.0;
        return r;
    }
    r.threshold = best_t;
    return r;
}

inline F1Threshold max_f1_threshold(std::span<const ScoredMask> preds, std::span<const LabeledMask> gts, const PipelineConfig& cfg) {
    return max_f1_threshold(match_instances(preds, gts, cfg.match_iou));
}

// ---------------------------------------------------------------------------
// Features

struct ConfidenceFeature {
    std::string slide_id;
    InstanceClass cls = InstanceClass::glomerulus;
    std::vector<double> binned_unique_values;  // counts of distinct confidences per bin
    std::vector<double> binned_frequencies;    // all confidences, normalized to sum 1
    std::array<double, kNumClasses> class_onehot{};

    std::vector<double> vector() const {
        std::vector<double> v(binned_unique_values);
        v.insert(v.end(), binned_frequencies.begin(), binned_frequencies.end());
        v.insert(v.end(), class_onehot.begin(), class_onehot.end());
        return v;
    }
};

// Bin k covers [k/B, (k+1)/B); the last bin is closed at 1.
inline std::size_t confidence_bin(double c, std::size_t bins) {
    if (!(c >= 0.0)) return 0;
    const auto k = static_cast<std::size_t>(std::floor(c * static_cast<double>(bins)));
    return std::min(k, bins - 1);
}

inline ConfidenceFeature featurize(std::span<const double> confidences, InstanceClass cls, std::size_t bins, std::string slide_id = {}) {
    ConfidenceFeature f;
    f.slide_id = std::move(slide_id);
    f.cls = cls;
    f.binned_unique_values.assign(bins, 0.0);
    f.binned_frequencies.assign(bins, 0.0);
    f.class_onehot[class_index(cls)] = 1.0;
    std::vector<double> sorted(confidences.begin(), confidences.end());
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const std::size_t k = confidence_bin(sorted[i], bins);
        f.binned_frequencies[k] += 1.0;
        if (i == 0 || sorted[i] != sorted[i - 1]) f.binned_unique_values[k] += 1.0;
    }
    if (!sorted.empty())
        for (double& v : f.binned_frequencies) v /= static_cast<double>(sorted.size());
    return f;
}

// ---------------------------------------------------------------------------
// MLP regressor

struct DenseLayer {
    std::size_t inputs = 0;
    std::size_t outputs = 0;
    std::vector<double> weights;  // row-major, outputs x inputs
    std::vector<double> biases;

    double w(std::size_t o, std::size_t i) const { return weights[o * inputs + i]; }
};

struct TrainingMeta {
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
    double learning_rate = 0.0;
    double final_loss = 0.0;
};

// ReLU hidden layers, logistic output. Inputs are standardized with the training-set
// mean and scale before the first layer.
struct DctModel {
    std::vector<DenseLayer> layers;
    std::vector<double> input_mean;
    std::vector<double> input_scale;
    TrainingMeta meta;

    std::vector<std::size_t> layer_dims() const {
        std::vector<std::size_t> d;
        if (layers.empty()) return d;
        d.push_back(layers.front().inputs);
        for (const auto& l : layers) d.push_back(l.outputs);
        return d;
    }
    std::size_t input_size() const { return layers.empty() ? 0 : layers.front().inputs; }

    std::vector<double> standardize(std::span<const double> x) const {
        if (x.size() != input_size())
            throw ConfigError("DCT input has " + std::to_string(x.size()) + " features, model expects " + std::to_string(input_size()));
        std::vector<double> z(x.begin(), x.end());
        for (std::size_t i = 0; i < z.size() && i < input_mean.size(); ++i) z[i] = (z[i] - input_mean[i]) / input_scale[i];
        return z;
    }

    double predict(std::span<const double> x) const;
    double predict(const ConfidenceFeature& f) const { return predict(f.vector()); }
};

inline double logistic(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

namespace detail {

// Activations of every layer; acts[0] is the (standardized) input.
inline std::vector<std::vector<double>> forward(const std::vector<DenseLayer>& layers, std::vector<double> input) {
    std::vector<std::vector<double>> acts;
    acts.push_back(std::move(input));
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const DenseLayer& L = layers[l];
        const auto& in = acts.back();
        std::vector<double> out(L.outputs);
        for (std::size_t o = 0; o < L.outputs; ++o) {
            double z = L.biases[o];
            const double* row = L.weights.data() + o * L.inputs;
            for (std::size_t i = 0; i < L.inputs; ++i) z += row[i] * in[i];
            out[o] = (l + 1 == layers.size()) ? logistic(z) : std::max(0.0, z);
        }
        acts.push_back(std::move(out));
    }
    return acts;
}

}  // namespace detail

inline double DctModel::predict(std::span<const double> x) const {
    if (layers.empty()) throw ConfigError("DCT model has no layers");
    return detail::forward(layers, standardize(x)).back()[0];
}

struct DctExample {
    std::vector<double> features;  // raw (unstandardized)
    double target = 0.0;
};

// Same shapes as the model's layers.
struct LayerGradients {
    std::vector<double> weights;
    std::vector<double> biases;
};

// Mean squared error over standardized inputs.
inline double mse_loss(const std::vector<DenseLayer>& layers, std::span<const std::vector<double>> inputs, std::span<const double> targets) {
    double acc = 0.0;
    for (std::size_t n = 0; n < inputs.size(); ++n) {
        const double y = detail::forward(layers, inputs[n]).back()[0];
        acc += (y - targets[n]) * (y - targets[n]);
    }
    return acc / static_cast<double>(inputs.size());
}

// Analytic gradient of mse_loss by backpropagation.
inline std::vector<LayerGradients> mse_gradients(const std::vector<DenseLayer>& layers, std::span<const std::vector<double>> inputs,
                                                 std::span<const double> targets) {
    std::vector<LayerGradients> g(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
        g[l].weights.assign(layers[l].weights.size(), 0.0);
        g[l].biases.assign(layers[l].biases.size(), 0.0);
    }
    const double scale = 2.0 / static_cast<double>(inputs.size());
    for (std::size_t n = 0; n < inputs.size(); ++n) {
        const auto acts = detail::forward(layers, inputs[n]);
        const double y = acts.back()[0];
        // d loss / d z at the output (logistic).
        std::vector<double> delta{scale * (y - targets[n]) * y * (1.0 - y)};
        for (std::size_t l = layers.size(); l-- > 0;) {
            const DenseLayer& L = layers[l];
            const auto& in = acts[l];
            for (std::size_t o = 0; o < L.outputs; ++o) {
                g[l].biases[o] += delta[o];
                double* row = g[l].weights.data() + o * L.inputs;
                for (std::size_t i = 0; i < L.inputs; ++i) row[i] += delta[o] * in[i];
            }
            if (l == 0) break;
            std::vector<double> prev(L.inputs, 0.0);
            for (std::size_t o = 0; o < L.outputs; ++o)
                for (std::size_t i = 0; i < L.inputs; ++i) prev[i] += L.w(o, i) * delta[o];
            // ReLU derivative of the layer below; acts[l] is its post-activation.
            for (std::size_t i = 0; i < L.inputs; ++i) prev[i] = in[i] > 0.0 ? prev[i] : 0.0;
            delta = std::move(prev);
        }
    }
    return g;
}

// Portable uniform double in [0,1) from a 64-bit engine.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// He-uniform weights, zero biases.
inline std::vector<DenseLayer> init_layers(std::span<const std::size_t> dims, std::uint64_t seed) {
    if (dims.size() < 2) throw ConfigError("an MLP needs at least an input and an output dimension");
    std::mt19937_64 rng(seed);
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        DenseLayer L;
        L.inputs = dims[l];
        L.outputs = dims[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(L.inputs));
        L.weights.resize(L.inputs * L.outputs);
        for (double& w : L.weights) w = (2.0 * unit_uniform(rng) - 1.0) * limit;
        L.biases.assign(L.outputs, 0.0);
        layers.push_back(std::move(L));
    }
    return layers;
}

struct TrainParams {
    std::uint64_t seed = 7;
    std::size_t epochs = 4000;
    double learning_rate = 0.05;
    std::vector<std::size_t> hidden = {64, 32};
};

struct TrainResult {
    DctModel model;
    std::vector<double> loss_trace;  // loss before each update, then the final loss
};

// Full-batch gradient descent on mean squared error. Deterministic for a seed.
inline TrainResult train_dct(std::span<const DctExample> data, const TrainParams& hp) {
    if (data.empty()) throw ConfigError("cannot train a DCT model on an empty dataset");
    const std::size_t dim = data.front().features.size();
    for (const auto& e : data) {
        if (e.features.size() != dim) throw ConfigError("DCT examples have inconsistent feature lengths");
        if (!(e.target >= 0.0 && e.target <= 1.0)) throw ConfigError("DCT targets must lie in [0,1]");
    }
    TrainResult out;
    DctModel& m = out.model;
    m.input_mean.assign(dim, 0.0);
    m.input_scale.assign(dim, 0.0);
    for (const auto& e : data)
        for (std::size_t i = 0; i < dim; ++i) m.input_mean[i] += e.features[i];
    for (double& v : m.input_mean) v /= static_cast<double>(data.size());
    // One scale per feature group (unique-value bins, frequency bins, one-hot), pooled over
    // the group, so a bin that is almost always empty does not blow up at prediction time.
    const std::size_t bins = dim >= kNumClasses ? (dim - kNumClasses) / 2 : 0;
    const std::size_t group_end[3] = {bins, 2 * bins, dim};
    for (std::size_t g = 0, begin = 0; g < 3; begin = group_end[g++]) {
        double ss = 0.0;
        for (const auto& e : data)
            for (std::size_t i = begin; i < group_end[g]; ++i) ss += (e.features[i] - m.input_mean[i]) * (e.features[i] - m.input_mean[i]);
        const std::size_t n = data.size() * (group_end[g] - begin);
        double v = n ? std::sqrt(ss / static_cast<double>(n)) : 1.0;
        if (v < 1e-6) v = 1.0;
        for (std::size_t i = begin; i < group_end[g]; ++i) m.input_scale[i] = v;
    }

    std::vector<std::size_t> dims{dim};
    dims.insert(dims.end(), hp.hidden.begin(), hp.hidden.end());
    dims.push_back(1);
    m.layers = init_layers(dims, hp.seed);

    std::vector<std::vector<double>> inputs;
    std::vector<double> targets;
    double mean_t = 0.0;
    for (const auto& e : data) {
        inputs.push_back(m.standardize(e.features));
        targets.push_back(e.target);
        mean_t += e.target;
    }
    // Start the output at the mean target.
    mean_t = std::clamp(mean_t / static_cast<double>(data.size()), 1e-3, 1.0 - 1e-3);
    m.layers.back().biases[0] = std::log(mean_t / (1.0 - mean_t));

    for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
        out.loss_trace.push_back(mse_loss(m.layers, inputs, targets));
        const auto g = mse_gradients(m.layers, inputs, targets);
        for (std::size_t l = 0; l < m.layers.size(); ++l) {
            for (std::size_t k = 0; k < g[l].weights.size(); ++k) m.layers[l].weights[k] -= hp.learning_rate * g[l].weights[k];
            for (std::size_t k = 0; k < g[l].biases.size(); ++k) m.layers[l].biases[k] -= hp.learning_rate * g[l].biases[k];
        }
    }
    const double final_loss = mse_loss(m.layers, inputs, targets);
    out.loss_trace.push_back(final_loss);
    for (const auto& L : m.layers)
        for (double w : L.weights)
            if (!std::isfinite(w)) throw ConfigError("DCT training diverged (non-finite weight)");
    m.meta = TrainingMeta{hp.seed, hp.epochs, hp.learning_rate, final_loss};
    return out;
}

inline void to_json(nlohmann::json& j, const DctModel& m) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& L : m.layers) {
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t o = 0; o < L.outputs; ++o)
            rows.push_back(std::vector<double>(L.weights.begin() + static_cast<std::ptrdiff_t>(o * L.inputs),
                                               L.weights.begin() + static_cast<std::ptrdiff_t>((o + 1) * L.inputs)));
        layers.push_back({{"weights", rows}, {"biases", L.biases}});
    }
    j = nlohmann::json{
        {"format_version", kFormatVersion},
        {"layer_dims", m.layer_dims()},
        {"hidden_activation", "relu"},
        {"output_activation", "logistic"},
        {"layers", layers},
        {"input_mean", m.input_mean},
        {"input_scale", m.input_scale},
        {"training_meta",
         {{"seed", m.meta.seed}, {"epochs", m.meta.epochs}, {"learning_rate", m.meta.learning_rate}, {"final_loss", m.meta.final_loss}}},
    };
}

inline void from_json(const nlohmann::json& j, DctModel& m) {
    try {
        if (j.value("format_version", 0) != kFormatVersion) throw FormatError("unsupported DCT model format_version");
        const auto dims = j.at("layer_dims").get<std::vector<std::size_t>>();
        const auto& layers = j.at("layers");
        if (dims.size() < 2 || layers.size() != dims.size() - 1) throw FormatError("DCT layer_dims do not match layers");
        m.layers.clear();
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            DenseLayer L;
            L.inputs = dims[l];
            L.outputs = dims[l + 1];
            const auto rows = layers[l].at("weights").get<std::vector<std::vector<double>>>();
            if (rows.size() != L.outputs) throw FormatError("DCT weight matrix has wrong row count");
            for (const auto& r : rows) {
                if (r.size() != L.inputs) throw FormatError("DCT weight matrix has wrong column count");
                L.weights.insert(L.weights.end(), r.begin(), r.end());
            }
            L.biases = layers[l].at("biases").get<std::vector<double>>();
            if (L.biases.size() != L.outputs) throw FormatError("DCT bias vector has wrong length");
            m.layers.push_back(std::move(L));
        }
        m.input_mean = j.value("input_mean", std::vector<double>(dims[0], 0.0));
        m.input_scale = j.value("input_scale", std::vector<double>(dims[0], 1.0));
        if (m.input_mean.size() != dims[0] || m.input_scale.size() != dims[0]) throw FormatError("DCT input scaling has wrong length");
        const auto& meta = j.at("training_meta");
        m.meta = TrainingMeta{meta.at("seed").get<std::uint64_t>(), meta.at("epochs").get<std::size_t>(),
                              meta.at("learning_rate").get<double>(), meta.at("final_loss").get<double>()};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad DCT model: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Threshold decisions

enum class ThresholdModeKind { static_value, dynamic, optimistic };

struct ThresholdMode {
    ThresholdModeKind kind = ThresholdModeKind::static_value;
    double value = 0.5;  // static only

    std::string label() const {
        switch (kind) {
            case ThresholdModeKind::static_value: {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.1f", value);
                return buf;
            }
            case ThresholdModeKind::dynamic: return "Dynamic";
            case ThresholdModeKind::optimistic: return "Optimistic";
        }
        return "?";
    }
    std::string_view kind_name() const {
        switch (kind) {
            case ThresholdModeKind::static_value: return "static";
            case ThresholdModeKind::dynamic: return "dynamic";
            case ThresholdModeKind::optimistic: return "optimistic";
        }
        return "?";
    }
    static ThresholdMode fixed(double v) { return {ThresholdModeKind::static_value, v}; }
    static ThresholdMode dynamic() { return {ThresholdModeKind::dynamic, 0.0}; }
    static ThresholdMode optimistic() { return {ThresholdModeKind::optimistic, 0.0}; }
};

struct ThresholdDecision {
    std::string slide_id;
    InstanceClass cls = InstanceClass::glomerulus;
    ThresholdMode mode;
    double threshold = 0.0;
};

// Everything a threshold decision may consult for one (slide, class).
struct ThresholdInput {
    std::string slide_id;
    InstanceClass cls = InstanceClass::glomerulus;
    std::vector<double> confidences;
    std::optional<MatchResult> match;  // required for optimistic mode
};

inline std::vector<ThresholdDecision> decide_thresholds(const ThresholdMode& mode, const DctModel* model,
                                                        std::span<const ThresholdInput> inputs, const PipelineConfig& cfg) {
    if (mode.kind == ThresholdModeKind::dynamic && (!model || model->layers.empty()))
        throw ConfigError("dynamic thresholding requires a trained DCT model");
    if (mode.kind == ThresholdModeKind::static_value && !(mode.value >= 0.0 && mode.value <= 1.0))
        throw ConfigError("static threshold must be in [0,1]");
    std::vector<ThresholdDecision> out;
    for (const auto& in : inputs) {
        ThresholdDecision d{in.slide_id, in.cls, mode, 0.0};
        switch (mode.kind) {
            case ThresholdModeKind::static_value: d.threshold = mode.value; break;
            case ThresholdModeKind::dynamic:
                d.threshold = model->predict(featurize(in.confidences, in.cls, static_cast<std::size_t>(cfg.dct_bins), in.slide_id));
                break;
            case ThresholdModeKind::optimistic:
                if (!in.match) throw ConfigError("optimistic thresholding requires ground truth");
                d.threshold = max_f1_threshold(*in.match).threshold;
                break;
        }
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace wsiseg
