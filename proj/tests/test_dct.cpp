#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace wsiseg;
using oracle::labeled;
using oracle::rect;
using oracle::scored;

namespace {

const std::string F = "slide:s";

// gts g1,g2,g3; predictions 0.9 (TP), 0.6 (FP), 0.4 (TP)
MatchResult three_pred_match() {
    std::vector<ScoredMask> p{scored("p1", 0.9, rect(0, 0, 10, 10, F)), scored("p2", 0.6, rect(100, 0, 10, 10, F)),
                              scored("p3", 0.4, rect(200, 0, 10, 10, F))};
    std::vector<LabeledMask> g{labeled("g1", rect(0, 0, 10, 10, F)), labeled("g2", rect(200, 0, 10, 10, F)),
                               labeled("g3", rect(300, 0, 10, 10, F))};
    return match_instances(p, g, 0.5);
}

std::vector<std::vector<double>> random_inputs(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
    std::normal_distribution<double> nd;
    std::vector<std::vector<double>> x(n, std::vector<double>(dim));
    for (auto& row : x)
        for (auto& v : row) v = nd(rng);
    return x;
}

}  // namespace

TEST(MaxF1, ThreePredictionExample) {
    const auto r = max_f1_threshold(three_pred_match());
    EXPECT_EQ(r.threshold, 0.4);
    EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3);
    EXPECT_EQ(r.flag, ThresholdFlag::ok);
}

TEST(MaxF1, AllTruePositivesKeepEverything) {
    std::vector<ScoredMask> p{scored("a", 0.8, rect(0, 0, 5, 5, F)), scored("b", 0.3, rect(20, 0, 5, 5, F))};
    std::vector<LabeledMask> g{labeled("x", rect(0, 0, 5, 5, F)), labeled("y", rect(20, 0, 5, 5, F))};
    const auto r = max_f1_threshold(match_instances(p, g, 0.5));
    EXPECT_EQ(r.threshold, 0.3);
    EXPECT_EQ(r.f1, 1.0);
}

TEST(MaxF1, DegenerateAndEmptyCases) {
    std::vector<ScoredMask> p{scored("a", 0.8, rect(50, 50, 5, 5, F)), scored("b", 0.3, rect(90, 0, 5, 5, F))};
    std::vector<LabeledMask> g{labeled("x", rect(0, 0, 5, 5, F))};
    auto r = max_f1_threshold(match_instances(p, g, 0.5));
    EXPECT_EQ(r.flag, ThresholdFlag::degenerate);
    EXPECT_EQ(r.threshold, 0.0);

    std::vector<ScoredMask> none;
    r = max_f1_threshold(match_instances(none, g, 0.5));
    EXPECT_EQ(r.flag, ThresholdFlag::no_signal);
    EXPECT_EQ(r.threshold, 0.0);

    std::vector<LabeledMask> no_gt;
    r = max_f1_threshold(match_instances(p, no_gt, 0.5));
    EXPECT_EQ(r.flag, ThresholdFlag::no_ground_truth);
    EXPECT_GT(r.threshold, 0.8);
    EXPECT_LT(r.threshold, 0.80001);
}

TEST(MaxF1, MatchesSweepOracle) {
    std::mt19937_64 rng(21);
    for (int it = 0; it < 300; ++it) {
        const int n = 1 + static_cast<int>(rng() % 8), k = 1 + static_cast<int>(rng() % 6);
        std::vector<ScoredMask> p;
        std::vector<LabeledMask> g;
        std::vector<double> conf;
        for (int i = 0; i < k; ++i) g.push_back(labeled("g" + std::to_string(i), rect(20 * i, 0, 10, 10, F)));
        for (int i = 0; i < n; ++i) {
            const double c = static_cast<double>(rng() % 7) / 7.0;
            conf.push_back(c);
            p.push_back(scored("p" + std::to_string(i), c, rect(20 * static_cast<int>(rng() % 8) + static_cast<int>(rng() % 7), 0, 10, 10, F)));
        }
        auto tp_at = [&](double t) {
            std::vector<ScoredMask> kept;
            for (const auto& s : p)
                if (s.confidence >= t) kept.push_back(s);
            return match_instances(kept, g, 0.5).tp();
        };
        EXPECT_EQ(max_f1_threshold(match_instances(p, g, 0.5)).threshold, oracle::sweep_max_f1(conf, g.size(), tp_at)) << it;
    }
}

TEST(Featurize, Example) {
    const std::vector<double> c{0.5, 0.5, 0.9};
    const auto f = featurize(c, InstanceClass::artery, 20);
    ASSERT_EQ(f.vector().size(), 43u);
    EXPECT_EQ(f.binned_unique_values[10], 1.0);
    EXPECT_EQ(f.binned_unique_values[18], 1.0);
    EXPECT_DOUBLE_EQ(f.binned_frequencies[10], 2.0 / 3);
    EXPECT_DOUBLE_EQ(f.binned_frequencies[18], 1.0 / 3);
    EXPECT_EQ(f.class_onehot, (std::array<double, 3>{0, 0, 1}));
}

TEST(Featurize, EdgesAndEmpty) {
    EXPECT_EQ(confidence_bin(1.0, 20), 19u);
    EXPECT_EQ(confidence_bin(0.0, 20), 0u);
    EXPECT_EQ(confidence_bin(0.05, 20), 1u);
    const auto f = featurize({}, InstanceClass::glomerulus, 20);
    for (double v : f.binned_frequencies) EXPECT_EQ(v, 0.0);
    for (double v : f.binned_unique_values) EXPECT_EQ(v, 0.0);
}

TEST(Featurize, FrequenciesSumToOne) {
    std::mt19937_64 rng(2);
    for (int it = 0; it < 100; ++it) {
        std::vector<double> c(1 + rng() % 50);
        for (auto& v : c) v = unit_uniform(rng);
        const auto f = featurize(c, InstanceClass::arteriole, 20);
        double s = 0, u = 0;
        for (double v : f.binned_frequencies) s += v;
        for (double v : f.binned_unique_values) u += v;
        EXPECT_NEAR(s, 1.0, 1e-12);
        EXPECT_LE(u, static_cast<double>(c.size()));
    }
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    for (int it = 0; it < 10; ++it) {
        const std::vector<std::size_t> dims{6, 5, 4, 1};
        const auto layers = oracle::random_network(dims, 100 + it);
        const auto x = random_inputs(rng, 8, 6);
        std::vector<double> y(8);
        for (auto& v : y) v = unit_uniform(rng);
        EXPECT_LT(oracle::gradient_check(layers, x, y), 1e-4);
    }
}

TEST(Mlp, SingleExampleConverges) {
    std::vector<DctExample> d{{std::vector<double>(43, 0.2), 0.7}};
    d[0].features[3] = 1.0;
    TrainParams hp;
    hp.epochs = 500;
    const auto r = train_dct(d, hp);
    EXPECT_NEAR(r.model.predict(d[0].features), 0.7, 0.05);
}

TEST(Mlp, ConstantTargetsStayConstant) {
    std::mt19937_64 rng(4);
    std::vector<DctExample> d;
    for (const auto& x : random_inputs(rng, 12, 43)) d.push_back({x, 0.5});
    TrainParams hp;
    hp.epochs = 300;
    const auto r = train_dct(d, hp);
    for (const auto& e : d) EXPECT_NEAR(r.model.predict(e.features), 0.5, 0.02);
    EXPECT_LT(r.loss_trace.back(), r.loss_trace.front());
}

TEST(Mlp, LossDecreasesAndIsDeterministic) {
    std::mt19937_64 rng(5);
    std::vector<DctExample> d;
    for (const auto& x : random_inputs(rng, 30, 43)) d.push_back({x, unit_uniform(rng)});
    TrainParams hp;
    hp.epochs = 200;
    const auto a = train_dct(d, hp);
    const auto b = train_dct(d, hp);
    EXPECT_LT(a.loss_trace.back(), a.loss_trace.front());
    EXPECT_EQ(nlohmann::json(a.model).dump(), nlohmann::json(b.model).dump());
    EXPECT_EQ(a.loss_trace, b.loss_trace);
    EXPECT_EQ(a.model.layer_dims(), (std::vector<std::size_t>{43, 64, 32, 1}));
}

TEST(Mlp, InputScaleIsSharedWithinFeatureGroups) {
    std::mt19937_64 rng(8);
    std::vector<DctExample> d;
    for (const auto& x : random_inputs(rng, 20, 43)) d.push_back({x, unit_uniform(rng)});
    for (auto& e : d) e.features[0] = 0.0;
    d[3].features[0] = 1.0;  // a bin that is almost always empty
    TrainParams hp;
    hp.epochs = 5;
    const auto m = train_dct(d, hp).model;
    for (std::size_t i = 1; i < 20; ++i) EXPECT_EQ(m.input_scale[i], m.input_scale[0]);
    for (std::size_t i = 21; i < 40; ++i) EXPECT_EQ(m.input_scale[i], m.input_scale[20]);
    for (std::size_t i = 41; i < 43; ++i) EXPECT_EQ(m.input_scale[i], m.input_scale[40]);
    std::vector<double> x = d[0].features;
    x[0] = 1.0;
    EXPECT_LT(std::abs(m.standardize(x)[0]), 10.0);
}

TEST(Mlp, JsonRoundTripPredictsIdentically) {
    std::mt19937_64 rng(6);
    std::vector<DctExample> d;
    for (const auto& x : random_inputs(rng, 10, 43)) d.push_back({x, unit_uniform(rng)});
    TrainParams hp;
    hp.epochs = 20;
    const auto m = train_dct(d, hp).model;
    const auto back = nlohmann::json::parse(nlohmann::json(m).dump()).get<DctModel>();
    for (const auto& e : d) EXPECT_EQ(back.predict(e.features), m.predict(e.features));
    EXPECT_THROW(nlohmann::json::parse(R"({"layer_dims":[3]})").get<DctModel>(), FormatError);
}

TEST(Mlp, RejectsBadData) {
    std::vector<DctExample> none;
    EXPECT_THROW(train_dct(none, TrainParams{}), ConfigError);
    std::vector<DctExample> bad{{{1.0, 2.0}, 1.5}};
    EXPECT_THROW(train_dct(bad, TrainParams{}), ConfigError);
}

TEST(DecideThresholds, Modes) {
    const PipelineConfig cfg;
    std::vector<ThresholdInput> in{{"s", InstanceClass::glomerulus, {0.9, 0.6, 0.4}, three_pred_match()},
                                   {"s", InstanceClass::artery, {}, std::nullopt}};
    auto d = decide_thresholds(ThresholdMode::fixed(0.5), nullptr, in, cfg);
    ASSERT_EQ(d.size(), 2u);
    EXPECT_EQ(d[0].threshold, 0.5);
    EXPECT_EQ(d[0].mode.label(), "0.5");

    std::vector<ThresholdInput> one{in[0]};
    d = decide_thresholds(ThresholdMode::optimistic(), nullptr, one, cfg);
    EXPECT_EQ(d[0].threshold, 0.4);
    EXPECT_THROW(decide_thresholds(ThresholdMode::optimistic(), nullptr, in, cfg), ConfigError);
    EXPECT_THROW(decide_thresholds(ThresholdMode::dynamic(), nullptr, in, cfg), ConfigError);
    EXPECT_THROW(decide_thresholds(ThresholdMode::fixed(1.5), nullptr, in, cfg), ConfigError);

    // a class with zero predictions still gets a threshold in [0,1]
    std::vector<DctExample> data{{featurize(std::vector<double>{0.9, 0.2}, InstanceClass::glomerulus, 20).vector(), 0.6},
                                 {featurize(std::vector<double>{0.3}, InstanceClass::artery, 20).vector(), 0.2}};
    TrainParams hp;
    hp.epochs = 100;
    const auto model = train_dct(data, hp).model;
    d = decide_thresholds(ThresholdMode::dynamic(), &model, in, cfg);
    for (const auto& x : d) {
        EXPECT_GE(x.threshold, 0.0);
        EXPECT_LE(x.threshold, 1.0);
    }
}
