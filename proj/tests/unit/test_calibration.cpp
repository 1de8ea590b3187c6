#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <gtest/gtest.h>

#include "sfc/calibration.hpp"
#include "sfc/errors.hpp"

using namespace sfc;

namespace {

std::vector<double> grid(double from, double to, double step) {
    std::vector<double> g;
    for (double r = from; r <= to + 1e-9; r += step) g.push_back(r);
    return g;
}

// Target channel plus one output unit wired with the given gains.
struct Loop {
    EmulatedNetwork net;
    ControllerPair pair;
};

Loop controller_loop(const ControllerGains& gains = {}) {
    ChipConfig config;
    Topology t;
    const auto target = t.add_virtual();
    const auto out = t.add_unit({.name = "out", .population = 10});
    const auto pair = wire_controller(t, out, target, gains, config);
    return {build_network(t, config, MismatchModel{0.1, 21}), pair};
}

} // namespace

TEST(rate_correction_map, identity_when_measured_equals_requested) {
    const RateCorrectionMap map({{0.0, 0.0}, {50.0, 50.0}, {200.0, 200.0}});
    for (double r : {0.0, 13.0, 50.0, 120.5, 200.0, 250.0}) EXPECT_NEAR(map.request_for(r), r, 1e-12);
    EXPECT_TRUE(RateCorrectionMap{}.is_identity());
    EXPECT_EQ(RateCorrectionMap{}.request_for(42.0), 42.0);
}

TEST(rate_correction_map, inverts_piecewise_linear_transfer) {
    const RateCorrectionMap map({{0.0, 0.0}, {100.0, 80.0}, {200.0, 120.0}});
    EXPECT_NEAR(map.request_for(40.0), 50.0, 1e-12);
    EXPECT_NEAR(map.request_for(100.0), 150.0, 1e-12);
    EXPECT_NEAR(map.measured_for(150.0), 100.0, 1e-12);
    // Extrapolates along the last segment.
    EXPECT_NEAR(map.request_for(140.0), 250.0, 1e-12);
    EXPECT_EQ(map.request_for(0.0), 0.0);
}

TEST(rate_correction_map, rejects_invalid_knots) {
    using Knots = std::vector<RateCorrectionMap::Knot>;
    EXPECT_THROW(RateCorrectionMap(Knots{{0.0, 0.0}}), std::invalid_argument);
    EXPECT_THROW(RateCorrectionMap(Knots{{10.0, 1.0}, {10.0, 2.0}}), std::invalid_argument);
    EXPECT_THROW(RateCorrectionMap(Knots{{0.0, -1.0}, {10.0, 2.0}}), std::invalid_argument);
    EXPECT_THROW(RateCorrectionMap(Knots{{0.0, 5.0}, {10.0, 5.0}}), calibration_error);
}

TEST(rate_correction_map, text_round_trip) {
    const RateCorrectionMap map({{0.0, 0.5}, {100.0, 79.25}, {200.0, 161.0 / 3.0 * 3.0}});
    std::stringstream ss;
    write_rate_map(ss, map);
    const auto back = read_rate_map(ss);
    ASSERT_EQ(back.knots().size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back.knots()[i], map.knots()[i]);
}

TEST(calibrate_rates, identity_hardware_gives_near_identity_map) {
    ChipConfig config;
    const auto requested = grid(0.0, 100.0, 20.0);
    const auto map = calibrate_rates(config, MismatchModel{0.0, 1}, requested, 5.0, 10, 3);
    double worst = 0.0;
    for (const auto& [req, meas] : map.knots()) worst = std::max(worst, std::abs(req - meas));
    EXPECT_LT(worst, 1.0);
}

TEST(calibrate_rates, inverts_known_distortion) {
    ChipConfig config;
    config.generator = {0.8, 0.0};
    const auto map = calibrate_rates(config, MismatchModel{}, grid(0.0, 200.0, 20.0), 2.0, 5, 4);
    for (double desired = 20.0; desired <= 100.0; desired += 10.0)
        EXPECT_NEAR(map.request_for(desired) / desired, 1.25, 0.05) << "desired " << desired;
}

TEST(calibrate_rates, reduces_error_on_held_out_grid) {
    ChipConfig config;
    config.generator = {0.8, 0.0};
    const auto map = calibrate_rates(config, MismatchModel{}, grid(0.0, 200.0, 20.0), 1.0, 4, 5);
    const auto held_out = grid(25.0, 95.0, 10.0);
    const auto check = check_rate_correction(config, MismatchModel{}, map, held_out, 1.0, 4, 6);
    EXPECT_LT(check.max_error_after, check.max_error_before);
    EXPECT_GT(check.max_error_before, 10.0);
}

TEST(calibrate_rates, flat_transfer_cannot_be_inverted) {
    ChipConfig config;
    config.generator = {1.0, -60.0};
    EXPECT_THROW(calibrate_rates(config, MismatchModel{}, grid(0.0, 100.0, 20.0), 1.0, 2, 1), calibration_error);
}

TEST(calibrate_rates, grid_must_stay_within_range) {
    const std::vector<double> bad{0.0, 100.0, 250.0};
    EXPECT_THROW(calibrate_rates(ChipConfig{}, MismatchModel{}, bad, 1.0, 1, 1), std::invalid_argument);
}

TEST(measure_ff_curves, zero_weight_is_flat_zero) {
    const std::vector<int> counts{0};
    const auto pre = grid(20.0, 100.0, 20.0);
    const auto curves = measure_ff_curves(ChipConfig{}, MismatchModel{}, counts, pre, 1.0, 2, 1);
    ASSERT_EQ(curves.size(), 1u);
    for (const auto& [p, post] : curves[0].points) EXPECT_EQ(post, 0.0);
}

TEST(measure_ff_curves, ordered_in_weight_and_pre_rate) {
    const std::vector<int> counts{8, 16, 32, 63};
    const auto pre = grid(20.0, 100.0, 10.0);
    const auto curves = measure_ff_curves(ChipConfig{}, MismatchModel{}, counts, pre, 1.0, 3, 2);
    ASSERT_EQ(curves.size(), counts.size());
    for (std::size_t c = 0; c < curves.size(); ++c) {
        EXPECT_EQ(curves[c].weight_count, counts[c]);
        for (std::size_t i = 1; i < pre.size(); ++i)
            EXPECT_GE(curves[c].points[i].second, curves[c].points[i - 1].second) << "count " << counts[c];
        if (c > 0)
            for (std::size_t i = 0; i < pre.size(); ++i)
                EXPECT_GE(curves[c].points[i].second, curves[c - 1].points[i].second) << "pre " << pre[i];
    }
}

TEST(measure_ff_curves, large_counts_saturate) {
    // A 20 ms refractory period caps members at 50 Hz; count 63 at 100 Hz
    // pre-rate runs close to that cap.
    ChipConfig config;
    for (auto& p : config.core_params) p.refractory = 0.02;
    const std::vector<int> counts{32, 63};
    const std::vector<double> pre{40.0, 100.0};
    const auto curves = measure_ff_curves(config, MismatchModel{}, counts, pre, 2.0, 3, 3);
    const double gap40 = curves[1].points[0].second - curves[0].points[0].second;
    const double gap100 = curves[1].points[1].second - curves[0].points[1].second;
    EXPECT_LT(gap100, gap40);
}

TEST(measure_ff_curves, infeasible_count_is_rejected) {
    const std::vector<int> counts{65};
    const std::vector<double> pre{50.0};
    EXPECT_THROW(measure_ff_curves(ChipConfig{}, MismatchModel{}, counts, pre, 1.0, 1, 1), topology_error);
}

TEST(fit_line, exact_line) {
    const std::vector<std::pair<double, double>> pts{{-2.0, 7.0}, {0.0, 3.0}, {1.0, 1.0}, {4.0, -5.0}};
    const auto f = fit_line(pts);
    EXPECT_NEAR(f.slope, -2.0, 1e-12);
    EXPECT_NEAR(f.intercept, 3.0, 1e-12);
    EXPECT_NEAR(f.r_squared, 1.0, 1e-12);
}

TEST(tune_controller, linear_corrective_fit) {
    const auto [net, pair] = controller_loop();
    const auto errors = grid(-20.0, 20.0, 5.0);
    const auto cal = tune_controller(net, pair, errors, 1.0, 5, 7);
    EXPECT_GE(cal.r_squared, 0.95);
    EXPECT_TRUE(cal.corrective());
    EXPECT_LT(std::abs(cal.intercept), 2.0);
    EXPECT_NEAR(cal.kappa, 1.0 / std::abs(cal.slope), 1e-12);
    // Positive error (output too high) gives negative feedback.
    EXPECT_LT(cal.points.back().second, 0.0);
    EXPECT_GT(cal.points.front().second, 0.0);
}

TEST(tune_controller, doubling_output_gains_doubles_slope) {
    const auto [net, pair] = controller_loop();
    const auto errors = grid(-20.0, 20.0, 5.0);
    ControllerGains doubled = pair.gains;
    doubled.output_to_pos *= 2;
    doubled.output_to_neg *= 2;
    const auto base = measure_controller(net, pair, pair.gains, errors, 1.0, 5, 8);
    const auto twice = measure_controller(net, pair, doubled, errors, 1.0, 5, 8);
    EXPECT_NEAR(std::abs(twice.slope) / std::abs(base.slope), 2.0, 0.3)
        << base.slope << " " << twice.slope;
}

TEST(tune_controller, reports_failure_with_best_fit) {
    ControllerGains weak;
    weak.target_to_pos = weak.output_to_pos = weak.target_to_neg = weak.output_to_neg = 1;
    weak.bias_current = 0.0;
    const auto [net, pair] = controller_loop(weak);
    const auto errors = grid(-20.0, 20.0, 10.0);
    ControllerTuning tuning;
    tuning.grid_size = 2;
    try {
        tune_controller(net, pair, errors, 0.5, 1, 1, tuning);
        FAIL() << "expected calibration_error";
    } catch (const calibration_error& e) {
        EXPECT_NE(std::string(e.what()).find("R^2"), std::string::npos) << e.what();
    }
}

TEST(tune_controller, error_grid_must_span_both_signs) {
    const auto [net, pair] = controller_loop();
    const std::vector<double> one_sided{0.0, 5.0, 10.0};
    EXPECT_THROW(tune_controller(net, pair, one_sided, 0.5, 1, 1), std::invalid_argument);
}

TEST(controller_calibration, text_round_trip) {
    ControllerCalibration c;
    c.gains.output_to_pos = 17;
    c.slope = -0.93;
    c.intercept = 0.25;
    c.r_squared = 0.991;
    c.kappa = 1.0 / 0.93;
    c.points = {{-20.0, 18.5}, {0.0, 0.1}, {20.0, -18.0}};
    std::stringstream ss;
    write_controller_calibration(ss, c);
    const auto back = read_controller_calibration(ss);
    EXPECT_EQ(back.gains, c.gains);
    EXPECT_EQ(back.slope, c.slope);
    EXPECT_EQ(back.intercept, c.intercept);
    EXPECT_EQ(back.kappa, c.kappa);
    EXPECT_EQ(back.points, c.points);
    std::stringstream bad("format=other\n");
    EXPECT_THROW(read_controller_calibration(bad), schema_error);
}
