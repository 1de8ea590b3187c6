#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "sfc/errors.hpp"
#include "sfc/neuron.hpp"

using namespace sfc;

namespace {

// Reference f-I relation for a LIF with reset 0, written out independently
// of the library.
double reference_rate(double tau, double theta, double t_ref, double input) {
    if (input <= theta) return 0.0;
    return 1.0 / (t_ref + tau * std::log(input / (input - theta)));
}

} // namespace

TEST(lif_step, equilibrium_at_zero) {
    const auto r = lif_step(NeuronState{}, LifParams{}, 0.0);
    EXPECT_EQ(r.state.membrane, 0.0);
    EXPECT_FALSE(r.spiked);
}

TEST(lif_step, converges_to_subthreshold_input) {
    const LifParams p;
    NeuronState s;
    const double input = 0.7;
    // 20 tau leaves a residual of input * e^-20, well under 1e-6.
    const int steps = static_cast<int>(std::lround(20.0 * p.tau_mem / default_dt));
    for (int k = 0; k < steps; ++k) {
        const auto r = lif_step(s, p, input);
        ASSERT_FALSE(r.spiked);
        s = r.state;
    }
    EXPECT_NEAR(s.membrane, input, 1e-6);
}

TEST(lif_step, exponential_euler_update) {
    const LifParams p;
    const NeuronState s{0.3, std::nullopt, 0.0};
    const auto r = lif_step(s, p, 0.9, 1e-4);
    const double decay = std::exp(-1e-4 / p.tau_mem);
    EXPECT_NEAR(r.state.membrane, 0.3 * decay + 0.9 * (1.0 - decay), 1e-15);
}

TEST(lif_step, rejects_non_finite_input) {
    EXPECT_THROW(lif_step(NeuronState{}, LifParams{}, std::nan("")), numeric_error);
    EXPECT_THROW(lif_step(NeuronState{}, LifParams{}, INFINITY), numeric_error);
}

TEST(lif_step, rejects_bad_parameters) {
    LifParams p;
    p.threshold = -1.0;
    EXPECT_THROW(lif_step(NeuronState{}, p, 0.0), std::invalid_argument);
    EXPECT_THROW(lif_step(NeuronState{}, LifParams{}, 0.0, 0.011), std::invalid_argument);
}

TEST(lif_step, steady_rate_matches_closed_form) {
    const LifParams p;
    // Spike times snap to the step grid; the bound holds while an interspike
    // interval spans at least ~50 steps (rates up to ~200 Hz).
    const std::vector<double> grid{1.05, 1.2, 1.5, 2.0, 3.0, 5.0, 7.0};
    const auto rates = f_i_curve(p, grid, 2.0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double expected = reference_rate(p.tau_mem, p.threshold, p.refractory, grid[i]);
        EXPECT_NEAR(rates[i], expected, 0.02 * expected) << "input " << grid[i];
    }
}

TEST(adexp_step, zero_fixed_point) {
    const auto r = adexp_step(NeuronState{}, AdexpParams{}, 0.0);
    EXPECT_EQ(r.state.membrane, 0.0);
    EXPECT_FALSE(r.spiked);
}

TEST(adexp_step, without_feedback_matches_lif) {
    AdexpParams a;
    a.i_a = 0.0;
    a.i_gain = 2.0;
    a.i_tau = 1.6;
    LifParams l;
    l.tau_mem = a.tau;
    l.threshold = a.spike_threshold;
    l.reset = a.reset_current;
    l.refractory = a.refractory;
    NeuronState sa, sl;
    int spikes = 0;
    for (int k = 0; k < 20000; ++k) {
        const double input = 0.6 + 0.5 * std::sin(k * 1e-3);
        const auto ra = adexp_step(sa, a, input);
        const auto rl = lif_step(sl, l, input * a.i_gain / a.i_tau);
        ASSERT_EQ(ra.spiked, rl.spiked) << "step " << k;
        ASSERT_NEAR(ra.state.membrane, rl.state.membrane, 1e-9) << "step " << k;
        spikes += ra.spiked;
        sa = ra.state;
        sl = rl.state;
    }
    EXPECT_GT(spikes, 0);
}

TEST(adexp_step, feedback_doubles_subthreshold_gain) {
    AdexpParams with;
    with.i_a = 0.5;
    AdexpParams without = with;
    without.i_a = 0.0;
    const double input = 0.2;
    NeuronState a, b;
    for (int k = 0; k < 20000; ++k) {
        a = adexp_step(a, with, input).state;
        b = adexp_step(b, without, input).state;
    }
    EXPECT_NEAR(a.membrane / b.membrane, 2.0, 1e-6);
    // Independent fixed-point algebra.
    EXPECT_NEAR(a.membrane, input * (with.i_gain / with.i_tau) / (1.0 - with.i_a / with.i_tau), 1e-6);
    EXPECT_NEAR(adexp_fixed_point(with, input), 0.4, 1e-12);
}

TEST(adexp_step, rejects_unstable_feedback) {
    AdexpParams p;
    p.i_a = p.i_tau;
    EXPECT_THROW(adexp_step(NeuronState{}, p, 0.0), std::invalid_argument);
}

TEST(f_i_curve, zero_input_is_silent) {
    const std::vector<double> zero{0.0};
    EXPECT_EQ(f_i_curve(LifParams{}, zero, 1.0)[0], 0.0);
    EXPECT_EQ(f_i_curve(AdexpParams{}, zero, 1.0)[0], 0.0);
}

TEST(f_i_curve, non_decreasing_on_increasing_grid) {
    std::vector<double> grid;
    for (int i = 0; i <= 40; ++i) grid.push_back(0.25 * i);
    for (const auto& rates : {f_i_curve(LifParams{}, grid, 1.0), f_i_curve(AdexpParams{}, grid, 1.0)})
        for (std::size_t i = 1; i < rates.size(); ++i) EXPECT_GE(rates[i], rates[i - 1]) << "grid index " << i;
}

TEST(f_i_curve, lif_max_relative_error_below_two_percent) {
    const LifParams p;
    std::vector<double> grid;
    for (double i = 1.1; i <= 8.0; i += 0.3) grid.push_back(i);
    const auto rates = f_i_curve(p, grid, 1.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double expected = reference_rate(p.tau_mem, p.threshold, p.refractory, grid[i]);
        worst = std::max(worst, std::abs(rates[i] - expected) / expected);
    }
    EXPECT_LT(worst, 0.02);
    EXPECT_THROW(f_i_curve(p, grid, 0.5), std::invalid_argument);
}

TEST(neuron, halving_dt_changes_trajectory_below_one_percent) {
    const AdexpParams p;
    auto input = [](double t) { return 0.45 + 0.2 * std::sin(2.0 * std::numbers::pi * 5.0 * t); };
    auto run = [&](double dt) {
        const auto kernel = NeuronKernel::adexp(p, dt);
        NeuronState s;
        std::vector<double> trace;
        const auto steps = static_cast<std::size_t>(std::lround(1.0 / dt));
        for (std::size_t k = 0; k < steps; ++k) {
            kernel.step(s, input(k * dt));
            trace.push_back(s.membrane);
        }
        return trace;
    };
    const auto coarse = run(1e-4);
    const auto fine = run(5e-5);
    double diff = 0.0, peak = 0.0;
    for (std::size_t k = 0; k < coarse.size(); ++k) {
        diff = std::max(diff, std::abs(coarse[k] - fine[2 * k + 1]));
        peak = std::max(peak, std::abs(fine[2 * k + 1]));
    }
    EXPECT_LT(diff, 0.01 * peak);
}

TEST(neuron, refractory_spacing) {
    for (double input : {1.5, 5.0, 50.0}) {
        const LifParams p;
        const auto kernel = NeuronKernel::lif(p, default_dt);
        NeuronState s;
        std::vector<double> times;
        for (int k = 0; k < 10000; ++k)
            if (kernel.step(s, input)) times.push_back(s.clock);
        ASSERT_GT(times.size(), 10u);
        for (std::size_t i = 1; i < times.size(); ++i) EXPECT_GT(times[i] - times[i - 1], p.refractory);
    }
}

TEST(neuron, membrane_at_or_below_threshold_after_step) {
    const AdexpParams p;
    const auto kernel = NeuronKernel::adexp(p, default_dt);
    NeuronState s;
    for (int k = 0; k < 10000; ++k) {
        kernel.step(s, 3.0);
        ASSERT_LT(s.membrane, p.spike_threshold);
    }
}
