#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "sfc/chip.hpp"
#include "sfc/spike_train.hpp"

namespace sfc {

// Connection magnitudes of one controller motif; wire_controller applies the
// signs (target excites the positive unit and inhibits the negative one, the
// output does the opposite; the positive unit excites the output, the
// negative one inhibits it).
struct ControllerGains {
    int target_to_pos = 12;
    int output_to_pos = 12;
    int target_to_neg = 12;
    int output_to_neg = 12;
    int pos_to_output = 4;
    int neg_to_output = 4;
    // DC drive of both controller units, below the 0.8 rheobase so the pair
    // is silent without input. At 0.6 the noise-driven onset and the
    // saturating LIF curve balance and the rate is close to proportional to
    // drive, which keeps the error-to-feedback slope proportional to gain.
    double bias_current = 0.6;
    // Added to the positive unit's bias and subtracted from the negative
    // unit's; calibration uses it to zero the feedback at zero error.
    double bias_trim = 0.0;

    double positive_bias() const noexcept { return bias_current + bias_trim; }
    double negative_bias() const noexcept { return bias_current - bias_trim; }

    friend bool operator==(const ControllerGains&, const ControllerGains&) = default;
};

// Positive and negative control populations attached to one output unit.
struct ControllerPair {
    std::uint32_t output_unit = 0;
    std::uint32_t positive_unit = 0;
    std::uint32_t negative_unit = 0;
    std::uint32_t target_channel = 0;
    ControllerGains gains{};
    // Maps controller rate difference to feedback (kappa) and removes the
    // calibrated zero-error offset, in Hz of r+ - r-.
    double feedback_scale = 1.0;
    double feedback_offset = 0.0;
};

// Adds the controller motif for `output_unit` to a topology. The controller
// units inherit the output's population size. Throws capacity_error if the
// motif does not fit the fabric budgets.
ControllerPair wire_controller(Topology& topology, std::uint32_t output_unit, std::uint32_t target_channel,
                               const ControllerGains& gains, const ChipConfig& config);

// Rewrites the six motif connections of an already built network.
void apply_controller_gains(EmulatedNetwork& network, ControllerPair& pair, const ControllerGains& gains);

// Zeroes the two feedback projections onto the output (used for inference).
void disable_feedback(EmulatedNetwork& network, const ControllerPair& pair);

// Real-valued input x output matrix of host-side shadow weights.
class WeightMatrix {
public:
    WeightMatrix() = default;
    WeightMatrix(std::size_t inputs, std::size_t outputs, double learning_rate, double initial = 0.0);

    std::size_t inputs() const noexcept { return inputs_; }
    std::size_t outputs() const noexcept { return outputs_; }
    double learning_rate() const noexcept { return learning_rate_; }
    void set_learning_rate(double eta);

    double& operator()(std::size_t i, std::size_t o) { return w_[i * outputs_ + o]; }
    double operator()(std::size_t i, std::size_t o) const { return w_[i * outputs_ + o]; }
    std::span<const double> values() const noexcept { return w_; }

    friend bool operator==(const WeightMatrix&, const WeightMatrix&) = default;

private:
    std::size_t inputs_ = 0;
    std::size_t outputs_ = 0;
    double learning_rate_ = 0.0;
    std::vector<double> w_;
};

// Delimited text: header row of output-unit ids, one row per input.
// Values are written with round-trip precision.
void write_weights(std::ostream& out, const WeightMatrix& w, std::span<const std::uint32_t> output_ids);
WeightMatrix read_weights(std::istream& in, double learning_rate);

// I_fb(t) = kappa * (trace(pos) - trace(neg)), per channel.
TimeSeries feedback_current(const SpikeTrain& pos, const SpikeTrain& neg, double kappa, double tau_fb,
                            double dt = default_dt);

// Per-step rule: w[i,o] += eta * sum_t I_fb[o](t) * x[i](t) * dt over steps
// [begin, end), where x is the presynaptic trace.
WeightMatrix accumulate_update(WeightMatrix weights, const TimeSeries& input_trace, const TimeSeries& feedback,
                               std::size_t begin, std::size_t end);

// Per-step rule over a whole window. The presynaptic trace (time constant
// tau_in) is divided by `input_population` so population channels contribute
// their mean member trace.
WeightMatrix learning_update(WeightMatrix weights, const SpikeTrain& input_train, const TimeSeries& feedback,
                             double tau_in, double dt = default_dt, double input_population = 1.0);

// Per-window rule from spike counts: w[i,o] += eta * feedback[o] * r_in[i] * window,
// with feedback[o] = kappa * (r+ - r-) - offset already applied by the caller.
WeightMatrix learning_update_window(WeightMatrix weights, const RateVector& input_rates,
                                    std::span<const double> feedback, double window);

} // namespace sfc
