#pragma once

#include <optional>
#include <span>
#include <vector>

#include "sfc/spike_train.hpp"

namespace sfc {

// Leaky integrate-and-fire, tau * dv/dt = -v + I.
struct LifParams {
    double tau_mem = 0.020;
    double threshold = 1.0;
    double reset = 0.0;
    double refractory = 0.002;

    void validate() const;
};

// Current-mode adaptive exponential neuron with adaptation disabled:
//
//   tau * dI_mem/dt + I_mem = I_in * I_gain / I_tau + I_a * I_mem / I_tau
//
// The second right-hand term is the positive feedback loop of the circuit.
// Spikes are threshold-and-reset on I_mem.
struct AdexpParams {
    double tau = 0.020;
    double i_gain = 1.0;
    double i_tau = 1.0;
    double i_a = 0.2;
    double spike_threshold = 1.0;
    double reset_current = 0.0;
    double refractory = 0.002;

    double gain_ratio() const noexcept { return i_gain / i_tau; }
    double feedback_ratio() const noexcept { return i_a / i_tau; }
    void validate() const;
};

struct NeuronState {
    double membrane = 0.0;
    std::optional<double> last_spike;
    double clock = 0.0;  // simulated time at the end of the last step
};

struct StepResult {
    NeuronState state;
    bool spiked = false;
};

// Precomputed per-neuron update for a fixed dt. Both models reduce to
//   m <- m * decay + (drive_gain * I_in + feedback * m) * (1 - decay)
// with feedback = 0 for LIF; the explicit feedback term is evaluated at the
// start of the step.
class NeuronKernel {
public:
    static NeuronKernel lif(const LifParams& p, double dt);
    static NeuronKernel adexp(const AdexpParams& p, double dt);

    // Advances in place; returns true on a spike.
    bool step(NeuronState& s, double input_current) const;

    double threshold() const noexcept { return threshold_; }
    double reset() const noexcept { return reset_; }
    double dt() const noexcept { return dt_; }

private:
    double decay_ = 0.0;
    double drive_gain_ = 1.0;
    double feedback_ = 0.0;
    double threshold_ = 1.0;
    double reset_ = 0.0;
    double refractory_ = 0.0;
    double dt_ = default_dt;
};

StepResult lif_step(const NeuronState& state, const LifParams& params, double input_current, double dt = default_dt);
StepResult adexp_step(const NeuronState& state, const AdexpParams& params, double input_current, double dt = default_dt);

// Steady-state firing rate of a LIF neuron under constant input, zero for
// subthreshold input.
double lif_closed_form_rate(const LifParams& params, double input_current);

// Fixed point of the subthreshold ADEXP membrane under constant input.
double adexp_fixed_point(const AdexpParams& params, double input_current);

// Firing rate per constant input level, simulated from the reset state. The
// rate is taken from inter-spike intervals when at least two spikes occur,
// otherwise count / window.
std::vector<double> f_i_curve(const LifParams& params, std::span<const double> input_grid, double sim_window,
                              double dt = default_dt);
std::vector<double> f_i_curve(const AdexpParams& params, std::span<const double> input_grid, double sim_window,
                              double dt = default_dt);

} // namespace sfc
