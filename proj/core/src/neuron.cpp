#include "sfc/neuron.hpp"

#include <cmath>
#include <stdexcept>

#include "sfc/errors.hpp"

namespace sfc {

namespace {

constexpr double clock_eps = 1e-9;

void check_dt(double dt, double tau) {
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (dt > tau / 2.0) throw std::invalid_argument("dt must not exceed tau/2");
}

double rate_from_spikes(const std::vector<double>& times, double window) {
    if (times.size() >= 2) return static_cast<double>(times.size() - 1) / (times.back() - times.front());
    return static_cast<double>(times.size()) / window;
}

std::vector<double> simulate_fi(const NeuronKernel& kernel, std::span<const double> grid, double sim_window) {
    if (sim_window < 1.0) throw std::invalid_argument("f_i_curve: sim_window must be at least 1 s");
    const std::size_t steps = step_count(sim_window, kernel.dt());
    std::vector<double> rates;
    rates.reserve(grid.size());
    for (double input : grid) {
        NeuronState s{kernel.reset(), std::nullopt, 0.0};
        std::vector<double> times;
        for (std::size_t k = 0; k < steps; ++k)
            if (kernel.step(s, input)) times.push_back(s.clock);
        rates.push_back(rate_from_spikes(times, sim_window));
    }
    return rates;
}

} // namespace

void LifParams::validate() const {
    if (!(tau_mem > 0.0)) throw std::invalid_argument("LifParams: tau_mem must be positive");
    if (!(threshold > reset)) throw std::invalid_argument("LifParams: threshold must exceed reset");
    if (!(refractory >= 0.0)) throw std::invalid_argument("LifParams: refractory must be non-negative");
}

void AdexpParams::validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("AdexpParams: tau must be positive");
    if (!(i_tau > 0.0)) throw std::invalid_argument("AdexpParams: i_tau must be positive");
    if (!(i_gain > 0.0)) throw std::invalid_argument("AdexpParams: i_gain must be positive");
    if (!(i_a >= 0.0)) throw std::invalid_argument("AdexpParams: i_a must be non-negative");
    if (!(i_a < i_tau)) throw std::invalid_argument("AdexpParams: i_a must be below i_tau");
    if (!(spike_threshold > reset_current)) throw std::invalid_argument("AdexpParams: threshold must exceed reset");
    if (!(refractory >= 0.0)) throw std::invalid_argument("AdexpParams: refractory must be non-negative");
}

NeuronKernel NeuronKernel::lif(const LifParams& p, double dt) {
    p.validate();
    check_dt(dt, p.tau_mem);
    NeuronKernel k;
    k.decay_ = std::exp(-dt / p.tau_mem);
    k.drive_gain_ = 1.0;
    k.feedback_ = 0.0;
    k.threshold_ = p.threshold;
    k.reset_ = p.reset;
    k.refractory_ = p.refractory;
    k.dt_ = dt;
    return k;
}

NeuronKernel NeuronKernel::adexp(const AdexpParams& p, double dt) {
    p.validate();
    check_dt(dt, p.tau);
    NeuronKernel k;
    k.decay_ = std::exp(-dt / p.tau);
    k.drive_gain_ = p.gain_ratio();
    k.feedback_ = p.feedback_ratio();
    k.threshold_ = p.spike_threshold;
    k.reset_ = p.reset_current;
    k.refractory_ = p.refractory;
    k.dt_ = dt;
    return k;
}

bool NeuronKernel::step(NeuronState& s, double input_current) const {
    if (!std::isfinite(input_current)) throw numeric_error("neuron step: non-finite input current");
    s.clock += dt_;
    if (s.last_spike && s.clock - *s.last_spike <= refractory_ + clock_eps) {
        s.membrane = reset_;
        return false;
    }
    const double m = s.membrane;
    s.membrane = m * decay_ + (drive_gain_ * input_current + feedback_ * m) * (1.0 - decay_);
    if (s.membrane >= threshold_) {
        s.membrane = reset_;
        s.last_spike = s.clock;
        return true;
    }
    return false;
}

StepResult lif_step(const NeuronState& state, const LifParams& params, double input_current, double dt) {
    StepResult r{state, false};
    r.spiked = NeuronKernel::lif(params, dt).step(r.state, input_current);
    return r;
}

StepResult adexp_step(const NeuronState& state, const AdexpParams& params, double input_current, double dt) {
    StepResult r{state, false};
    r.spiked = NeuronKernel::adexp(params, dt).step(r.state, input_current);
    return r;
}

double lif_closed_form_rate(const LifParams& params, double input_current) {
    const double theta = params.threshold - params.reset;
    const double drive = input_current - params.reset;
    if (drive <= theta) return 0.0;
    return 1.0 / (params.refractory + params.tau_mem * std::log(drive / (drive - theta)));
}

double adexp_fixed_point(const AdexpParams& params, double input_current) {
    return input_current * params.gain_ratio() / (1.0 - params.feedback_ratio());
}

std::vector<double> f_i_curve(const LifParams& params, std::span<const double> input_grid, double sim_window,
                              double dt) {
    return simulate_fi(NeuronKernel::lif(params, dt), input_grid, sim_window);
}

std::vector<double> f_i_curve(const AdexpParams& params, std::span<const double> input_grid, double sim_window,
                              double dt) {
    return simulate_fi(NeuronKernel::adexp(params, dt), input_grid, sim_window);
}

} // namespace sfc
