#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <vector>

namespace sfc {

// Integration step shared by traces and neuron models.
inline constexpr double default_dt = 1e-4;

struct SpikeEvent {
    double time;           // seconds, in [0, window)
    std::uint32_t channel;

    friend bool operator==(const SpikeEvent&, const SpikeEvent&) = default;
};

// Orders by time, ties by ascending channel.
inline bool spike_order(const SpikeEvent& a, const SpikeEvent& b) noexcept {
    return a.time < b.time || (a.time == b.time && a.channel < b.channel);
}

// Timestamped spike events per channel over a finite window. Immutable once
// constructed; the constructor sorts and validates events.
class SpikeTrain {
public:
    SpikeTrain(std::size_t channel_count, double window);
    SpikeTrain(std::size_t channel_count, double window, std::vector<SpikeEvent> events);

    std::size_t channel_count() const noexcept { return channel_count_; }
    double window() const noexcept { return window_; }
    std::span<const SpikeEvent> events() const noexcept { return events_; }
    std::size_t size() const noexcept { return events_.size(); }
    bool empty() const noexcept { return events_.empty(); }

    std::vector<std::size_t> counts() const;

    friend bool operator==(const SpikeTrain&, const SpikeTrain&) = default;

private:
    std::size_t channel_count_;
    double window_;
    std::vector<SpikeEvent> events_;
};

// Non-negative firing rates in Hz, one per channel.
class RateVector {
public:
    RateVector() = default;
    explicit RateVector(std::vector<double> rates);
    RateVector(std::initializer_list<double> rates);

    std::size_t size() const noexcept { return rates_.size(); }
    double operator[](std::size_t i) const { return rates_[i]; }
    std::span<const double> values() const noexcept { return rates_; }
    auto begin() const noexcept { return rates_.begin(); }
    auto end() const noexcept { return rates_.end(); }

    friend bool operator==(const RateVector&, const RateVector&) = default;

private:
    std::vector<double> rates_;
};

// Dense channel-by-step matrix of sampled values.
class TimeSeries {
public:
    TimeSeries() = default;
    TimeSeries(std::size_t channels, std::size_t steps, double dt)
        : channels_(channels), steps_(steps), dt_(dt), data_(channels * steps, 0.0) {}

    std::size_t channels() const noexcept { return channels_; }
    std::size_t steps() const noexcept { return steps_; }
    double dt() const noexcept { return dt_; }

    double& operator()(std::size_t channel, std::size_t step) { return data_[channel * steps_ + step]; }
    double operator()(std::size_t channel, std::size_t step) const { return data_[channel * steps_ + step]; }

    std::span<const double> channel(std::size_t c) const { return {data_.data() + c * steps_, steps_}; }
    std::span<double> channel(std::size_t c) { return {data_.data() + c * steps_, steps_}; }

private:
    std::size_t channels_ = 0;
    std::size_t steps_ = 0;
    double dt_ = 0.0;
    std::vector<double> data_;
};

// Number of integration steps covering a window; tolerant to window/dt
// landing a hair above an integer.
std::size_t step_count(double window, double dt);

// Step index a spike time falls into, clamped to [0, steps).
std::size_t time_bin(double time, double dt, std::size_t steps);

// Independent homogeneous Poisson process per channel. Channel c draws from
// the stream keyed by (seed, c), so adding channels leaves others unchanged.
SpikeTrain poisson_generate(const RateVector& rates, double window, std::uint64_t seed);

// Event count per channel divided by the window.
RateVector estimate_rates(const SpikeTrain& train);

// Exponentially filtered spike trace, x <- x*exp(-dt/tau) + (spikes in bin)/tau.
TimeSeries filtered_trace(const SpikeTrain& train, double tau, double dt = default_dt);

// Collapses member-resolution channels into groups of `group_size`
// consecutive channels (population units).
SpikeTrain merge_channels(const SpikeTrain& train, std::size_t group_size);

// Concatenates channels of trains sharing one window; b's channels follow a's.
SpikeTrain stack_channels(const SpikeTrain& a, const SpikeTrain& b);

// Line-oriented text format: `channels=<n> window=<s>` then `time channel`.
void write_spike_train(std::ostream& out, const SpikeTrain& train);
SpikeTrain read_spike_train(std::istream& in);

} // namespace sfc
