#include "sfc/spike_train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "sfc/errors.hpp"
#include "sfc/random.hpp"

namespace sfc {

SpikeTrain::SpikeTrain(std::size_t channel_count, double window)
    : SpikeTrain(channel_count, window, {}) {}

SpikeTrain::SpikeTrain(std::size_t channel_count, double window, std::vector<SpikeEvent> events)
    : channel_count_(channel_count), window_(window), events_(std::move(events)) {
    if (channel_count_ == 0) throw std::invalid_argument("spike train needs at least one channel");
    if (!(window_ > 0.0) || !std::isfinite(window_)) throw std::invalid_argument("spike train window must be positive");
    std::sort(events_.begin(), events_.end(), spike_order);
    for (const auto& e : events_) {
        if (!(e.time >= 0.0 && e.time < window_))
            throw std::invalid_argument("spike time " + std::to_string(e.time) + " outside [0, window)");
        if (e.channel >= channel_count_)
            throw std::invalid_argument("spike channel " + std::to_string(e.channel) + " out of range");
    }
}

std::vector<std::size_t> SpikeTrain::counts() const {
    std::vector<std::size_t> c(channel_count_, 0);
    for (const auto& e : events_) ++c[e.channel];
    return c;
}

RateVector::RateVector(std::vector<double> rates) : rates_(std::move(rates)) {
    for (double r : rates_) {
        if (!std::isfinite(r)) throw std::invalid_argument("rate must be finite");
        if (r < 0.0) throw std::invalid_argument("rate must be non-negative");
    }
}

RateVector::RateVector(std::initializer_list<double> rates) : RateVector(std::vector<double>(rates)) {}

std::size_t step_count(double window, double dt) {
    return static_cast<std::size_t>(std::ceil(window / dt - 1e-9));
}

std::size_t time_bin(double time, double dt, std::size_t steps) {
    const auto bin = static_cast<std::size_t>(std::max(0.0, std::floor(time / dt + 1e-9)));
    return std::min(bin, steps - 1);
}

SpikeTrain poisson_generate(const RateVector& rates, double window, std::uint64_t seed) {
    if (!(window > 0.0)) throw std::invalid_argument("poisson_generate: window must be positive");
    if (rates.size() == 0) throw std::invalid_argument("poisson_generate: no channels");
    std::vector<SpikeEvent> events;
    for (std::size_t c = 0; c < rates.size(); ++c) {
        const double rate = rates[c];
        if (rate == 0.0) continue;
        auto rng = make_stream(seed, c, stream_purpose::poisson);
        double t = exponential(rng, rate);
        while (t < window) {
            events.push_back({t, static_cast<std::uint32_t>(c)});
            t += exponential(rng, rate);
        }
    }
    return SpikeTrain(rates.size(), window, std::move(events));
}

RateVector estimate_rates(const SpikeTrain& train) {
    const auto counts = train.counts();
    std::vector<double> rates(counts.size());
    for (std::size_t c = 0; c < counts.size(); ++c) rates[c] = static_cast<double>(counts[c]) / train.window();
    return RateVector(std::move(rates));
}

TimeSeries filtered_trace(const SpikeTrain& train, double tau, double dt) {
    if (!(tau > 0.0) || !(dt > 0.0)) throw std::invalid_argument("filtered_trace: tau and dt must be positive");
    if (dt > tau / 2.0) throw std::invalid_argument("filtered_trace: dt must not exceed tau/2");
    if (dt > train.window()) throw std::invalid_argument("filtered_trace: dt exceeds window");

    const std::size_t steps = step_count(train.window(), dt);
    TimeSeries out(train.channel_count(), steps, dt);
    // Bin first, then run the recursion per channel.
    for (const auto& e : train.events()) out(e.channel, time_bin(e.time, dt, steps)) += 1.0 / tau;
    const double decay = std::exp(-dt / tau);
    for (std::size_t c = 0; c < out.channels(); ++c) {
        auto x = out.channel(c);
        for (std::size_t k = 1; k < steps; ++k) x[k] += x[k - 1] * decay;
    }
    return out;
}

SpikeTrain merge_channels(const SpikeTrain& train, std::size_t group_size) {
    if (group_size == 0 || train.channel_count() % group_size != 0)
        throw std::invalid_argument("merge_channels: channel count not divisible by group size");
    std::vector<SpikeEvent> events(train.events().begin(), train.events().end());
    for (auto& e : events) e.channel /= static_cast<std::uint32_t>(group_size);
    return SpikeTrain(train.channel_count() / group_size, train.window(), std::move(events));
}

SpikeTrain stack_channels(const SpikeTrain& a, const SpikeTrain& b) {
    if (a.window() != b.window()) throw std::invalid_argument("stack_channels: windows differ");
    std::vector<SpikeEvent> events(a.events().begin(), a.events().end());
    events.reserve(a.size() + b.size());
    const auto offset = static_cast<std::uint32_t>(a.channel_count());
    for (auto e : b.events()) {
        e.channel += offset;
        events.push_back(e);
    }
    return SpikeTrain(a.channel_count() + b.channel_count(), a.window(), std::move(events));
}

void write_spike_train(std::ostream& out, const SpikeTrain& train) {
    const auto old_precision = out.precision(17);
    out << "channels=" << train.channel_count() << " window=" << train.window() << '\n';
    for (const auto& e : train.events()) out << e.time << ' ' << e.channel << '\n';
    out.precision(old_precision);
}

SpikeTrain read_spike_train(std::istream& in) {
    std::string header;
    if (!std::getline(in, header)) throw schema_error("spike train: missing header");
    std::size_t channels = 0;
    double window = 0.0;
    {
        std::istringstream hs(header);
        std::string a, b;
        hs >> a >> b;
        if (a.rfind("channels=", 0) != 0 || b.rfind("window=", 0) != 0)
            throw schema_error("spike train: malformed header '" + header + "'");
        channels = std::stoul(a.substr(9));
        window = std::stod(b.substr(7));
    }
    std::vector<SpikeEvent> events;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        SpikeEvent e{};
        if (!(ls >> e.time >> e.channel)) throw schema_error("spike train: malformed line '" + line + "'");
        events.push_back(e);
    }
    const bool sorted = std::is_sorted(events.begin(), events.end(), spike_order);
    if (!sorted) throw schema_error("spike train: events not sorted");
    return SpikeTrain(channels, window, std::move(events));
}

} // namespace sfc
