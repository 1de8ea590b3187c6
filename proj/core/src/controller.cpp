#include "sfc/controller.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "sfc/errors.hpp"

namespace sfc {

namespace {

void check_finite_update(double delta, std::size_t i, std::size_t o, std::size_t step) {
    if (!std::isfinite(delta))
        throw numeric_error("learning update non-finite at input " + std::to_string(i) + ", output " +
                            std::to_string(o) + ", step " + std::to_string(step));
}

} // namespace

ControllerPair wire_controller(Topology& topology, std::uint32_t output_unit, std::uint32_t target_channel,
                               const ControllerGains& gains, const ChipConfig& config) {
    if (output_unit >= topology.units.size()) throw topology_error("wire_controller: missing output unit");
    if (target_channel >= topology.virtual_channels) throw topology_error("wire_controller: missing target channel");

    Topology extended = topology;
    const UnitSpec& out = extended.units[output_unit];
    UnitSpec pos{.name = out.name + "+", .population = out.population, .bias_current = gains.positive_bias()};
    UnitSpec neg{.name = out.name + "-", .population = out.population, .bias_current = gains.negative_bias()};

    ControllerPair pair;
    pair.output_unit = output_unit;
    pair.target_channel = target_channel;
    pair.gains = gains;
    pair.positive_unit = extended.add_unit(pos);
    pair.negative_unit = extended.add_unit(neg);

    extended.connect(virtual_node(target_channel), pair.positive_unit, +gains.target_to_pos);
    extended.connect(unit_node(output_unit), pair.positive_unit, -gains.output_to_pos);
    extended.connect(unit_node(output_unit), pair.negative_unit, +gains.output_to_neg);
    extended.connect(virtual_node(target_channel), pair.negative_unit, -gains.target_to_neg);
    extended.connect(unit_node(pair.positive_unit), output_unit, +gains.pos_to_output);
    extended.connect(unit_node(pair.negative_unit), output_unit, -gains.neg_to_output);

    check_topology(extended, config);
    topology = std::move(extended);
    return pair;
}

void apply_controller_gains(EmulatedNetwork& network, ControllerPair& pair, const ControllerGains& gains) {
    const NodeId target = virtual_node(pair.target_channel);
    const NodeId output = unit_node(pair.output_unit);
    const NodeId pos = unit_node(pair.positive_unit);
    const NodeId neg = unit_node(pair.negative_unit);
    // Work on a copy and clear the motif first so transient budgets stay
    // within limits; the network is untouched if the new gains do not fit.
    SynapseFabric trial = network.fabric();
    trial.set(target, pair.positive_unit, 0);
    trial.set(output, pair.positive_unit, 0);
    trial.set(output, pair.negative_unit, 0);
    trial.set(target, pair.negative_unit, 0);
    trial.set(pos, pair.output_unit, 0);
    trial.set(neg, pair.output_unit, 0);
    trial.set(target, pair.positive_unit, +gains.target_to_pos);
    trial.set(output, pair.positive_unit, -gains.output_to_pos);
    trial.set(output, pair.negative_unit, +gains.output_to_neg);
    trial.set(target, pair.negative_unit, -gains.target_to_neg);
    trial.set(pos, pair.output_unit, +gains.pos_to_output);
    trial.set(neg, pair.output_unit, -gains.neg_to_output);
    network.fabric() = std::move(trial);
    network.set_bias_current(pair.positive_unit, gains.positive_bias());
    network.set_bias_current(pair.negative_unit, gains.negative_bias());
    pair.gains = gains;
}

void disable_feedback(EmulatedNetwork& network, const ControllerPair& pair) {
    network.fabric().set(unit_node(pair.positive_unit), pair.output_unit, 0);
    network.fabric().set(unit_node(pair.negative_unit), pair.output_unit, 0);
}

WeightMatrix::WeightMatrix(std::size_t inputs, std::size_t outputs, double learning_rate, double initial)
    : inputs_(inputs), outputs_(outputs), learning_rate_(learning_rate), w_(inputs * outputs, initial) {
    set_learning_rate(learning_rate);
    if (!std::isfinite(initial)) throw std::invalid_argument("WeightMatrix: non-finite initial weight");
}

void WeightMatrix::set_learning_rate(double eta) {
    if (!std::isfinite(eta) || eta < 0.0) throw std::invalid_argument("WeightMatrix: learning rate must be >= 0");
    learning_rate_ = eta;
}

void write_weights(std::ostream& out, const WeightMatrix& w, std::span<const std::uint32_t> output_ids) {
    if (output_ids.size() != w.outputs()) throw std::invalid_argument("write_weights: one id per output required");
    const auto old_precision = out.precision(17);
    out << "input";
    for (auto id : output_ids) out << "\tu" << id;
    out << '\n';
    for (std::size_t i = 0; i < w.inputs(); ++i) {
        out << i;
        for (std::size_t o = 0; o < w.outputs(); ++o) out << '\t' << w(i, o);
        out << '\n';
    }
    out.precision(old_precision);
}

WeightMatrix read_weights(std::istream& in, double learning_rate) {
    std::string line;
    if (!std::getline(in, line)) throw schema_error("weights: missing header");
    std::istringstream hs(line);
    std::string tok;
    hs >> tok;
    if (tok != "input") throw schema_error("weights: header must start with 'input'");
    std::size_t outputs = 0;
    while (hs >> tok) ++outputs;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::size_t index = 0;
        ls >> index;
        std::vector<double> row(outputs);
        for (auto& v : row)
            if (!(ls >> v)) throw schema_error("weights: short row '" + line + "'");
        rows.push_back(std::move(row));
    }
    WeightMatrix w(rows.size(), outputs, learning_rate);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t o = 0; o < outputs; ++o) w(i, o) = rows[i][o];
    return w;
}

TimeSeries feedback_current(const SpikeTrain& pos, const SpikeTrain& neg, double kappa, double tau_fb, double dt) {
    if (pos.window() != neg.window()) throw std::invalid_argument("feedback_current: trains must share a window");
    if (pos.channel_count() != neg.channel_count())
        throw std::invalid_argument("feedback_current: channel counts differ");
    TimeSeries fb = filtered_trace(pos, tau_fb, dt);
    const TimeSeries minus = filtered_trace(neg, tau_fb, dt);
    for (std::size_t c = 0; c < fb.channels(); ++c)
        for (std::size_t k = 0; k < fb.steps(); ++k) fb(c, k) = kappa * (fb(c, k) - minus(c, k));
    return fb;
}

WeightMatrix accumulate_update(WeightMatrix weights, const TimeSeries& input_trace, const TimeSeries& feedback,
                               std::size_t begin, std::size_t end) {
    if (input_trace.channels() != weights.inputs() || feedback.channels() != weights.outputs())
        throw std::invalid_argument("learning_update: trace shapes do not match the weight matrix");
    if (input_trace.steps() != feedback.steps() || input_trace.dt() != feedback.dt())
        throw std::invalid_argument("learning_update: traces must share one dt grid");
    if (begin > end || end > input_trace.steps()) throw std::invalid_argument("learning_update: bad step range");

    const double eta_dt = weights.learning_rate() * input_trace.dt();
    for (std::size_t i = 0; i < weights.inputs(); ++i) {
        const auto x = input_trace.channel(i);
        for (std::size_t o = 0; o < weights.outputs(); ++o) {
            const auto fb = feedback.channel(o);
            double acc = 0.0;
            for (std::size_t k = begin; k < end; ++k) acc += fb[k] * x[k];
            const double delta = eta_dt * acc;
            if (!std::isfinite(delta)) {
                // Locate the first offending step for the report.
                for (std::size_t k = begin; k < end; ++k) check_finite_update(fb[k] * x[k], i, o, k);
                check_finite_update(delta, i, o, end);
            }
            weights(i, o) += delta;
        }
    }
    return weights;
}

WeightMatrix learning_update(WeightMatrix weights, const SpikeTrain& input_train, const TimeSeries& feedback,
                             double tau_in, double dt, double input_population) {
    if (!(input_population > 0.0)) throw std::invalid_argument("learning_update: population must be positive");
    TimeSeries x = filtered_trace(input_train, tau_in, dt);
    if (input_population != 1.0)
        for (std::size_t c = 0; c < x.channels(); ++c)
            for (double& v : x.channel(c)) v /= input_population;
    return accumulate_update(std::move(weights), x, feedback, 0, x.steps());
}

WeightMatrix learning_update_window(WeightMatrix weights, const RateVector& input_rates,
                                    std::span<const double> feedback, double window) {
    if (input_rates.size() != weights.inputs() || feedback.size() != weights.outputs())
        throw std::invalid_argument("learning_update_window: shapes do not match the weight matrix");
    const double eta = weights.learning_rate();
    for (std::size_t i = 0; i < weights.inputs(); ++i) {
        for (std::size_t o = 0; o < weights.outputs(); ++o) {
            const double delta = eta * feedback[o] * input_rates[i] * window;
            check_finite_update(delta, i, o, 0);
            weights(i, o) += delta;
        }
    }
    return weights;
}

} // namespace sfc
