#include "sfc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "sfc/config.hpp"
#include "sfc/errors.hpp"
#include "sfc/random.hpp"

namespace sfc {

namespace {

// Channels [begin, begin + count) of a train.
SpikeTrain select_channels(const SpikeTrain& train, std::size_t begin, std::size_t count) {
    std::vector<SpikeEvent> events;
    for (const auto& e : train.events())
        if (e.channel >= begin && e.channel < begin + count)
            events.push_back({e.time, static_cast<std::uint32_t>(e.channel - begin)});
    return SpikeTrain(count, train.window(), std::move(events));
}

RateVector concat(const RateVector& a, const RateVector& b) {
    std::vector<double> v(a.values().begin(), a.values().end());
    v.insert(v.end(), b.values().begin(), b.values().end());
    return RateVector(std::move(v));
}

std::uint64_t train_seed(std::uint64_t seed, std::size_t iteration) {
    return derive_seed(seed, 2 * iteration, stream_purpose::presentation);
}

std::ofstream open_output(const std::filesystem::path& path, std::ios::openmode mode = std::ios::trunc) {
    std::ofstream out(path, std::ios::out | mode);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(17);
    return out;
}

// Keeps the header and the rows whose leading integer satisfies keep(n).
template <typename Keep>
void truncate_table(const std::filesystem::path& path, bool has_header, Keep keep) {
    std::ifstream in(path);
    if (!in) return;
    std::vector<std::string> lines;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (first && has_header) {
            lines.push_back(line);
            first = false;
            continue;
        }
        first = false;
        std::istringstream ls(line);
        std::size_t n = 0;
        if (ls >> n && keep(n)) lines.push_back(line);
    }
    in.close();
    auto out = open_output(path);
    for (const auto& l : lines) out << l << '\n';
}

void write_metrics_header(std::ostream& out, std::size_t classes) {
    out << "iteration\tlabel\ttarget_error";
    for (std::size_t o = 0; o < classes; ++o)
        out << "\toutput" << o << "\ttarget" << o << "\tpos" << o << "\tneg" << o << "\tfeedback" << o;
    out << "\tcounts_hash\tcount_changes\trenormalized_rows\tsign_switches\tsimulated_time\n";
}

void write_metrics_row(std::ostream& out, const IterationRecord& r) {
    out << r.iteration << '\t' << r.label << '\t' << r.target_error;
    for (std::size_t o = 0; o < r.output_rates.size(); ++o)
        out << '\t' << r.output_rates[o] << '\t' << r.target_rates[o] << '\t' << r.positive_rates[o] << '\t'
            << r.negative_rates[o] << '\t' << r.feedback[o];
    out << '\t' << r.counts_hash << '\t' << r.count_changes << '\t' << r.renormalized_rows << '\t' << r.sign_switches
        << '\t' << r.simulated_time << '\n';
}

void write_trajectory_row(std::ostream& out, std::size_t iteration, std::span<const int> counts) {
    out << iteration;
    for (int c : counts) out << '\t' << c;
    out << '\n';
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t iteration) {
    std::ostringstream name;
    name << "checkpoint_" << std::setw(8) << std::setfill('0') << iteration << ".txt";
    return dir / "checkpoints" / name.str();
}

std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& dir) {
    const auto ckdir = dir / "checkpoints";
    if (!std::filesystem::exists(ckdir)) return std::nullopt;
    std::optional<std::filesystem::path> best;
    for (const auto& entry : std::filesystem::directory_iterator(ckdir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("checkpoint_", 0) != 0) continue;
        if (!best || name > best->filename().string()) best = entry.path();
    }
    return best;
}

void save_checkpoint(const std::filesystem::path& dir, const TrainerState& state) {
    const auto path = checkpoint_path(dir, state.iteration);
    const auto tmp = path.string() + ".tmp";
    {
        auto out = open_output(tmp);
        write_checkpoint(out, state);
        if (!out) throw std::runtime_error("failed writing checkpoint " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

} // namespace

// ---------------------------------------------------------------- config

std::string_view to_string(LearningRule rule) noexcept {
    return rule == LearningRule::per_window ? "per-window" : "per-step";
}

LearningRule parse_rule(std::string_view name) {
    if (name == "per-window") return LearningRule::per_window;
    if (name == "per-step") return LearningRule::per_step;
    throw std::invalid_argument("unknown rule '" + std::string(name) + "' (expected per-window or per-step)");
}

std::string_view to_string(InitMode mode) noexcept { return mode == InitMode::constant ? "constant" : "gaussian"; }

InitMode parse_init_mode(std::string_view name) {
    if (name == "constant") return InitMode::constant;
    if (name == "gaussian") return InitMode::gaussian;
    throw std::invalid_argument("unknown init mode '" + std::string(name) + "'");
}

double TrainingConfig::effective_learning_rate() const noexcept {
    if (learning_rate > 0.0) return learning_rate;
    return task == Task::binary ? 2.5e-4 : 1e-5;
}

TrainingConfig default_config(Task task) {
    TrainingConfig c;
    c.task = task;
    if (task == Task::binary) {
        c.init = InitMode::constant;
        c.presentations = 2000;
        c.sizes = {.train = 2000, .validation = 200, .test = 200};
    } else {
        c.init = InitMode::gaussian;
        c.presentations = 10000;
        c.sizes = {.train = 10000, .validation = 1000, .test = 1000};
    }
    return c;
}

std::uint64_t evaluation_seed(std::uint64_t seed, std::size_t iteration) {
    return derive_seed(seed, 2 * iteration + 1, stream_purpose::presentation);
}

void TrainingConfig::validate() const {
    if (!(window > 0.0)) throw std::invalid_argument("TrainingConfig: window must be positive");
    if (!(w_max > 0.0)) throw std::invalid_argument("TrainingConfig: w_max must be positive");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("TrainingConfig: learning rate must be >= 0");
    if (max_magnitude <= 0 || max_magnitude > chip.limits.max_magnitude)
        throw std::invalid_argument("TrainingConfig: max_magnitude outside the fabric range");
    if (!(tau_in > 0.0) || !(tau_fb > 0.0)) throw std::invalid_argument("TrainingConfig: trace constants must be > 0");
    if (sizes.train == 0) throw std::invalid_argument("TrainingConfig: empty training set");
    targets.validate();
    chip.validate();
}

// ---------------------------------------------------------------- network

int TaskNetwork::input_budget(std::size_t o) const {
    const auto& fabric = network.fabric();
    int used_by_inputs = 0;
    for (std::size_t i = 0; i < inputs; ++i)
        used_by_inputs += std::abs(fabric.count(virtual_node(static_cast<std::uint32_t>(i)), outputs[o]));
    return fabric.limits().fan_in_limit - (fabric.fan_in_used(outputs[o]) - used_by_inputs);
}

TaskNetwork build_task_network(std::size_t inputs, std::size_t classes, const TrainingConfig& config) {
    if (inputs == 0 || classes < 2) throw std::invalid_argument("build_task_network: need inputs and >= 2 classes");
    Topology t;
    for (std::size_t i = 0; i < inputs + classes; ++i) t.add_virtual();
    std::vector<std::uint32_t> outputs;
    for (std::size_t c = 0; c < classes; ++c)
        outputs.push_back(t.add_unit({.name = "out" + std::to_string(c), .population = config.chip.population}));
    std::vector<ControllerPair> pairs;
    for (std::size_t c = 0; c < classes; ++c)
        pairs.push_back(wire_controller(t, outputs[c], static_cast<std::uint32_t>(inputs + c), config.controller,
                                        config.chip));
    TaskNetwork net{build_network(t, config.chip, config.mismatch), inputs, std::move(outputs), std::move(pairs)};
    return net;
}

std::vector<ControllerCalibration> calibrate_controllers(TaskNetwork& net, bool tune, double window,
                                                         std::size_t repeats, std::uint64_t seed) {
    std::vector<double> grid;
    for (int e = -20; e <= 20; e += 5) grid.push_back(e);
    std::vector<ControllerCalibration> out;
    for (std::size_t c = 0; c < net.pairs.size(); ++c) {
        const auto s = derive_seed(seed, c, stream_purpose::presentation);
        out.push_back(tune ? tune_controller(net.network, net.pairs[c], grid, window, repeats, s)
                           : measure_controller(net.network, net.pairs[c], net.pairs[c].gains, grid, window, repeats, s));
    }
    apply_calibration(net, out);
    return out;
}

void apply_calibration(TaskNetwork& net, std::span<const ControllerCalibration> controllers) {
    if (controllers.size() != net.pairs.size())
        throw calibration_error("controller calibration covers " + std::to_string(controllers.size()) +
                                " pairs, network has " + std::to_string(net.pairs.size()));
    for (std::size_t c = 0; c < net.pairs.size(); ++c) {
        auto& pair = net.pairs[c];
        const auto& cal = controllers[c];
        if (!cal.corrective()) throw calibration_error("controller " + std::to_string(c) + " is not corrective");
        if (cal.gains != pair.gains) apply_controller_gains(net.network, pair, cal.gains);
        pair.feedback_scale = cal.kappa;
        pair.feedback_offset = cal.intercept;
    }
}

// ---------------------------------------------------------------- quantization

int quantize_weight(double w, double w_max, int max_magnitude) {
    if (!(w_max > 0.0)) throw std::invalid_argument("quantize_weight: w_max must be positive");
    if (std::isnan(w)) throw numeric_error("quantize_weight: NaN weight");
    const double scaled = std::clamp(w / w_max * max_magnitude, -double(max_magnitude), double(max_magnitude));
    return static_cast<int>(std::round(scaled)); // std::round rounds half away from zero
}

std::vector<int> quantize_weights(const WeightMatrix& weights, double w_max, int max_magnitude) {
    std::vector<int> out;
    out.reserve(weights.values().size());
    for (double w : weights.values()) out.push_back(quantize_weight(w, w_max, max_magnitude));
    return out;
}

void renormalize_row(std::span<int> row, int budget) {
    if (budget < 0) throw std::invalid_argument("renormalize_row: negative budget");
    long total = 0;
    for (int c : row) total += std::abs(c);
    if (total <= budget) return;
    const double scale = static_cast<double>(budget) / static_cast<double>(total);
    for (int& c : row) c = static_cast<int>(std::trunc(c * scale));
}

DeployResult deploy_counts(TaskNetwork& net, std::span<const int> desired, std::size_t step) {
    const std::size_t n_in = net.inputs;
    const std::size_t n_out = net.classes();
    if (desired.size() != n_in * n_out) throw std::invalid_argument("deploy_counts: shape mismatch");

    DeployResult result;
    result.counts.assign(desired.begin(), desired.end());
    for (std::size_t o = 0; o < n_out; ++o) {
        std::vector<int> row(n_in);
        for (std::size_t i = 0; i < n_in; ++i) row[i] = result.counts[i * n_out + o];
        long total = 0;
        for (int c : row) total += std::abs(c);
        const int budget = net.input_budget(o);
        if (total > budget) {
            renormalize_row(row, budget);
            ++result.renormalized_rows;
            for (std::size_t i = 0; i < n_in; ++i) result.counts[i * n_out + o] = row[i];
        }
    }

    auto& fabric = net.network.fabric();
    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t i = 0; i < n_in; ++i) {
            const NodeId pre = virtual_node(static_cast<std::uint32_t>(i));
            for (std::size_t o = 0; o < n_out; ++o) {
                const int old_count = fabric.count(pre, net.outputs[o]);
                const int new_count = result.counts[i * n_out + o];
                if (old_count == new_count) continue;
                const bool shrinking = std::abs(new_count) <= std::abs(old_count);
                if (shrinking != (pass == 0)) continue;
                fabric.set(pre, net.outputs[o], new_count, step);
                result.changed += static_cast<std::size_t>(std::abs(new_count - old_count));
                if (static_cast<long>(old_count) * new_count < 0) ++result.sign_switches;
            }
        }
    }
    return result;
}

std::vector<int> read_counts(const TaskNetwork& net) {
    std::vector<int> out;
    for (std::size_t i = 0; i < net.inputs; ++i)
        for (auto post : net.outputs) out.push_back(net.network.fabric().count(virtual_node(static_cast<std::uint32_t>(i)), post));
    return out;
}

std::uint64_t counts_hash(std::span<const int> counts) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
    for (int c : counts) {
        auto v = static_cast<std::uint32_t>(c);
        for (int b = 0; b < 4; ++b) {
            h ^= (v >> (8 * b)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

// ---------------------------------------------------------------- training

TrainerState make_trainer_state(const TrainingConfig& config, const TrainingCalibration& calibration) {
    config.validate();
    const std::size_t n_in = input_count(config.task);
    const std::size_t n_out = class_count(config.task);
    TrainerState s{build_task_network(n_in, n_out, config), {}, {}, 0, 0.0, calibration.rate_map};
    if (!calibration.controllers.empty()) apply_calibration(s.net, calibration.controllers);

    s.weights = WeightMatrix(n_in, n_out, config.effective_learning_rate());
    if (config.init == InitMode::constant) {
        for (std::size_t i = 0; i < n_in; ++i)
            for (std::size_t o = 0; o < n_out; ++o) s.weights(i, o) = config.init_value * config.w_max;
    } else {
        auto rng = make_stream(config.seed, 0, stream_purpose::init);
        for (std::size_t i = 0; i < n_in; ++i)
            for (std::size_t o = 0; o < n_out; ++o)
                s.weights(i, o) = config.init_sigma * config.w_max * standard_normal(rng);
    }
    s.residual.assign(n_in * n_out, 0.0);
    deploy_counts(s.net, quantize_weights(s.weights, config.w_max, config.max_magnitude), 0);
    s.net.network.fabric().clear_audit_log();
    return s;
}

IterationRecord train_step(TrainerState& state, const Example& sample, const TrainingConfig& config,
                           std::uint64_t seed) {
    TaskNetwork& net = state.net;
    const EmulatedNetwork& chip = net.network;
    const std::size_t n_in = net.inputs;
    const std::size_t n_out = net.classes();
    if (sample.rates.size() != n_in) throw std::invalid_argument("train_step: sample has the wrong input count");
    const double T = config.window;

    const RateVector targets = target_rates(sample.label, n_out, config.targets);
    const RateVector requested = concat(state.rate_map.correct(sample.rates), state.rate_map.correct(targets));
    const SpikeTrain inputs = chip.stimulate(requested, T, seed);
    const SpikeTrain spikes = chip.run_window(inputs, T, seed);
    const RateVector unit_rates = chip.unit_rates(spikes);
    const RateVector channel_rates = chip.virtual_rates(inputs);

    IterationRecord rec;
    rec.iteration = state.iteration;
    rec.label = sample.label;
    for (std::size_t o = 0; o < n_out; ++o) {
        const auto& pair = net.pairs[o];
        rec.output_rates.push_back(unit_rates[net.outputs[o]]);
        rec.target_rates.push_back(targets[o]);
        rec.positive_rates.push_back(unit_rates[pair.positive_unit]);
        rec.negative_rates.push_back(unit_rates[pair.negative_unit]);
        rec.feedback.push_back(pair.feedback_scale *
                               (rec.positive_rates[o] - rec.negative_rates[o] - pair.feedback_offset));
        rec.target_error += std::abs(rec.output_rates[o] - targets[o]);
    }
    rec.target_error /= static_cast<double>(n_out);

    if (config.rule == LearningRule::per_window) {
        std::vector<double> in(channel_rates.values().begin(), channel_rates.values().begin() + n_in);
        state.weights = learning_update_window(std::move(state.weights), RateVector(std::move(in)), rec.feedback, T);
    } else {
        const auto nv = static_cast<double>(chip.config().virtual_population);
        const SpikeTrain in_train = select_channels(merge_channels(inputs, chip.config().virtual_population), 0, n_in);
        SpikeTrain pos = chip.unit_train(spikes, net.pairs[0].positive_unit);
        SpikeTrain neg = chip.unit_train(spikes, net.pairs[0].negative_unit);
        for (std::size_t o = 1; o < n_out; ++o) {
            pos = stack_channels(pos, chip.unit_train(spikes, net.pairs[o].positive_unit));
            neg = stack_channels(neg, chip.unit_train(spikes, net.pairs[o].negative_unit));
        }
        TimeSeries fb = feedback_current(pos, neg, 1.0, config.tau_fb, chip.config().dt);
        for (std::size_t o = 0; o < n_out; ++o) {
            const auto& pair = net.pairs[o];
            const double members = static_cast<double>(chip.unit(pair.positive_unit).population());
            for (double& v : fb.channel(o)) v = pair.feedback_scale * (v / members - pair.feedback_offset);
        }
        state.weights = learning_update(std::move(state.weights), in_train, fb, config.tau_in, chip.config().dt, nv);
    }

    const double w_max = config.w_max;
    const int m = config.max_magnitude;
    std::vector<int> desired(n_in * n_out);
    for (std::size_t i = 0; i < n_in; ++i) {
        for (std::size_t o = 0; o < n_out; ++o) {
            double& w = state.weights(i, o);
            if (config.clip_shadow) w = std::clamp(w, -w_max, w_max);
            const std::size_t k = i * n_out + o;
            if (config.error_feedback) {
                // Sigma-delta: quantize weight plus carried residual, keep the remainder.
                const double v = w + state.residual[k];
                desired[k] = quantize_weight(v, w_max, m);
                state.residual[k] = v - desired[k] * w_max / m;
            } else {
                desired[k] = quantize_weight(w, w_max, m);
            }
        }
    }
    const DeployResult d = deploy_counts(net, desired, state.iteration + 1);
    rec.counts_hash = counts_hash(d.counts);
    rec.count_changes = d.changed;
    rec.renormalized_rows = d.renormalized_rows;
    rec.sign_switches = d.sign_switches;

    ++state.iteration;
    state.simulated_time += T;
    rec.simulated_time = state.simulated_time;
    return rec;
}

std::vector<Prediction> predict(const TrainerState& state, std::span<const RateVector> inputs,
                                const TrainingConfig& config, std::uint64_t seed) {
    EmulatedNetwork chip = state.net.network;
    for (const auto& pair : state.net.pairs) disable_feedback(chip, pair);
    const std::size_t n_in = state.net.inputs;
    const std::size_t n_out = state.net.classes();
    const RateVector silent_targets(std::vector<double>(n_out, 0.0));

    std::vector<Prediction> out;
    out.reserve(inputs.size());
    for (std::size_t j = 0; j < inputs.size(); ++j) {
        if (inputs[j].size() != n_in) throw std::invalid_argument("predict: sample has the wrong input count");
        const auto s = derive_seed(seed, j, stream_purpose::presentation);
        const RateVector requested = concat(state.rate_map.correct(inputs[j]), silent_targets);
        const RateVector rates =
            chip.unit_rates(chip.run_window(chip.stimulate(requested, config.window, s), config.window, s));
        Prediction p;
        for (std::size_t o = 0; o < n_out; ++o) {
            const double r = rates[state.net.outputs[o]];
            p.rates.push_back(r);
            if (o == 0) continue;
            if (r > p.rates[p.label]) {
                p.label = o;
                p.tie = false;
            } else if (r == p.rates[p.label]) {
                p.tie = true;
            }
        }
        out.push_back(std::move(p));
    }
    return out;
}

EvalReport evaluate(const TrainerState& state, std::span<const Example> dataset, const TrainingConfig& config,
                    std::uint64_t seed) {
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    const std::size_t n_out = state.net.classes();
    std::vector<RateVector> inputs;
    for (const auto& ex : dataset) {
        if (ex.label >= n_out) throw std::invalid_argument("evaluate: label out of range");
        inputs.push_back(ex.rates);
    }
    const auto predictions = predict(state, inputs, config, seed);

    EvalReport report;
    report.confusion.assign(n_out, std::vector<std::size_t>(n_out, 0));
    std::size_t correct = 0;
    for (std::size_t j = 0; j < dataset.size(); ++j) {
        const auto& p = predictions[j];
        const RateVector targets = target_rates(dataset[j].label, n_out, config.targets);
        double error = 0.0;
        for (std::size_t o = 0; o < n_out; ++o) error += std::abs(p.rates[o] - targets[o]);
        report.target_error += error / static_cast<double>(n_out);
        if (p.tie) ++report.ties;
        ++report.confusion[dataset[j].label][p.label];
        if (p.label == dataset[j].label) ++correct;
    }
    report.samples = dataset.size();
    report.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
    report.target_error /= static_cast<double>(dataset.size());
    return report;
}

std::vector<std::size_t> presentation_order(std::size_t train_size, std::size_t epoch, std::uint64_t seed) {
    std::vector<std::size_t> order(train_size);
    for (std::size_t i = 0; i < train_size; ++i) order[i] = i;
    auto rng = make_stream(seed, epoch, stream_purpose::shuffle);
    for (std::size_t i = train_size; i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

// ---------------------------------------------------------------- persistence

void write_checkpoint(std::ostream& out, const TrainerState& s) {
    const auto old_precision = out.precision(17);
    out << "sfc-checkpoint " << checkpoint_version << '\n'
        << "iteration " << s.iteration << '\n'
        << "simulated_time " << s.simulated_time << '\n'
        << "weights " << s.weights.inputs() << ' ' << s.weights.outputs() << '\n';
    for (std::size_t i = 0; i < s.weights.inputs(); ++i) {
        for (std::size_t o = 0; o < s.weights.outputs(); ++o) out << (o ? " " : "") << s.weights(i, o);
        out << '\n';
    }
    out << "residual " << s.residual.size() << '\n';
    for (std::size_t k = 0; k < s.residual.size(); ++k) out << (k ? " " : "") << s.residual[k];
    out << '\n';
    std::ostringstream fabric;
    write_fabric(fabric, s.net.network.fabric());
    const std::string table = fabric.str();
    out << "fabric " << std::count(table.begin(), table.end(), '\n') << '\n' << table << "end\n";
    out.precision(old_precision);
}

void read_checkpoint(std::istream& in, TrainerState& s) {
    std::string tag;
    int version = 0;
    if (!(in >> tag >> version) || tag != "sfc-checkpoint") throw schema_error("checkpoint: not a checkpoint file");
    if (version != checkpoint_version)
        throw schema_error("checkpoint: version " + std::to_string(version) + ", expected " +
                           std::to_string(checkpoint_version));
    auto expect = [&](const char* key) {
        if (!(in >> tag) || tag != key) throw schema_error(std::string("checkpoint: expected '") + key + "'");
    };
    std::size_t iteration = 0, inputs = 0, outputs = 0, residual = 0, lines = 0;
    double sim_time = 0.0;
    expect("iteration");
    in >> iteration;
    expect("simulated_time");
    in >> sim_time;
    expect("weights");
    in >> inputs >> outputs;
    if (inputs != s.weights.inputs() || outputs != s.weights.outputs())
        throw schema_error("checkpoint: weight shape does not match the configured task");
    WeightMatrix w(inputs, outputs, s.weights.learning_rate());
    for (std::size_t i = 0; i < inputs; ++i)
        for (std::size_t o = 0; o < outputs; ++o)
            if (!(in >> w(i, o))) throw schema_error("checkpoint: truncated weights");
    expect("residual");
    in >> residual;
    std::vector<double> res(residual);
    for (auto& r : res)
        if (!(in >> r)) throw schema_error("checkpoint: truncated residual");
    expect("fabric");
    in >> lines;
    std::string line;
    std::getline(in, line);
    std::ostringstream table;
    for (std::size_t k = 0; k < lines; ++k) {
        if (!std::getline(in, line)) throw schema_error("checkpoint: truncated fabric");
        table << line << '\n';
    }
    expect("end");
    std::istringstream table_in(table.str());
    read_fabric(table_in, s.net.network.fabric());
    s.net.network.fabric().clear_audit_log();
    s.weights = std::move(w);
    s.residual = std::move(res);
    s.iteration = iteration;
    s.simulated_time = sim_time;
}

void save_calibration(const std::filesystem::path& dir, const TrainingCalibration& calibration) {
    std::filesystem::create_directories(dir);
    {
        auto out = open_output(dir / "rate_map.txt");
        write_rate_map(out, calibration.rate_map);
    }
    for (std::size_t k = 0; k < calibration.controllers.size(); ++k) {
        auto out = open_output(dir / ("controller_" + std::to_string(k) + ".txt"));
        write_controller_calibration(out, calibration.controllers[k]);
    }
}

TrainingCalibration load_calibration(const std::filesystem::path& dir) {
    TrainingCalibration c;
    if (std::ifstream in(dir / "rate_map.txt"); in) c.rate_map = read_rate_map(in);
    for (std::size_t k = 0;; ++k) {
        std::ifstream in(dir / ("controller_" + std::to_string(k) + ".txt"));
        if (!in) break;
        c.controllers.push_back(read_controller_calibration(in));
    }
    return c;
}

void write_eval_report(std::ostream& out, const EvalReport& r) {
    const auto old_precision = out.precision(17);
    out << "accuracy=" << r.accuracy << '\n'
        << "target_error=" << r.target_error << '\n'
        << "samples=" << r.samples << '\n'
        << "ties=" << r.ties << '\n'
        << "confusion=";
    for (std::size_t t = 0; t < r.confusion.size(); ++t) {
        if (t) out << ';';
        for (std::size_t p = 0; p < r.confusion[t].size(); ++p) out << (p ? "," : "") << r.confusion[t][p];
    }
    out << '\n';
    out.precision(old_precision);
}

// ---------------------------------------------------------------- runs

RunSummary run_experiment(const TrainingConfig& config, const TrainingCalibration& calibration,
                          const RunOptions& options) {
    namespace fs = std::filesystem;
    const fs::path& dir = options.out_dir;
    fs::create_directories(dir / "checkpoints");

    TrainerState state = make_trainer_state(config, calibration);
    const DatasetSplits data = make_splits(config.task, config.sizes, config.seed, config.encoding);

    const auto ck = options.resume ? latest_checkpoint(dir) : std::nullopt;
    if (ck) {
        std::ifstream in(*ck);
        if (!in) throw std::runtime_error("cannot read checkpoint " + ck->string());
        read_checkpoint(in, state);
        const std::size_t done = state.iteration;
        truncate_table(dir / "metrics.tsv", true, [done](std::size_t n) { return n < done; });
        truncate_table(dir / "trajectory.tsv", true, [done](std::size_t n) { return n <= done; });
        truncate_table(dir / "validation.tsv", true, [done](std::size_t n) { return n <= done; });
        truncate_table(dir / "audit.tsv", true, [done](std::size_t n) { return n <= done; });
    } else {
        auto manifest = open_output(dir / "manifest.txt");
        manifest << "# sfc training run\n"
                 << "format_version = 1\n"
                 << "checkpoint_version = " << checkpoint_version << '\n'
                 << "calibrated_rates = " << (calibration.rate_map.is_identity() ? "false" : "true") << '\n'
                 << "calibrated_controllers = " << calibration.controllers.size() << '\n';
        for (std::size_t c = 0; c < calibration.controllers.size(); ++c)
            manifest << "controller" << c << "_kappa = " << calibration.controllers[c].kappa << '\n'
                     << "controller" << c << "_offset = " << calibration.controllers[c].intercept << '\n';
        write_key_values(manifest, to_key_values(config));
        if (!manifest) throw std::runtime_error("failed writing manifest");

        auto metrics = open_output(dir / "metrics.tsv");
        write_metrics_header(metrics, state.net.classes());
        auto trajectory = open_output(dir / "trajectory.tsv");
        trajectory << "iteration";
        for (std::size_t i = 0; i < state.net.inputs; ++i)
            for (std::size_t o = 0; o < state.net.classes(); ++o) trajectory << "\tw" << i << '_' << o;
        trajectory << '\n';
        write_trajectory_row(trajectory, 0, read_counts(state.net));
        auto validation = open_output(dir / "validation.tsv");
        validation << "iteration\taccuracy\ttarget_error\n";
        auto audit = open_output(dir / "audit.tsv");
        audit << "step pre post old new type_switch\n";
    }

    auto metrics = open_output(dir / "metrics.tsv", std::ios::app);
    auto trajectory = open_output(dir / "trajectory.tsv", std::ios::app);
    auto validation = open_output(dir / "validation.tsv", std::ios::app);
    auto audit = open_output(dir / "audit.tsv", std::ios::app);

    RunSummary summary;
    std::size_t epoch = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> order;
    const std::size_t n = data.train.size();
    std::size_t session = 0;
    try {
        while (state.iteration < config.presentations) {
            if (options.stop_after && session == options.stop_after) {
                save_checkpoint(dir, state);
                summary.iterations = state.iteration;
                summary.simulated_time = state.simulated_time;
                return summary;
            }
            if (state.iteration / n != epoch) {
                epoch = state.iteration / n;
                order = presentation_order(n, epoch, config.seed);
            }
            const Example& ex = data.train[order[state.iteration % n]];
            const IterationRecord rec = train_step(state, ex, config, train_seed(config.seed, state.iteration));
            ++session;
            write_metrics_row(metrics, rec);
            metrics.flush();
            write_trajectory_row(trajectory, state.iteration, read_counts(state.net));
            write_audit_log(audit, state.net.network.fabric().audit_log());
            state.net.network.fabric().clear_audit_log();
            if (options.on_iteration) options.on_iteration(rec);

            if (config.eval_every && state.iteration % config.eval_every == 0 && !data.validation.empty()) {
                const EvalReport r = evaluate(state, data.validation, config, evaluation_seed(config.seed, state.iteration));
                validation << state.iteration << '\t' << r.accuracy << '\t' << r.target_error << '\n';
                validation.flush();
                summary.validation.emplace_back(state.iteration, r);
            }
            if (config.checkpoint_every && state.iteration % config.checkpoint_every == 0) {
                trajectory.flush();
                audit.flush();
                save_checkpoint(dir, state);
            }
        }
    } catch (...) {
        // Keep whatever has been logged and leave a resumable checkpoint.
        metrics.flush();
        trajectory.flush();
        audit.flush();
        try {
            save_checkpoint(dir, state);
        } catch (...) {
        }
        throw;
    }
    trajectory.flush();
    audit.flush();
    save_checkpoint(dir, state);

    if (!data.test.empty()) {
        summary.test = evaluate(state, data.test, config, evaluation_seed(config.seed, config.presentations + 1));
        auto report = open_output(dir / "report.txt");
        report << "iterations=" << state.iteration << '\n' << "simulated_time=" << state.simulated_time << '\n';
        write_eval_report(report, summary.test);
    }
    {
        auto weights = open_output(dir / "weights.tsv");
        std::vector<std::uint32_t> ids(state.net.outputs.begin(), state.net.outputs.end());
        write_weights(weights, state.weights, ids);
        auto fabric = open_output(dir / "fabric.tsv");
        write_fabric(fabric, state.net.network.fabric());
    }
    summary.iterations = state.iteration;
    summary.simulated_time = state.simulated_time;
    return summary;
}

double mean_count_change(std::span<const std::vector<int>> trajectory, std::size_t begin, std::size_t end) {
    if (end > trajectory.size() || begin + 1 >= end) throw std::invalid_argument("mean_count_change: bad range");
    double total = 0.0;
    for (std::size_t k = begin + 1; k < end; ++k) {
        const auto& a = trajectory[k - 1];
        const auto& b = trajectory[k];
        for (std::size_t j = 0; j < a.size(); ++j) total += std::abs(b[j] - a[j]);
    }
    return total / static_cast<double>(end - begin - 1);
}

} // namespace sfc
