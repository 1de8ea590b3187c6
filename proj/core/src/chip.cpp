#include "sfc/chip.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "sfc/errors.hpp"
#include "sfc/random.hpp"

namespace sfc {

namespace {

std::string unit_label(const Topology& t, std::uint32_t u) {
    std::string s = "unit " + std::to_string(u);
    if (u < t.units.size() && !t.units[u].name.empty()) s += " (" + t.units[u].name + ")";
    return s;
}

} // namespace

std::string to_string(NodeId id) {
    return (id.kind == NodeKind::virtual_input ? "v" : "u") + std::to_string(id.index);
}

NodeId parse_node(const std::string& text) {
    if (text.size() < 2 || (text[0] != 'v' && text[0] != 'u'))
        throw std::invalid_argument("malformed node id '" + text + "'");
    std::size_t pos = 0;
    const unsigned long index = std::stoul(text.substr(1), &pos);
    if (pos != text.size() - 1) throw std::invalid_argument("malformed node id '" + text + "'");
    return {text[0] == 'v' ? NodeKind::virtual_input : NodeKind::unit, static_cast<std::uint32_t>(index)};
}

double GeneratorTransfer::apply(double requested) const noexcept {
    return std::max(0.0, gain * requested + offset);
}

void ChipConfig::validate() const {
    for (const auto& p : core_params) p.validate();
    if (!(unit_weight_current > 0.0)) throw std::invalid_argument("ChipConfig: unit_weight_current must be positive");
    if (!(tau_syn > 0.0) || !(dt > 0.0) || dt > tau_syn / 2.0)
        throw std::invalid_argument("ChipConfig: need 0 < dt <= tau_syn/2");
    if (population == 0 || virtual_population == 0) throw std::invalid_argument("ChipConfig: population must be >= 1");
    if (generators_per_member == 0 || virtual_population % generators_per_member != 0)
        throw std::invalid_argument("ChipConfig: generators_per_member must divide virtual_population");
    if (limits.max_magnitude <= 0 || limits.fan_in_limit <= 0 || limits.fan_out_limit <= 0)
        throw std::invalid_argument("ChipConfig: fabric limits must be positive");
    if (!(membrane_noise >= 0.0)) throw std::invalid_argument("ChipConfig: membrane_noise must be non-negative");
}

std::uint32_t Topology::add_virtual() {
    return static_cast<std::uint32_t>(virtual_channels++);
}

std::uint32_t Topology::add_unit(UnitSpec spec) {
    units.push_back(std::move(spec));
    return static_cast<std::uint32_t>(units.size() - 1);
}

void Topology::connect(NodeId pre, std::uint32_t post, int count) {
    for (auto& c : connections) {
        if (c.pre == pre && c.post == post) {
            c.count = count;
            return;
        }
    }
    connections.push_back({pre, post, count});
}

// ---------------------------------------------------------------- fabric

SynapseFabric::SynapseFabric(FabricLimits limits, std::vector<std::size_t> unit_populations,
                             std::size_t virtual_channels)
    : limits_(limits),
      unit_populations_(std::move(unit_populations)),
      virtual_channels_(virtual_channels),
      fan_in_(unit_populations_.size(), 0),
      fan_out_(unit_populations_.size(), 0) {}

void SynapseFabric::check_endpoint(NodeId pre, std::uint32_t post) const {
    if (post >= unit_populations_.size())
        throw topology_error("fabric: postsynaptic unit " + std::to_string(post) + " does not exist");
    if (pre.kind == NodeKind::virtual_input ? pre.index >= virtual_channels_ : pre.index >= unit_populations_.size())
        throw topology_error("fabric: presynaptic endpoint " + to_string(pre) + " does not exist");
}

int SynapseFabric::count(NodeId pre, std::uint32_t post) const {
    const auto it = counts_.find({pre, post});
    return it == counts_.end() ? 0 : it->second;
}

void SynapseFabric::set(NodeId pre, std::uint32_t post, int new_count, std::uint64_t step) {
    check_endpoint(pre, post);
    if (std::abs(new_count) > limits_.max_magnitude)
        throw capacity_error("magnitude limit: |" + std::to_string(new_count) + "| exceeds " +
                             std::to_string(limits_.max_magnitude) + " on " + to_string(pre) + "->u" +
                             std::to_string(post));
    const int old = count(pre, post);
    const int delta = std::abs(new_count) - std::abs(old);
    if (fan_in_[post] + delta > limits_.fan_in_limit)
        throw capacity_error("fan-in limit: unit " + std::to_string(post) + " would use " +
                             std::to_string(fan_in_[post] + delta) + " of " + std::to_string(limits_.fan_in_limit) +
                             " synapse slots");
    const int fan_out_delta = delta * static_cast<int>(unit_populations_[post]);
    if (pre.kind == NodeKind::unit && fan_out_[pre.index] + fan_out_delta > limits_.fan_out_limit)
        throw capacity_error("fan-out limit: " + to_string(pre) + " would use " +
                             std::to_string(fan_out_[pre.index] + fan_out_delta) + " of " +
                             std::to_string(limits_.fan_out_limit) + " fan-out connections");

    fan_in_[post] += delta;
    if (pre.kind == NodeKind::unit) fan_out_[pre.index] += fan_out_delta;
    if (new_count == 0)
        counts_.erase({pre, post});
    else
        counts_[{pre, post}] = new_count;
    if (old != new_count)
        audit_.push_back({step, pre, post, old, new_count, (old > 0 && new_count < 0) || (old < 0 && new_count > 0)});
}

int SynapseFabric::fan_in_used(std::uint32_t post) const {
    return fan_in_.at(post);
}

int SynapseFabric::fan_out_used(NodeId pre) const {
    return pre.kind == NodeKind::unit ? fan_out_.at(pre.index) : 0;
}

void SynapseFabric::validate() const {
    std::vector<int> fan_in(unit_populations_.size(), 0);
    std::vector<int> fan_out(unit_populations_.size(), 0);
    for (const auto& [key, c] : counts_) {
        const auto& [pre, post] = key;
        check_endpoint(pre, post);
        if (c == 0 || std::abs(c) > limits_.max_magnitude)
            throw topology_error("fabric: invalid count " + std::to_string(c));
        fan_in[post] += std::abs(c);
        if (pre.kind == NodeKind::unit) fan_out[pre.index] += std::abs(c) * static_cast<int>(unit_populations_[post]);
    }
    for (std::size_t u = 0; u < fan_in.size(); ++u) {
        if (fan_in[u] > limits_.fan_in_limit || fan_in[u] != fan_in_[u])
            throw topology_error("fabric: fan-in invariant broken on unit " + std::to_string(u));
        if (fan_out[u] > limits_.fan_out_limit || fan_out[u] != fan_out_[u])
            throw topology_error("fabric: fan-out invariant broken on unit " + std::to_string(u));
    }
}

SynapseFabric apply_connection_delta(SynapseFabric fabric, NodeId pre, std::uint32_t post, int new_count,
                                     std::uint64_t step) {
    fabric.set(pre, post, new_count, step);
    return fabric;
}

void write_fabric(std::ostream& out, const SynapseFabric& fabric) {
    out << "pre post count\n";
    for (const auto& [key, c] : fabric.connections()) out << to_string(key.first) << " u" << key.second << ' ' << c << '\n';
}

void read_fabric(std::istream& in, SynapseFabric& fabric) {
    std::string line;
    if (!std::getline(in, line) || line != "pre post count") throw schema_error("fabric table: missing header");
    std::vector<Connection> wanted;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string pre, post;
        int c = 0;
        if (!(ls >> pre >> post >> c)) throw schema_error("fabric table: malformed line '" + line + "'");
        const NodeId post_id = parse_node(post);
        if (post_id.kind != NodeKind::unit) throw schema_error("fabric table: post must be a unit");
        wanted.push_back({parse_node(pre), post_id.index, c});
    }
    // Clear first so the new table never trips a transient budget overflow.
    std::vector<SynapseFabric::key_type> existing;
    for (const auto& [key, c] : fabric.connections()) existing.push_back(key);
    for (const auto& [pre, post] : existing) fabric.set(pre, post, 0);
    for (const auto& c : wanted) fabric.set(c.pre, c.post, c.count);
}

void write_audit_log(std::ostream& out, std::span<const AuditEvent> log) {
    for (const auto& e : log)
        out << e.step << ' ' << to_string(e.pre) << " u" << e.post << ' ' << e.old_count << ' ' << e.new_count << ' '
            << (e.type_switch ? 1 : 0) << '\n';
}

// ---------------------------------------------------------------- build

void check_topology(const Topology& topology, const ChipConfig& config) {
    std::size_t neurons = 0;
    for (const auto& u : topology.units) {
        if (u.population == 0) throw topology_error("unit '" + u.name + "' has an empty population");
        if (u.kind == UnitKind::recorder && u.recorder_source >= topology.virtual_channels)
            throw topology_error("recorder '" + u.name + "' relays a missing virtual channel");
        neurons += u.population;
    }
    if (neurons > cores_per_chip * neurons_per_core)
        throw topology_error("chip capacity: " + std::to_string(neurons) + " neurons requested, " +
                             std::to_string(cores_per_chip * neurons_per_core) + " available");

    std::vector<int> fan_in(topology.units.size(), 0);
    std::vector<int> fan_out(topology.units.size(), 0);
    for (const auto& c : topology.connections) {
        if (c.post >= topology.units.size())
            throw topology_error("connection targets missing unit " + std::to_string(c.post));
        const bool pre_ok = c.pre.kind == NodeKind::virtual_input ? c.pre.index < topology.virtual_channels
                                                                   : c.pre.index < topology.units.size();
        if (!pre_ok) throw topology_error("connection from missing endpoint " + to_string(c.pre));
        if (std::abs(c.count) > config.limits.max_magnitude)
            throw capacity_error("magnitude limit: connection " + to_string(c.pre) + "->u" + std::to_string(c.post) +
                                 " has |count| " + std::to_string(std::abs(c.count)) + " > " +
                                 std::to_string(config.limits.max_magnitude));
        fan_in[c.post] += std::abs(c.count);
        if (c.pre.kind == NodeKind::unit)
            fan_out[c.pre.index] += std::abs(c.count) * static_cast<int>(topology.units[c.post].population);
    }
    for (std::uint32_t u = 0; u < topology.units.size(); ++u) {
        if (fan_in[u] > config.limits.fan_in_limit)
            throw capacity_error("fan-in limit: " + unit_label(topology, u) + " requests " + std::to_string(fan_in[u]) +
                                 " of " + std::to_string(config.limits.fan_in_limit) + " synapse slots");
        if (fan_out[u] > config.limits.fan_out_limit)
            throw capacity_error("fan-out limit: " + unit_label(topology, u) + " requests " +
                                 std::to_string(fan_out[u]) + " of " + std::to_string(config.limits.fan_out_limit) +
                                 " fan-out connections");
    }
}

EmulatedNetwork build_network(const Topology& topology, const ChipConfig& config, const MismatchModel& mismatch) {
    config.validate();
    if (!(mismatch.relative_sigma >= 0.0)) throw std::invalid_argument("mismatch sigma must be non-negative");
    check_topology(topology, config);

    EmulatedNetwork net;
    net.config_ = config;
    net.mismatch_ = mismatch;

    std::array<std::size_t, cores_per_chip> core_used{};
    std::vector<std::size_t> pops;
    net.member_offsets_.push_back(0);
    for (std::uint32_t u = 0; u < topology.units.size(); ++u) {
        const UnitSpec& spec = topology.units[u];
        std::size_t core = 0;
        if (spec.core) {
            core = *spec.core;
            if (core >= cores_per_chip) throw topology_error("unit '" + spec.name + "' placed on missing core");
            if (core_used[core] + spec.population > neurons_per_core)
                throw topology_error("core capacity: core " + std::to_string(core) + " cannot hold unit '" +
                                     spec.name + "'");
        } else {
            while (core < cores_per_chip && core_used[core] + spec.population > neurons_per_core) ++core;
            if (core == cores_per_chip) throw topology_error("core capacity: no core can hold unit '" + spec.name + "'");
        }
        core_used[core] += spec.population;

        NeuronUnit unit;
        unit.id = u;
        unit.spec = spec;
        unit.core = core;
        const AdexpParams& base = config.core_params[core];
        const std::uint64_t key = spec.mismatch_key.value_or(u);
        for (std::size_t m = 0; m < spec.population; ++m) {
            AdexpParams p = base;
            auto rng = make_stream(mismatch.seed, (key << 16) | m, stream_purpose::mismatch);
            const double z_tau = standard_normal(rng);
            const double z_gain = standard_normal(rng);
            const double z_thr = standard_normal(rng);
            if (mismatch.relative_sigma > 0.0) {
                p.tau *= std::exp(mismatch.relative_sigma * z_tau);
                p.i_gain *= std::exp(mismatch.relative_sigma * z_gain);
                p.spike_threshold *= std::exp(mismatch.relative_sigma * z_thr);
            }
            unit.member_params.push_back(p);
            unit.member_states.push_back({p.reset_current, std::nullopt, 0.0});
            net.kernels_.push_back(NeuronKernel::adexp(p, config.dt));
        }
        pops.push_back(spec.population);
        net.member_offsets_.push_back(net.member_offsets_.back() + spec.population);
        net.units_.push_back(std::move(unit));
    }

    net.fabric_ = SynapseFabric(config.limits, std::move(pops), topology.virtual_channels);
    for (const auto& c : topology.connections) net.fabric_.set(c.pre, c.post, c.count);
    net.fabric_.clear_audit_log();
    return net;
}

// ---------------------------------------------------------------- execution

SpikeTrain EmulatedNetwork::stimulate(const RateVector& requested_rates, double window, std::uint64_t seed) const {
    if (requested_rates.size() != virtual_channels())
        throw std::invalid_argument("stimulate: expected one rate per virtual channel");
    const std::size_t nv = config_.virtual_population;
    std::vector<double> delivered(virtual_member_channels());
    for (std::size_t v = 0; v < virtual_channels(); ++v)
        for (std::size_t m = 0; m < nv; ++m) delivered[v * nv + m] = config_.generator.apply(requested_rates[v]);
    return poisson_generate(RateVector(std::move(delivered)), window, seed);
}

SpikeTrain EmulatedNetwork::run_window(const SpikeTrain& inputs, double window, std::uint64_t seed) const {
    if (inputs.channel_count() != virtual_member_channels())
        throw std::invalid_argument("run_window: input channel count does not match virtual channels");
    if (std::abs(inputs.window() - window) > 1e-12 * window)
        throw std::invalid_argument("run_window: input window differs from run window");

    const double dt = config_.dt;
    const std::size_t steps = step_count(window, dt);
    const std::size_t n_virtual = virtual_channels();
    const std::size_t n_units = units_.size();
    const std::size_t nv = config_.virtual_population;
    const std::size_t n_sources = n_virtual + n_units;
    const double syn_decay = std::exp(-dt / config_.tau_syn);

    // Traces are unit-mean: each member spike adds 1/(N * tau_syn), so the
    // trace mean equals the mean member rate.
    std::vector<double> trace_increment(n_sources);
    for (std::size_t v = 0; v < n_virtual; ++v) trace_increment[v] = 1.0 / (static_cast<double>(nv) * config_.tau_syn);
    for (std::size_t u = 0; u < n_units; ++u)
        trace_increment[n_virtual + u] = 1.0 / (static_cast<double>(units_[u].population()) * config_.tau_syn);

    struct Incoming {
        std::size_t source;
        double weight;
    };
    std::vector<std::vector<Incoming>> incoming(n_units);
    for (const auto& [key, c] : fabric_.connections()) {
        const auto& [pre, post] = key;
        const std::size_t s = pre.kind == NodeKind::virtual_input ? pre.index : n_virtual + pre.index;
        incoming[post].push_back({s, c * config_.unit_weight_current});
    }

    std::vector<NeuronState> states;
    states.reserve(kernels_.size());
    for (const auto& u : units_) states.insert(states.end(), u.member_states.begin(), u.member_states.end());

    const bool noisy = config_.membrane_noise > 0.0;
    std::vector<rng_engine> noise_rng;
    if (noisy)
        for (std::size_t i = 0; i < kernels_.size(); ++i)
            noise_rng.push_back(make_stream(seed, i, stream_purpose::membrane_noise));
    const double noise_scale = config_.membrane_noise * std::sqrt(dt);

    // Routed virtual drive: member m hears the block of k generators with
    // index m mod (P / k) of each channel. The block trace is normalised to
    // the per-generator rate, so the mean drive matches the pooled trace.
    const bool routed = config_.member_routed_inputs;
    const std::size_t block = config_.generators_per_member;
    const std::size_t blocks = nv / block;
    struct Routing {
        std::size_t population = 0;
        std::vector<std::vector<std::uint32_t>> members_of; // per block
        std::vector<double> trace;                          // channel-major, N per channel
    };
    std::vector<Routing> routing;
    std::vector<std::size_t> routing_of(n_units, 0);
    if (routed) {
        for (std::size_t u = 0; u < n_units; ++u) {
            const std::size_t n = units_[u].population();
            auto it = std::find_if(routing.begin(), routing.end(), [n](const Routing& r) { return r.population == n; });
            if (it == routing.end()) {
                Routing r;
                r.population = n;
                r.members_of.resize(blocks);
                for (std::size_t m = 0; m < n; ++m) r.members_of[m % blocks].push_back(static_cast<std::uint32_t>(m));
                r.trace.assign(n_virtual * n, 0.0);
                routing.push_back(std::move(r));
                it = routing.end() - 1;
            }
            routing_of[u] = static_cast<std::size_t>(it - routing.begin());
        }
    }
    const double block_increment = 1.0 / (static_cast<double>(block) * config_.tau_syn);
    std::vector<double> trace(n_sources, 0.0);
    std::vector<std::uint32_t> source_spikes(n_sources, 0);
    std::vector<std::uint32_t> virtual_fired; // member channels firing this step
    std::vector<SpikeEvent> out;

    const auto in = inputs.events();
    std::size_t next = 0;
    for (std::size_t k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) * dt;
        virtual_fired.clear();
        while (next < in.size() && time_bin(in[next].time, dt, steps) == k) {
            virtual_fired.push_back(in[next].channel);
            ++source_spikes[in[next].channel / nv];
            ++next;
        }
        for (auto& r : routing) {
            for (double& x : r.trace) x *= syn_decay;
            for (std::uint32_t ch : virtual_fired) {
                const std::size_t base = (ch / nv) * r.population;
                for (std::uint32_t m : r.members_of[(ch % nv) / block]) r.trace[base + m] += block_increment;
            }
        }
        // Unit spikes counted here were emitted in step k-1.
        for (std::size_t s = 0; s < n_sources; ++s) {
            trace[s] = trace[s] * syn_decay + source_spikes[s] * trace_increment[s];
            source_spikes[s] = 0;
        }

        for (std::size_t u = 0; u < n_units; ++u) {
            const NeuronUnit& unit = units_[u];
            const std::size_t offset = member_offsets_[u];
            if (unit.spec.kind == UnitKind::recorder) {
                for (std::uint32_t ch : virtual_fired) {
                    if (ch / nv != unit.spec.recorder_source) continue;
                    const std::size_t m = ch % nv;
                    if (m >= unit.population()) continue;
                    out.push_back({t, static_cast<std::uint32_t>(offset + m)});
                    ++source_spikes[n_virtual + u];
                }
                continue;
            }
            double current = unit.spec.bias_current;
            for (const auto& in_conn : incoming[u])
                if (!routed || in_conn.source >= n_virtual) current += in_conn.weight * trace[in_conn.source];
            for (std::size_t m = 0; m < unit.population(); ++m) {
                const std::size_t i = offset + m;
                double member_current = current;
                if (routed) {
                    const Routing& r = routing[routing_of[u]];
                    for (const auto& in_conn : incoming[u])
                        if (in_conn.source < n_virtual)
                            member_current += in_conn.weight * r.trace[in_conn.source * r.population + m];
                }
                if (noisy) states[i].membrane += noise_scale * standard_normal(noise_rng[i]);
                if (kernels_[i].step(states[i], member_current)) {
                    out.push_back({t, static_cast<std::uint32_t>(i)});
                    ++source_spikes[n_virtual + u];
                }
            }
        }
    }
    return SpikeTrain(member_channels(), window, std::move(out));
}

void EmulatedNetwork::set_bias_current(std::uint32_t unit, double current) {
    if (!std::isfinite(current)) throw std::invalid_argument("set_bias_current: non-finite current");
    units_.at(unit).spec.bias_current = current;
}

RateVector EmulatedNetwork::unit_rates(const SpikeTrain& output) const {
    if (output.channel_count() != member_channels()) throw std::invalid_argument("unit_rates: not a network output");
    const auto counts = output.counts();
    std::vector<double> rates(units_.size(), 0.0);
    for (std::size_t u = 0; u < units_.size(); ++u) {
        std::size_t total = 0;
        for (std::size_t i = member_offsets_[u]; i < member_offsets_[u + 1]; ++i) total += counts[i];
        rates[u] = static_cast<double>(total) / (static_cast<double>(units_[u].population()) * output.window());
    }
    return RateVector(std::move(rates));
}

RateVector EmulatedNetwork::virtual_rates(const SpikeTrain& inputs) const {
    if (inputs.channel_count() != virtual_member_channels())
        throw std::invalid_argument("virtual_rates: not a stimulus train");
    const auto counts = inputs.counts();
    const std::size_t nv = config_.virtual_population;
    std::vector<double> rates(virtual_channels(), 0.0);
    for (std::size_t i = 0; i < counts.size(); ++i) rates[i / nv] += static_cast<double>(counts[i]);
    for (double& r : rates) r /= static_cast<double>(nv) * inputs.window();
    return RateVector(std::move(rates));
}

SpikeTrain EmulatedNetwork::unit_train(const SpikeTrain& output, std::uint32_t unit) const {
    const std::size_t lo = member_offsets_.at(unit);
    const std::size_t hi = member_offsets_.at(unit + 1);
    std::vector<SpikeEvent> events;
    for (const auto& e : output.events())
        if (e.channel >= lo && e.channel < hi) events.push_back({e.time, 0});
    return SpikeTrain(1, output.window(), std::move(events));
}

} // namespace sfc
