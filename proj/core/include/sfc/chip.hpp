#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfc/neuron.hpp"
#include "sfc/spike_train.hpp"

namespace sfc {

inline constexpr std::size_t cores_per_chip = 4;
inline constexpr std::size_t neurons_per_core = 256;

// Presynaptic endpoints are either virtual (host-driven generator) channels
// or on-chip units. Postsynaptic endpoints are always units.
enum class NodeKind : std::uint8_t { virtual_input = 0, unit = 1 };

struct NodeId {
    NodeKind kind = NodeKind::unit;
    std::uint32_t index = 0;

    friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

inline NodeId virtual_node(std::uint32_t i) { return {NodeKind::virtual_input, i}; }
inline NodeId unit_node(std::uint32_t i) { return {NodeKind::unit, i}; }

// "v3" for virtual channel 3, "u2" for unit 2.
std::string to_string(NodeId id);
NodeId parse_node(const std::string& text);

// Fabrication-time parameter jitter; drawn once per neuron and parameter.
struct MismatchModel {
    double relative_sigma = 0.1;
    std::uint64_t seed = 0;
};

struct FabricLimits {
    int max_magnitude = 63;   // 6-bit magnitude per signed connection
    int fan_in_limit = 64;    // CAM slots per postsynaptic neuron
    int fan_out_limit = 1024; // per presynaptic on-chip neuron
};

// Rate transfer of the host-programmed spike generators:
// delivered = max(0, gain * requested + offset).
struct GeneratorTransfer {
    double gain = 1.0;
    double offset = 0.0;

    double apply(double requested) const noexcept;
};

struct ChipConfig {
    std::array<AdexpParams, cores_per_chip> core_params{};
    double unit_weight_current = 1e-3; // drive per discrete synapse per unit-mean spike trace (current * s)
    double tau_syn = 0.005;
    double dt = default_dt;
    std::size_t population = 10;         // neurons per logical unit
    std::size_t virtual_population = 100; // generators per virtual channel
    std::size_t generators_per_member = 10; // routed block size; divides virtual_population
    FabricLimits limits{};
    GeneratorTransfer generator{};
    double membrane_noise = 0.0; // additive membrane noise, std per sqrt(second); 0 disables
    // Each member listens to its own block of generators_per_member
    // generators of every virtual channel, so members see independent input
    // realizations and unit-rate noise falls with population size. When
    // false every member sees the pooled channel.
    bool member_routed_inputs = true;

    void validate() const;
};

enum class UnitKind : std::uint8_t {
    neuron,
    recorder, // member m relays generator m of its source virtual channel
};

struct UnitSpec {
    std::string name;
    std::size_t population = 10;
    std::optional<std::size_t> core{}; // first-fit placement when unset
    UnitKind kind = UnitKind::neuron;
    double bias_current = 0.0;
    std::uint32_t recorder_source = 0;
    // Keys the mismatch draws; lets a test bench replicate the devices of a
    // unit from another network. Defaults to the unit index.
    std::optional<std::uint64_t> mismatch_key{};
};

struct Connection {
    NodeId pre;
    std::uint32_t post = 0;
    int count = 0;
};

// Topology description consumed by build_network.
struct Topology {
    std::size_t virtual_channels = 0;
    std::vector<UnitSpec> units;
    std::vector<Connection> connections;

    std::uint32_t add_virtual();
    std::uint32_t add_unit(UnitSpec spec);
    void connect(NodeId pre, std::uint32_t post, int count);
};

struct AuditEvent {
    std::uint64_t step = 0;
    NodeId pre;
    std::uint32_t post = 0;
    int old_count = 0;
    int new_count = 0;
    bool type_switch = false;

    friend bool operator==(const AuditEvent&, const AuditEvent&) = default;
};

// Signed integer synapse counts between endpoints. The sign selects the
// synapse type (positive excitatory, negative inhibitory). Every mutation is
// validated against the magnitude, fan-in and fan-out budgets; a rejected
// mutation leaves the fabric untouched.
class SynapseFabric {
public:
    using key_type = std::pair<NodeId, std::uint32_t>;

    SynapseFabric() = default;
    SynapseFabric(FabricLimits limits, std::vector<std::size_t> unit_populations, std::size_t virtual_channels);

    const FabricLimits& limits() const noexcept { return limits_; }
    std::size_t unit_count() const noexcept { return unit_populations_.size(); }
    std::size_t virtual_channels() const noexcept { return virtual_channels_; }

    int count(NodeId pre, std::uint32_t post) const;
    void set(NodeId pre, std::uint32_t post, int count, std::uint64_t step = 0);

    int fan_in_used(std::uint32_t post) const;
    // Synapse slots used by one presynaptic neuron (each unit-level synapse
    // fans out to every member of the post population). Virtual channels are
    // off-chip and report 0.
    int fan_out_used(NodeId pre) const;

    const std::map<key_type, int>& connections() const noexcept { return counts_; }
    std::span<const AuditEvent> audit_log() const noexcept { return audit_; }
    void clear_audit_log() { audit_.clear(); }

    // Re-checks every invariant; throws topology_error on violation.
    void validate() const;

    friend bool operator==(const SynapseFabric& a, const SynapseFabric& b) { return a.counts_ == b.counts_; }

private:
    void check_endpoint(NodeId pre, std::uint32_t post) const;

    FabricLimits limits_{};
    std::vector<std::size_t> unit_populations_;
    std::size_t virtual_channels_ = 0;
    std::map<key_type, int> counts_;
    std::vector<int> fan_in_;
    std::vector<int> fan_out_;
    std::vector<AuditEvent> audit_;
};

// Returns a copy with (pre, post) replaced by new_count.
SynapseFabric apply_connection_delta(SynapseFabric fabric, NodeId pre, std::uint32_t post, int new_count,
                                     std::uint64_t step = 0);

// Table `pre post count`, one connection per line, zero counts omitted.
void write_fabric(std::ostream& out, const SynapseFabric& fabric);
// Reads a table written by write_fabric into an existing fabric (counts are
// replaced; unlisted connections become 0).
void read_fabric(std::istream& in, SynapseFabric& fabric);
void write_audit_log(std::ostream& out, std::span<const AuditEvent> log);

struct NeuronUnit {
    std::uint32_t id = 0;
    UnitSpec spec;
    std::size_t core = 0;
    std::vector<AdexpParams> member_params;
    std::vector<NeuronState> member_states; // state at the start of every window

    std::size_t population() const noexcept { return member_params.size(); }
};

// Checks chip capacity and per-unit fan-in/fan-out of a topology before it
// is built. Throws topology_error (capacity_error for synapse budgets).
void check_topology(const Topology& topology, const ChipConfig& config);

class EmulatedNetwork {
public:
    const ChipConfig& config() const noexcept { return config_; }
    const MismatchModel& mismatch() const noexcept { return mismatch_; }

    std::size_t unit_count() const noexcept { return units_.size(); }
    std::size_t virtual_channels() const noexcept { return fabric_.virtual_channels(); }
    const NeuronUnit& unit(std::uint32_t i) const { return units_.at(i); }
    std::span<const NeuronUnit> units() const noexcept { return units_; }

    SynapseFabric& fabric() noexcept { return fabric_; }
    void set_bias_current(std::uint32_t unit, double current);
    const SynapseFabric& fabric() const noexcept { return fabric_; }

    // Member-resolution channel layout of run_window output.
    std::size_t member_offset(std::uint32_t unit) const { return member_offsets_.at(unit); }
    std::size_t member_channels() const noexcept { return member_offsets_.back(); }
    std::size_t virtual_member_channels() const noexcept { return virtual_channels() * config_.virtual_population; }

    // Programs the generators: every virtual channel becomes a population of
    // independent Poisson generators at the delivered rate.
    SpikeTrain stimulate(const RateVector& requested_rates, double window, std::uint64_t seed) const;

    // Steps every member neuron over one window from the reset state and
    // returns all member spikes.
    SpikeTrain run_window(const SpikeTrain& inputs, double window, std::uint64_t seed) const;

    // Mean member rate per unit / per virtual channel.
    RateVector unit_rates(const SpikeTrain& output) const;
    RateVector virtual_rates(const SpikeTrain& inputs) const;

    // Spikes of one unit collapsed to a single channel.
    SpikeTrain unit_train(const SpikeTrain& output, std::uint32_t unit) const;

private:
    friend EmulatedNetwork build_network(const Topology&, const ChipConfig&, const MismatchModel&);

    ChipConfig config_{};
    MismatchModel mismatch_{};
    std::vector<NeuronUnit> units_;
    std::vector<NeuronKernel> kernels_; // flattened members
    std::vector<std::size_t> member_offsets_;
    SynapseFabric fabric_;
};

EmulatedNetwork build_network(const Topology& topology, const ChipConfig& config, const MismatchModel& mismatch);

} // namespace sfc
